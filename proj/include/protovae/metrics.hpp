#pragma once

// Disentanglement metrics: FactorVAE vote accuracy, MIG and DCI.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "protovae/config.hpp"
#include "protovae/rng.hpp"
#include "protovae/synth_data.hpp"

namespace protovae {

// Codes (B, d) for a batch of dataset indices.
using RepresentationFn = std::function<Tensor<double>(std::span<const std::int64_t>)>;

// Renders the indexed images and encodes them in chunks.
RepresentationFn image_representation(const GroundTruthDataset& ds,
                                      std::function<Tensor<double>(const ImageBatch&)> encode, int chunk = 256);
// The normalized ground-truth factor values themselves.
RepresentationFn factor_representation(const GroundTruthDataset& ds);

struct FactorVaeResult {
  double score = 0;
  double chance = 0;  // max class frequency of the eval votes
  std::vector<int> active_dims;
  std::string warning;
};

FactorVaeResult factorvae_metric(const GroundTruthDataset& ds, const RepresentationFn& rep, const EvalConfig& cfg,
                                 Rng& rng);

// Equal-occupancy discretization: bin = min(bins - 1, floor(bins * #(values < v) / n)).
std::vector<int> equal_occupancy_bins(std::span<const double> values, int bins);
// Mutual information (nats) of two discrete label vectors.
double discrete_mutual_info(std::span<const int> a, std::span<const int> b);
double discrete_entropy(std::span<const int> a);

double mig(const GroundTruthDataset& ds, const RepresentationFn& rep, int n_samples, int n_bins, Rng& rng);

struct DciResult {
  double disentanglement = 0;
  double completeness = 0;
  double informativeness = 0;
  Tensor<double> importance;  // (d, F) over the scored factors, columns sum to 1
  std::vector<int> factors;   // scored factor ids
};

// D and C from an importance matrix (d rows, F columns); entropies use base = matrix side.
void dci_scores(const Tensor<double>& importance, double& disentanglement, double& completeness);
DciResult dci(const GroundTruthDataset& ds, const RepresentationFn& rep, const EvalConfig& cfg, Rng& rng);

// Gradient-boosted trees with a softmax loss over histogram-binned features.
struct BoostedTrees {
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0;
    int left = -1;
    int right = -1;
    double value = 0;
  };
  using Tree = std::vector<Node>;

  int classes = 0;
  std::vector<double> base_score;
  std::vector<std::vector<Tree>> rounds;  // [round][class]
  std::vector<double> importance;         // accumulated split gain per feature

  // x is (n, features).
  static BoostedTrees fit(const Tensor<double>& x, std::span<const int> y, int classes, int rounds, int depth,
                          double learning_rate, int bins);
  std::vector<int> predict(const Tensor<double>& x) const;
};

struct LogisticModel {
  Tensor<double> weights;  // (classes, features) on standardized inputs
  std::vector<double> bias;
  std::vector<double> mean;
  std::vector<double> scale;

  static LogisticModel fit(const Tensor<double>& x, std::span<const int> y, int classes);
  std::vector<int> predict(const Tensor<double>& x) const;
  std::vector<double> importance() const;  // sum over classes of |w|
};

struct MetricReport {
  double factorvae = 0;
  double mig = 0;
  double dci_disentanglement = 0;
  double dci_completeness = 0;
  double dci_informativeness = 0;
  EvalConfig config;
  std::vector<std::string> warnings;

  // "key: value" lines, scores first, then the echoed evaluation settings.
  std::string to_text() const;
};

MetricReport evaluate(const GroundTruthDataset& ds, const RepresentationFn& rep, const EvalConfig& cfg);

}  // namespace protovae
