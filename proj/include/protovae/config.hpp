#pragma once

// Run configuration shared by the library and the command-line tool. Keys are
// dotted section.name pairs, e.g. "weights.alpha" or "dims.latent_dim".

#include <cstdint>
#include <string>
#include <vector>

#include "protovae/proto_metric.hpp"
#include "protovae/synth_data.hpp"
#include "protovae/vae.hpp"

namespace protovae {

struct LossWeights {
  double alpha = 1.0;   // adversarial term
  double lambda = 1.0;  // prototypical term
  double kappa = 1.0;   // isometry term
};

enum class Precision { kFloat32, kFloat64 };

struct TrainConfig {
  ModelDims dims;  // image shape is taken from the dataset
  LossWeights weights;
  int batch_size = 32;
  int steps = 15000;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double disc_lr = 1e-4;
  double disc_beta1 = 0.5;
  double disc_beta2 = 0.9;
  std::uint64_t seed = 0;
  Precision precision = Precision::kFloat32;
  bool kl_weight_gradient = false;
  Distance distance = Distance::kSquaredEuclidean;
  int log_every = 50;
  int checkpoint_every = 1000;

  void validate() const;
  ProtoOptions proto_options() const { return {distance, kl_weight_gradient}; }
};

struct DataConfig {
  std::string archive;  // npz path; empty selects the procedural toy data
  ToyConfig toy;
};

enum class DciPredictor { kBoostedTrees, kLogistic };

struct EvalConfig {
  std::uint64_t seed = 0;
  int global_samples = 10000;
  int train_votes = 800;
  int eval_votes = 400;
  int batch_per_vote = 64;
  double prune_threshold = 0.05;
  int mig_samples = 10000;
  int mig_bins = 20;
  int dci_train = 4000;
  int dci_test = 2000;
  DciPredictor dci_predictor = DciPredictor::kBoostedTrees;
  int gbdt_rounds = 100;
  int gbdt_depth = 2;
  double gbdt_lr = 0.1;
  int gbdt_bins = 32;
};

struct TraverseConfig {
  std::vector<int> seed_images{0};  // dataset indices
  double lo = -2.0;
  double hi = 2.0;
  int steps = 10;
  std::vector<int> dims;  // empty: all dimensions by descending KL
  int kl_samples = 1000;
  std::uint64_t seed = 0;
};

enum class EmbedMode { kGroundTruth, kSynthetic };

struct EmbedConfig {
  EmbedMode mode = EmbedMode::kGroundTruth;
  int n = 1000;
  std::uint64_t seed = 0;
};

struct RunConfig {
  DataConfig data;
  TrainConfig train;
  EvalConfig eval;
  TraverseConfig traverse;
  EmbedConfig embed;
};

const std::vector<std::string>& config_keys();
// Throws std::invalid_argument for unknown keys (listing the valid ones) or bad values.
void set_config_value(RunConfig& config, const std::string& key, const std::string& value);
RunConfig parse_run_config(const std::string& text);
// Every key, one "key = value" line each; parses back to an equal configuration.
std::string format_run_config(const RunConfig& config);

std::unique_ptr<GroundTruthDataset> make_dataset(const DataConfig& config);
// Model dimensions with the image shape of the dataset filled in.
ModelDims model_dims_for(const TrainConfig& config, const GroundTruthDataset& ds);

}  // namespace protovae
