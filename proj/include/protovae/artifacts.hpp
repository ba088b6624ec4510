#pragma once

// Outputs derived from a trained model: posterior-mean representations,
// evaluation reports, latent traversal grids and pair-embedding exports.

#include <cstdint>
#include <string>
#include <vector>

#include "protovae/config.hpp"
#include "protovae/metrics.hpp"
#include "protovae/synth_data.hpp"
#include "protovae/trainer.hpp"

namespace protovae {

// Posterior means for the given images, widened to double.
template <typename T>
Tensor<double> posterior_means(const Encoder<T>& encoder, const ImageBatch& images);
template <typename T>
RepresentationFn encoder_representation(const GroundTruthDataset& ds, const Encoder<T>& encoder);

// Per-dimension KL averaged over n uniformly sampled dataset images.
template <typename T>
std::vector<double> dataset_kl_per_dim(const GroundTruthDataset& ds, const Encoder<T>& encoder, int n, Rng& rng);

// Rejects a dataset whose image shape differs from the one the model was built for.
void check_dataset_matches(const GroundTruthDataset& ds, const ModelDims& dims);

MetricReport evaluate_checkpoint(const std::string& checkpoint, const GroundTruthDataset& ds, const EvalConfig& cfg);

// 8-bit image grid of equally sized tiles.
struct ImageGrid {
  int rows = 0;
  int cols = 0;
  int tile_h = 0;
  int tile_w = 0;
  int channels = 1;
  std::vector<std::uint8_t> pixels;   // (rows*tile_h, cols*tile_w, channels)
  std::vector<std::string> comments;  // written as header comments

  int height() const { return rows * tile_h; }
  int width() const { return cols * tile_w; }
  // Binary PGM (1 channel) or PPM (3 channels).
  std::string encode_pnm() const;
};

struct TraversalRow {
  int seed_image = 0;  // dataset index
  int dim = 0;
  double kl = 0;
};

struct Traversal {
  ImageGrid grid;
  std::vector<double> kl_per_dim;
  std::vector<TraversalRow> rows;  // one per traversal row, after the original/reconstruction rows
};

// Row 0: seed images. Row 1: reconstructions from the posterior mean. Then,
// per seed image, one row per dimension (descending KL unless dims are given)
// with that coordinate set to `steps` evenly spaced values in [lo, hi].
template <typename T>
Traversal traverse(const Models<T>& models, const GroundTruthDataset& ds, const TraverseConfig& cfg);

struct PairEmbeddingExport {
  EmbedMode mode = EmbedMode::kGroundTruth;
  double lambda = 0;  // prototypical weight of the exporting run
  std::uint64_t seed = 0;
  Tensor<double> embeddings;           // (n, m)
  std::vector<int> factor;             // changed factor, -1 in synthetic mode
  std::vector<int> dim;                // intervened dimension, -1 in ground-truth mode
  std::vector<std::int64_t> first;     // dataset index of the first image
  std::vector<std::int64_t> second;    // second image (ground truth) or donor example (synthetic)

  // Comma separated with a header line; metadata as leading '#' lines.
  std::string to_csv() const;
};

// Distinct ordered pairs that differ in exactly one factor, the factor chosen
// through a uniform draw over all such pairs.
struct FactorPair {
  std::int64_t first = 0;
  std::int64_t second = 0;
  int factor = 0;
};
std::int64_t count_factor_pairs(const GroundTruthDataset& ds);
std::vector<FactorPair> sample_factor_pairs(const GroundTruthDataset& ds, std::int64_t n, Rng& rng);

template <typename T>
PairEmbeddingExport export_pair_embeddings(const Models<T>& models, const GroundTruthDataset& ds,
                                           const EmbedConfig& cfg, double lambda);

// Accuracy of assigning each row to the nearest class mean. Means are fitted on
// even rows and scored on odd rows.
double nearest_prototype_accuracy(const Tensor<double>& embeddings, std::span<const int> labels);

}  // namespace protovae
