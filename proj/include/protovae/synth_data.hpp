#pragma once

// Ground-truth-factor image datasets: a procedural sprite renderer and an
// adapter for factor-labelled npz archives. Every factor combination maps to
// exactly one image through a mixed-radix index (last factor fastest).

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "protovae/rng.hpp"
#include "protovae/tensor.hpp"

namespace protovae {

struct FactorSpec {
  std::string name;
  int cardinality = 1;
  std::vector<double> values;  // i / (cardinality - 1); 0.5 when cardinality is 1
};

FactorSpec make_factor(std::string name, int cardinality);

std::int64_t factors_to_index(std::span<const int> factors, std::span<const FactorSpec> specs);
std::vector<int> index_to_factors(std::int64_t index, std::span<const FactorSpec> specs);

class GroundTruthDataset {
 public:
  virtual ~GroundTruthDataset() = default;

  const std::vector<FactorSpec>& factors() const { return factors_; }
  int num_factors() const { return static_cast<int>(factors_.size()); }
  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  const std::string& renderer_id() const { return renderer_id_; }
  std::uint64_t seed() const { return seed_; }
  std::int64_t size() const;
  std::size_t image_size() const { return static_cast<std::size_t>(height_) * width_ * channels_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

  // Writes the (H, W, C) image with the given mixed-radix index.
  virtual void render(std::int64_t index, std::span<float> out) const = 0;
  ImageBatch images(std::span<const std::int64_t> indices) const;

 protected:
  std::vector<FactorSpec> factors_;
  int height_ = 0;
  int width_ = 0;
  int channels_ = 1;
  std::string renderer_id_;
  std::uint64_t seed_ = 0;
  std::vector<std::string> warnings_;
};

// Sprite geometry is in units of the canvas side. Factors that are not given a
// cardinality stay fixed (square, mid scale, centred) and are not reported.
struct ToyConfig {
  int side = 32;
  std::optional<int> shapes;  // at most 3: square, ellipse, triangle
  std::optional<int> scales;
  std::optional<int> pos_x;
  std::optional<int> pos_y;
  std::uint64_t seed = 0;
  double pos_min = 0.25;  // sprite centre range
  double pos_max = 0.75;
  double scale_min = 0.08;  // sprite half-extent range
  double scale_max = 0.16;
  bool smooth = false;  // 4x4 supersampled coverage instead of hard edges
  int channels = 1;     // 3 renders a fixed colour per shape
};

// Parses "key = value" lines (# comments allowed). Unknown keys are rejected.
ToyConfig parse_toy_config(const std::string& text);
std::string format_toy_config(const ToyConfig& config);

std::unique_ptr<GroundTruthDataset> make_toy_grid(const ToyConfig& config);

// Reads an npz archive with arrays "images" (or "imgs") and "factor_classes"
// (or "latents_classes"). 8-bit images are divided by 255.
std::unique_ptr<GroundTruthDataset> load_archive(const std::string& path);

std::vector<std::int64_t> sample_indices(const GroundTruthDataset& ds, int n, Rng& rng);
// Indices whose factor_id-th factor equals value; the other factors are uniform.
std::vector<std::int64_t> sample_fixed_factor_indices(const GroundTruthDataset& ds, int factor_id, int value, int n,
                                                      Rng& rng);
ImageBatch sample_fixed_factor(const GroundTruthDataset& ds, int factor_id, int value, int n, Rng& rng);

}  // namespace protovae
