#include "protovae/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

#include "protovae/keyvalue.hpp"
#include "protovae/npz.hpp"

namespace protovae {

FactorSpec make_factor(std::string name, int cardinality) {
  if (cardinality < 1) throw std::invalid_argument("factor " + name + ": cardinality must be >= 1");
  FactorSpec f{std::move(name), cardinality, {}};
  for (int i = 0; i < cardinality; ++i) {
    f.values.push_back(cardinality == 1 ? 0.5 : static_cast<double>(i) / (cardinality - 1));
  }
  return f;
}

std::int64_t factors_to_index(std::span<const int> factors, std::span<const FactorSpec> specs) {
  if (factors.size() != specs.size()) {
    throw std::invalid_argument("expected " + std::to_string(specs.size()) + " factor values, got " +
                                std::to_string(factors.size()));
  }
  std::int64_t index = 0;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (factors[i] < 0 || factors[i] >= specs[i].cardinality) {
      throw std::out_of_range("factor " + specs[i].name + " value " + std::to_string(factors[i]) + " outside [0, " +
                              std::to_string(specs[i].cardinality) + ")");
    }
    index = index * specs[i].cardinality + factors[i];
  }
  return index;
}

std::vector<int> index_to_factors(std::int64_t index, std::span<const FactorSpec> specs) {
  std::int64_t total = 1;
  for (const auto& s : specs) total *= s.cardinality;
  if (index < 0 || index >= total) {
    throw std::out_of_range("index " + std::to_string(index) + " outside [0, " + std::to_string(total) + ")");
  }
  std::vector<int> out(specs.size());
  for (std::size_t i = specs.size(); i-- > 0;) {
    out[i] = static_cast<int>(index % specs[i].cardinality);
    index /= specs[i].cardinality;
  }
  return out;
}

std::int64_t GroundTruthDataset::size() const {
  std::int64_t n = 1;
  for (const auto& f : factors_) n *= f.cardinality;
  return n;
}

ImageBatch GroundTruthDataset::images(std::span<const std::int64_t> indices) const {
  ImageBatch out({static_cast<int>(indices.size()), height_, width_, channels_});
  for (std::size_t i = 0; i < indices.size(); ++i) render(indices[i], out.row(static_cast<int>(i)));
  return out;
}

namespace {

const std::vector<std::string> kToyKeys = {"side",  "shapes",    "scales",    "pos_x",  "pos_y",   "seed",
                                           "pos_min", "pos_max", "scale_min", "scale_max", "smooth", "channels"};

// RGB colour per shape; grayscale renders use intensity 1.
constexpr float kShapeColours[3][3] = {{1.0f, 0.35f, 0.2f}, {0.2f, 0.8f, 0.35f}, {0.3f, 0.45f, 1.0f}};

class ToyDataset final : public GroundTruthDataset {
 public:
  explicit ToyDataset(const ToyConfig& c) : config_(c) {
    if (c.side < 4) throw std::invalid_argument("toy data: side must be >= 4");
    if (c.channels != 1 && c.channels != 3) throw std::invalid_argument("toy data: channels must be 1 or 3");
    auto add = [&](const char* name, const std::optional<int>& card, int* slot) {
      if (!card) return;
      if (*card < 1) throw std::invalid_argument(std::string("toy data: ") + name + " cardinality must be >= 1");
      *slot = static_cast<int>(factors_.size());
      factors_.push_back(make_factor(name, *card));
    };
    add("shape", c.shapes, &shape_slot_);
    add("scale", c.scales, &scale_slot_);
    add("pos_x", c.pos_x, &x_slot_);
    add("pos_y", c.pos_y, &y_slot_);
    if (c.shapes && *c.shapes > 3) throw std::invalid_argument("toy data: at most 3 shapes are available");
    if (!(c.pos_min <= c.pos_max) || !(c.scale_min > 0 && c.scale_min <= c.scale_max)) {
      throw std::invalid_argument("toy data: position and scale ranges must be ordered and scales positive");
    }
    const double lo = c.side * (c.pos_min - c.scale_max);
    const double hi = c.side * (c.pos_max + c.scale_max);
    if (lo < 0 || hi > c.side) {
      throw std::invalid_argument("toy data: sprite extent [" + kv::format_double(lo) + ", " +
                                  kv::format_double(hi) + "] px exceeds the " + std::to_string(c.side) +
                                  " px canvas at the largest scale and extreme positions");
    }
    height_ = width_ = c.side;
    channels_ = c.channels;
    renderer_id_ = c.smooth ? "toy-sprite-smooth" : "toy-sprite";
    seed_ = c.seed;
  }

  void render(std::int64_t index, std::span<float> out) const override {
    const auto f = index_to_factors(index, factors_);
    auto value = [&](int slot) { return slot < 0 ? 0.5 : factors_[slot].values[f[slot]]; };
    const int shape = shape_slot_ < 0 ? 0 : f[shape_slot_];
    const double side = config_.side;
    const double half = side * (config_.scale_min + value(scale_slot_) * (config_.scale_max - config_.scale_min));
    const double cx = side * (config_.pos_min + value(x_slot_) * (config_.pos_max - config_.pos_min));
    const double cy = side * (config_.pos_min + value(y_slot_) * (config_.pos_max - config_.pos_min));
    const int sub = config_.smooth ? 4 : 1;
    for (int r = 0; r < config_.side; ++r) {
      for (int c = 0; c < config_.side; ++c) {
        int hits = 0;
        for (int sr = 0; sr < sub; ++sr) {
          for (int sc = 0; sc < sub; ++sc) {
            const double dx = c + (sc + 0.5) / sub - cx;
            const double dy = r + (sr + 0.5) / sub - cy;
            hits += inside(shape, dx, dy, half);
          }
        }
        const float cover = static_cast<float>(hits) / static_cast<float>(sub * sub);
        float* px = out.data() + (static_cast<std::size_t>(r) * config_.side + c) * channels_;
        if (channels_ == 1) {
          px[0] = cover;
        } else {
          for (int ch = 0; ch < 3; ++ch) px[ch] = cover * kShapeColours[shape][ch];
        }
      }
    }
  }

 private:
  static bool inside(int shape, double dx, double dy, double half) {
    switch (shape) {
      case 0:
        return std::abs(dx) <= half && std::abs(dy) <= half;
      case 1: {
        const double a = dx / half;
        const double b = dy / (0.6 * half);
        return a * a + b * b <= 1.0;
      }
      default:  // apex up, base at dy = +half
        return dy >= -half && dy <= half && std::abs(dx) <= 0.5 * (dy + half);
    }
  }

  ToyConfig config_;
  int shape_slot_ = -1;
  int scale_slot_ = -1;
  int x_slot_ = -1;
  int y_slot_ = -1;
};

class ArchiveDataset final : public GroundTruthDataset {
 public:
  ArchiveDataset(const std::string& path) {
    npz::Reader reader(path);
    auto pick = [&](std::initializer_list<const char*> names) -> std::string {
      for (const char* n : names)
        if (reader.contains(n)) return n;
      std::string avail;
      for (const auto& n : reader.names()) avail += (avail.empty() ? "" : ", ") + n;
      std::string wanted;
      for (const char* n : names) wanted += (wanted.empty() ? "" : "/") + std::string(n);
      throw std::invalid_argument("archive " + path + " has no array named " + wanted + "; available: " + avail);
    };
    const npz::Array images = reader.read(pick({"images", "imgs"}));
    const npz::Array classes = reader.read(pick({"factor_classes", "latents_classes"}));

    if (images.shape.size() != 3 && images.shape.size() != 4) {
      throw std::invalid_argument("archive images must be N x H x W or N x H x W x C");
    }
    if (classes.shape.size() != 2) throw std::invalid_argument("archive factor classes must be N x F");
    const std::int64_t n = images.shape[0];
    if (classes.shape[0] != n) {
      throw std::invalid_argument("archive row mismatch: " + std::to_string(n) + " images but " +
                                  std::to_string(classes.shape[0]) + " factor rows");
    }
    height_ = static_cast<int>(images.shape[1]);
    width_ = static_cast<int>(images.shape[2]);
    channels_ = images.shape.size() == 4 ? static_cast<int>(images.shape[3]) : 1;
    renderer_id_ = "archive:" + path;

    const auto cls = classes.as_int();
    const int nf = static_cast<int>(classes.shape[1]);
    for (int f = 0; f < nf; ++f) {
      std::int64_t max = 0;
      for (std::int64_t r = 0; r < n; ++r) {
        const std::int64_t v = cls[r * nf + f];
        if (v < 0) throw std::invalid_argument("archive factor classes must be non-negative");
        max = std::max(max, v);
      }
      factors_.push_back(make_factor("factor" + std::to_string(f), static_cast<int>(max + 1)));
      if (max == 0) warnings_.push_back("factor" + std::to_string(f) + " is constant; cardinality 1");
    }
    if (size() != n) {
      throw std::invalid_argument("archive has " + std::to_string(n) + " rows but the factor product is " +
                                  std::to_string(size()) + "; every factor combination must appear exactly once");
    }
    row_of_.assign(static_cast<std::size_t>(n), -1);
    std::vector<int> f(nf);
    for (std::int64_t r = 0; r < n; ++r) {
      for (int j = 0; j < nf; ++j) f[j] = static_cast<int>(cls[r * nf + j]);
      auto& slot = row_of_[factors_to_index(f, factors_)];
      if (slot >= 0) throw std::invalid_argument("archive repeats factor combination at row " + std::to_string(r));
      slot = r;
    }

    const double scale = images.dtype == "|u1" ? 1.0 / 255.0 : 1.0;
    const auto raw = images.as_double();
    pixels_.resize(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
      const double v = raw[i] * scale;
      if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("archive pixel values must lie in [0, 1]");
      pixels_[i] = static_cast<float>(v);
    }
  }

  void render(std::int64_t index, std::span<float> out) const override {
    const std::size_t n = image_size();
    const float* src = pixels_.data() + static_cast<std::size_t>(row_of_.at(index)) * n;
    std::copy(src, src + n, out.begin());
  }

 private:
  std::vector<std::int64_t> row_of_;
  std::vector<float> pixels_;
};

}  // namespace

ToyConfig parse_toy_config(const std::string& text) {
  ToyConfig c;
  for (const auto& e : kv::parse(text)) {
    kv::reject_unknown(e.key, kToyKeys, "toy data");
    if (e.key == "side") c.side = kv::to_int(e);
    else if (e.key == "shapes") c.shapes = kv::to_int(e);
    else if (e.key == "scales") c.scales = kv::to_int(e);
    else if (e.key == "pos_x") c.pos_x = kv::to_int(e);
    else if (e.key == "pos_y") c.pos_y = kv::to_int(e);
    else if (e.key == "seed") c.seed = kv::to_u64(e);
    else if (e.key == "pos_min") c.pos_min = kv::to_double(e);
    else if (e.key == "pos_max") c.pos_max = kv::to_double(e);
    else if (e.key == "scale_min") c.scale_min = kv::to_double(e);
    else if (e.key == "scale_max") c.scale_max = kv::to_double(e);
    else if (e.key == "smooth") c.smooth = kv::to_bool(e);
    else if (e.key == "channels") c.channels = kv::to_int(e);
  }
  return c;
}

std::string format_toy_config(const ToyConfig& c) {
  std::string s = "side = " + std::to_string(c.side) + "\n";
  auto opt = [&](const char* k, const std::optional<int>& v) {
    if (v) s += std::string(k) + " = " + std::to_string(*v) + "\n";
  };
  opt("shapes", c.shapes);
  opt("scales", c.scales);
  opt("pos_x", c.pos_x);
  opt("pos_y", c.pos_y);
  s += "seed = " + std::to_string(c.seed) + "\n";
  s += "pos_min = " + kv::format_double(c.pos_min) + "\n";
  s += "pos_max = " + kv::format_double(c.pos_max) + "\n";
  s += "scale_min = " + kv::format_double(c.scale_min) + "\n";
  s += "scale_max = " + kv::format_double(c.scale_max) + "\n";
  s += std::string("smooth = ") + (c.smooth ? "true" : "false") + "\n";
  s += "channels = " + std::to_string(c.channels) + "\n";
  return s;
}

std::unique_ptr<GroundTruthDataset> make_toy_grid(const ToyConfig& config) {
  return std::make_unique<ToyDataset>(config);
}

std::unique_ptr<GroundTruthDataset> load_archive(const std::string& path) {
  return std::make_unique<ArchiveDataset>(path);
}

std::vector<std::int64_t> sample_indices(const GroundTruthDataset& ds, int n, Rng& rng) {
  if (n <= 0) throw std::invalid_argument("sample count must be positive");
  std::uniform_int_distribution<std::int64_t> pick(0, ds.size() - 1);
  std::vector<std::int64_t> out(n);
  for (auto& i : out) i = pick(rng);
  return out;
}

std::vector<std::int64_t> sample_fixed_factor_indices(const GroundTruthDataset& ds, int factor_id, int value, int n,
                                                      Rng& rng) {
  if (n <= 0) throw std::invalid_argument("sample count must be positive");
  if (factor_id < 0 || factor_id >= ds.num_factors()) {
    throw std::out_of_range("factor id " + std::to_string(factor_id) + " outside [0, " +
                            std::to_string(ds.num_factors()) + ")");
  }
  const auto& specs = ds.factors();
  if (value < 0 || value >= specs[factor_id].cardinality) {
    throw std::out_of_range("value " + std::to_string(value) + " outside factor " + specs[factor_id].name);
  }
  std::vector<std::int64_t> out(n);
  std::vector<int> f(specs.size());
  for (auto& idx : out) {
    for (std::size_t j = 0; j < specs.size(); ++j) {
      f[j] = static_cast<int>(j) == factor_id ? value : uniform_index(rng, specs[j].cardinality);
    }
    idx = factors_to_index(f, specs);
  }
  return out;
}

ImageBatch sample_fixed_factor(const GroundTruthDataset& ds, int factor_id, int value, int n, Rng& rng) {
  return ds.images(sample_fixed_factor_indices(ds, factor_id, value, n, rng));
}

}  // namespace protovae
