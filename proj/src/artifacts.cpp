#include "protovae/artifacts.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

#include "protovae/episodes.hpp"
#include "protovae/keyvalue.hpp"

namespace protovae {
namespace {

constexpr int kChunk = 256;
constexpr std::uint64_t kTraverseKlStream = 201;
constexpr std::uint64_t kEmbedStream = 202;

std::uint8_t to_byte(double p) { return static_cast<std::uint8_t>(std::lround(std::clamp(p, 0.0, 1.0) * 255.0)); }

template <typename T>
Tensor<T> probabilities(const Decoder<T>& decoder, const Tensor<T>& z) {
  Tensor<T> x = decoder.decode(z);
  for (auto& v : x.data()) v = T(1) / (T(1) + std::exp(-v));
  return x;
}

// Copies image b of an NHWC batch into tile (r, c).
template <typename T>
void put_tile(ImageGrid& grid, int r, int c, const Tensor<T>& images, int b) {
  const int h = grid.tile_h;
  const int w = grid.tile_w;
  const int ch = grid.channels;
  const T* src = images.ptr() + static_cast<std::size_t>(b) * h * w * ch;
  for (int y = 0; y < h; ++y) {
    std::uint8_t* dst = grid.pixels.data() + ((static_cast<std::size_t>(r) * h + y) * grid.width() + c * w) * ch;
    for (int i = 0; i < w * ch; ++i) dst[i] = to_byte(src[y * w * ch + i]);
  }
}

// Both halves NHWC with equal shapes -> (P, H, W, 2C).
template <typename T>
Tensor<T> stack_channels(const Tensor<T>& a, const Tensor<T>& b) {
  const int n = a.dim(0);
  const int hw = a.dim(1) * a.dim(2);
  const int c = a.dim(3);
  Tensor<T> out({n, a.dim(1), a.dim(2), 2 * c});
  for (int i = 0; i < n; ++i) {
    for (int p = 0; p < hw; ++p) {
      const std::size_t src = (static_cast<std::size_t>(i) * hw + p) * c;
      T* dst = out.ptr() + (static_cast<std::size_t>(i) * hw + p) * 2 * c;
      std::copy_n(a.ptr() + src, c, dst);
      std::copy_n(b.ptr() + src, c, dst + c);
    }
  }
  return out;
}

void append_rows(std::vector<double>& all, const Tensor<double>& part) {
  all.insert(all.end(), part.data().begin(), part.data().end());
}

}  // namespace

template <typename T>
Tensor<double> posterior_means(const Encoder<T>& encoder, const ImageBatch& images) {
  if constexpr (std::is_same_v<T, float>) {
    return encoder.encode(images).mu.template cast<double>();
  } else {
    return encoder.encode(images.template cast<T>()).mu;
  }
}

template <typename T>
RepresentationFn encoder_representation(const GroundTruthDataset& ds, const Encoder<T>& encoder) {
  return image_representation(
      ds, [&encoder](const ImageBatch& x) { return posterior_means(encoder, x); }, kChunk);
}

template <typename T>
std::vector<double> dataset_kl_per_dim(const GroundTruthDataset& ds, const Encoder<T>& encoder, int n, Rng& rng) {
  const auto idx = sample_indices(ds, n, rng);
  const int d = encoder.dims().latent_dim;
  std::vector<double> kl(d, 0.0);
  for (std::size_t s = 0; s < idx.size(); s += kChunk) {
    const auto part = std::span<const std::int64_t>(idx).subspan(s, std::min<std::size_t>(kChunk, idx.size() - s));
    const auto post = encoder.encode(ds.images(part).template cast<T>());
    const Tensor<T> k = kl_per_dim(post);
    for (int j = 0; j < d; ++j) kl[j] += static_cast<double>(k.data()[j]) * static_cast<double>(part.size());
  }
  for (auto& v : kl) v /= static_cast<double>(idx.size());
  return kl;
}

void check_dataset_matches(const GroundTruthDataset& ds, const ModelDims& dims) {
  if (ds.height() != dims.height || ds.width() != dims.width || ds.channels() != dims.channels) {
    throw std::invalid_argument("dataset images are " + std::to_string(ds.height()) + "x" + std::to_string(ds.width()) +
                                "x" + std::to_string(ds.channels()) + " but the model expects " +
                                std::to_string(dims.height) + "x" + std::to_string(dims.width) + "x" +
                                std::to_string(dims.channels));
  }
}

MetricReport evaluate_checkpoint(const std::string& checkpoint, const GroundTruthDataset& ds, const EvalConfig& cfg) {
  AnyState any = load_any_checkpoint(checkpoint);
  return std::visit(
      [&](auto& state) {
        check_dataset_matches(ds, state->dims);
        return evaluate(ds, encoder_representation(ds, state->models.encoder), cfg);
      },
      any);
}

std::string ImageGrid::encode_pnm() const {
  if (channels != 1 && channels != 3) throw std::invalid_argument("grid images need 1 or 3 channels");
  std::string s = channels == 1 ? "P5\n" : "P6\n";
  for (const auto& c : comments) s += "# " + c + "\n";
  s += std::to_string(width()) + " " + std::to_string(height()) + "\n255\n";
  s.append(reinterpret_cast<const char*>(pixels.data()), pixels.size());
  return s;
}

template <typename T>
Traversal traverse(const Models<T>& models, const GroundTruthDataset& ds, const TraverseConfig& cfg) {
  const ModelDims& dims = models.encoder.dims();
  check_dataset_matches(ds, dims);
  if (!(cfg.lo < cfg.hi)) throw std::invalid_argument("traversal range needs lo < hi");
  if (cfg.steps < 2) throw std::invalid_argument("traversal needs at least 2 steps");
  if (cfg.seed_images.empty()) throw std::invalid_argument("traversal needs at least one seed image");
  for (int i : cfg.seed_images) {
    if (i < 0 || i >= ds.size()) {
      throw std::out_of_range("seed image " + std::to_string(i) + " outside the dataset of " +
                              std::to_string(ds.size()) + " images");
    }
  }
  const int d = dims.latent_dim;
  Traversal out;
  Rng rng = make_stream(cfg.seed, kTraverseKlStream);
  out.kl_per_dim = dataset_kl_per_dim(ds, models.encoder, cfg.kl_samples, rng);

  std::vector<int> order = cfg.dims;
  if (order.empty()) {
    order.resize(d);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return out.kl_per_dim[a] > out.kl_per_dim[b]; });
  }
  for (int k : order) {
    if (k < 0 || k >= d) throw std::out_of_range("traversal dim " + std::to_string(k) + " outside [0, " + std::to_string(d) + ")");
  }

  const int n_seed = static_cast<int>(cfg.seed_images.size());
  std::vector<std::int64_t> idx(cfg.seed_images.begin(), cfg.seed_images.end());
  const Tensor<T> x = ds.images(idx).template cast<T>();
  const Tensor<T> mu = models.encoder.encode(x).mu;
  const Tensor<T> recon = probabilities(models.decoder, mu);

  ImageGrid& g = out.grid;
  g.rows = 2 + n_seed * static_cast<int>(order.size());
  g.cols = std::max(n_seed, cfg.steps);
  g.tile_h = dims.height;
  g.tile_w = dims.width;
  g.channels = dims.channels;
  g.pixels.assign(static_cast<std::size_t>(g.height()) * g.width() * g.channels, 0);
  g.comments.push_back("row 0: seed images " + [&] {
    std::string s;
    for (int i : cfg.seed_images) s += (s.empty() ? "" : ",") + std::to_string(i);
    return s;
  }());
  g.comments.push_back("row 1: reconstructions from the posterior mean");
  g.comments.push_back("columns: " + std::to_string(cfg.steps) + " values from " + kv::format_double(cfg.lo) + " to " +
                       kv::format_double(cfg.hi));
  for (int i = 0; i < n_seed; ++i) {
    put_tile(g, 0, i, x, i);
    put_tile(g, 1, i, recon, i);
  }

  const int steps = cfg.steps;
  int row = 2;
  for (int i = 0; i < n_seed; ++i) {
    for (int k : order) {
      Tensor<T> z({steps, d});
      for (int s = 0; s < steps; ++s) {
        for (int j = 0; j < d; ++j) z.at(s, j) = mu.at(i, j);
        z.at(s, k) = static_cast<T>(cfg.lo + (cfg.hi - cfg.lo) * s / (steps - 1));
      }
      const Tensor<T> img = probabilities(models.decoder, z);
      for (int s = 0; s < steps; ++s) put_tile(g, row, s, img, s);
      out.rows.push_back({cfg.seed_images[i], k, out.kl_per_dim[k]});
      g.comments.push_back("row " + std::to_string(row) + ": seed " + std::to_string(cfg.seed_images[i]) + " dim " +
                           std::to_string(k) + " kl " + kv::format_double(out.kl_per_dim[k]));
      ++row;
    }
  }
  return out;
}

std::int64_t count_factor_pairs(const GroundTruthDataset& ds) {
  std::int64_t total = 0;
  for (const auto& f : ds.factors()) total += ds.size() * (f.cardinality - 1);
  return total;
}

std::vector<FactorPair> sample_factor_pairs(const GroundTruthDataset& ds, std::int64_t n, Rng& rng) {
  const std::int64_t total = count_factor_pairs(ds);
  if (n < 1) throw std::invalid_argument("pair count must be positive");
  if (n > total) {
    throw std::invalid_argument("requested " + std::to_string(n) + " pairs but the dataset has only " +
                                std::to_string(total) + " distinct single-factor pairs");
  }
  // Floyd's sampling of n distinct pair ids out of total.
  std::unordered_set<std::int64_t> seen;
  std::vector<std::int64_t> ids;
  ids.reserve(static_cast<std::size_t>(n));
  for (std::int64_t j = total - n; j < total; ++j) {
    std::uniform_int_distribution<std::int64_t> pick(0, j);
    const std::int64_t t = pick(rng);
    const std::int64_t chosen = seen.insert(t).second ? t : j;
    if (chosen == j) seen.insert(j);
    ids.push_back(chosen);
  }

  const auto& specs = ds.factors();
  std::vector<FactorPair> out;
  out.reserve(ids.size());
  for (std::int64_t id : ids) {
    int f = 0;
    while (id >= ds.size() * (specs[f].cardinality - 1)) id -= ds.size() * (specs[f++].cardinality - 1);
    const int others = specs[f].cardinality - 1;
    const std::int64_t base = id / others;
    const int k = static_cast<int>(id % others);
    auto values = index_to_factors(base, specs);
    values[f] = k < values[f] ? k : k + 1;
    out.push_back({base, factors_to_index(values, specs), f});
  }
  return out;
}

template <typename T>
PairEmbeddingExport export_pair_embeddings(const Models<T>& models, const GroundTruthDataset& ds,
                                           const EmbedConfig& cfg, double lambda) {
  const ModelDims& dims = models.encoder.dims();
  check_dataset_matches(ds, dims);
  PairEmbeddingExport out;
  out.mode = cfg.mode;
  out.lambda = lambda;
  out.seed = cfg.seed;
  Rng rng = make_stream(cfg.seed, kEmbedStream);
  std::vector<double> all;

  if (cfg.mode == EmbedMode::kGroundTruth) {
    const auto pairs = sample_factor_pairs(ds, cfg.n, rng);
    for (const auto& p : pairs) {
      out.first.push_back(p.first);
      out.second.push_back(p.second);
      out.factor.push_back(p.factor);
      out.dim.push_back(-1);
    }
    for (std::size_t s = 0; s < pairs.size(); s += kChunk) {
      const std::size_t count = std::min<std::size_t>(kChunk, pairs.size() - s);
      const auto a = ds.images(std::span<const std::int64_t>(out.first).subspan(s, count)).template cast<T>();
      const auto b = ds.images(std::span<const std::int64_t>(out.second).subspan(s, count)).template cast<T>();
      append_rows(all, models.proto.embed(stack_channels(a, b)).template cast<double>());
    }
  } else {
    if (cfg.n < 2) throw std::invalid_argument("synthetic pairs need n >= 2 to pick donors");
    const auto idx = sample_indices(ds, cfg.n, rng);
    const auto donors = random_derangement(cfg.n, rng);
    const int d = dims.latent_dim;
    std::uniform_int_distribution<int> pick_dim(0, d - 1);
    std::vector<int> dim_of(cfg.n);
    for (auto& k : dim_of) k = pick_dim(rng);
    const Tensor<T> mu = models.encoder.encode(ds.images(idx).template cast<T>()).mu;
    for (int i = 0; i < cfg.n; ++i) {
      out.first.push_back(idx[i]);
      out.second.push_back(idx[donors[i]]);
      out.factor.push_back(-1);
      out.dim.push_back(dim_of[i]);
    }
    for (int s = 0; s < cfg.n; s += kChunk) {
      const int count = std::min(kChunk, cfg.n - s);
      Tensor<T> z({count, d});
      Tensor<T> zi({count, d});
      for (int i = 0; i < count; ++i) {
        for (int j = 0; j < d; ++j) z.at(i, j) = zi.at(i, j) = mu.at(s + i, j);
        zi.at(i, dim_of[s + i]) = mu.at(donors[s + i], dim_of[s + i]);
      }
      append_rows(all, models.proto.embed(stack_channels(probabilities(models.decoder, z),
                                                          probabilities(models.decoder, zi)))
                           .template cast<double>());
    }
  }
  out.embeddings = Tensor<double>({cfg.n, dims.metric_dim}, std::move(all));
  return out;
}

std::string PairEmbeddingExport::to_csv() const {
  std::string s;
  s += std::string("# mode=") + (mode == EmbedMode::kGroundTruth ? "ground_truth" : "synthetic") + "\n";
  s += "# lambda=" + kv::format_double(lambda) + "\n";
  s += "# seed=" + std::to_string(seed) + "\n";
  const int m = embeddings.dim(1);
  for (int j = 0; j < m; ++j) s += "e" + std::to_string(j) + ",";
  s += "factor,dim,first,second\n";
  for (int i = 0; i < embeddings.dim(0); ++i) {
    for (int j = 0; j < m; ++j) s += kv::format_double(embeddings.at(i, j)) + ",";
    s += (factor[i] >= 0 ? std::to_string(factor[i]) : "") + ",";
    s += (dim[i] >= 0 ? std::to_string(dim[i]) : "") + ",";
    s += std::to_string(first[i]) + "," + std::to_string(second[i]) + "\n";
  }
  return s;
}

double nearest_prototype_accuracy(const Tensor<double>& x, std::span<const int> labels) {
  const int n = x.dim(0);
  const int m = x.dim(1);
  if (n < 2 || static_cast<int>(labels.size()) != n) {
    throw std::invalid_argument("nearest-prototype accuracy needs at least 2 labelled rows");
  }
  const int classes = *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<double> mean(static_cast<std::size_t>(classes) * m, 0.0);
  std::vector<int> count(classes, 0);
  for (int i = 0; i < n; i += 2) {
    ++count[labels[i]];
    for (int j = 0; j < m; ++j) mean[labels[i] * m + j] += x.at(i, j);
  }
  for (int c = 0; c < classes; ++c)
    for (int j = 0; j < m; ++j)
      if (count[c] > 0) mean[c * m + j] /= count[c];
  int hit = 0;
  int scored = 0;
  for (int i = 1; i < n; i += 2) {
    int best = -1;
    double best_d = 0;
    for (int c = 0; c < classes; ++c) {
      if (count[c] == 0) continue;
      double dist = 0;
      for (int j = 0; j < m; ++j) dist += (x.at(i, j) - mean[c * m + j]) * (x.at(i, j) - mean[c * m + j]);
      if (best < 0 || dist < best_d) {
        best = c;
        best_d = dist;
      }
    }
    hit += best == labels[i];
    ++scored;
  }
  return static_cast<double>(hit) / scored;
}

#define PROTOVAE_INSTANTIATE(T)                                                                                  \
  template Tensor<double> posterior_means<T>(const Encoder<T>&, const ImageBatch&);                              \
  template RepresentationFn encoder_representation<T>(const GroundTruthDataset&, const Encoder<T>&);            \
  template std::vector<double> dataset_kl_per_dim<T>(const GroundTruthDataset&, const Encoder<T>&, int, Rng&);   \
  template Traversal traverse<T>(const Models<T>&, const GroundTruthDataset&, const TraverseConfig&);           \
  template PairEmbeddingExport export_pair_embeddings<T>(const Models<T>&, const GroundTruthDataset&,           \
                                                         const EmbedConfig&, double);

PROTOVAE_INSTANTIATE(float)
PROTOVAE_INSTANTIATE(double)

}  // namespace protovae
