#include "protovae/config.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>

#include "protovae/keyvalue.hpp"

namespace protovae {
namespace {

struct Field {
  std::string key;
  std::function<void(RunConfig&, const kv::Entry&)> set;
  std::function<std::string(const RunConfig&)> get;
};

std::string str(int v) { return std::to_string(v); }
std::string str(std::uint64_t v) { return std::to_string(v); }
std::string str(double v) { return kv::format_double(v); }
std::string str(bool v) { return v ? "true" : "false"; }
std::string str(const std::vector<int>& v) {
  std::string s;
  for (int x : v) s += (s.empty() ? "" : ",") + std::to_string(x);
  return s;
}

std::vector<int> int_list_or_empty(const kv::Entry& e) {
  if (e.value.empty() || e.value == "all") return {};
  return kv::to_int_list(e);
}

#define PV_INT(KEY, MEMBER) \
  Field { KEY, [](RunConfig& c, const kv::Entry& e) { c.MEMBER = kv::to_int(e); }, [](const RunConfig& c) { return str(c.MEMBER); } }
#define PV_U64(KEY, MEMBER) \
  Field { KEY, [](RunConfig& c, const kv::Entry& e) { c.MEMBER = kv::to_u64(e); }, [](const RunConfig& c) { return str(c.MEMBER); } }
#define PV_DBL(KEY, MEMBER) \
  Field { KEY, [](RunConfig& c, const kv::Entry& e) { c.MEMBER = kv::to_double(e); }, [](const RunConfig& c) { return str(c.MEMBER); } }
#define PV_BOOL(KEY, MEMBER) \
  Field { KEY, [](RunConfig& c, const kv::Entry& e) { c.MEMBER = kv::to_bool(e); }, [](const RunConfig& c) { return str(c.MEMBER); } }

// Optional toy cardinalities: "none" leaves the factor out.
Field toy_factor(const char* key, std::optional<int> ToyConfig::*member) {
  return {key,
          [member](RunConfig& c, const kv::Entry& e) {
            if (e.value == "none") c.data.toy.*member = std::nullopt;
            else c.data.toy.*member = kv::to_int(e);
          },
          [member](const RunConfig& c) {
            const auto& v = c.data.toy.*member;
            return v ? std::to_string(*v) : std::string("none");
          }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      {"data.archive", [](RunConfig& c, const kv::Entry& e) { c.data.archive = e.value; },
       [](const RunConfig& c) { return c.data.archive; }},
      PV_INT("data.side", data.toy.side),
      toy_factor("data.shapes", &ToyConfig::shapes),
      toy_factor("data.scales", &ToyConfig::scales),
      toy_factor("data.pos_x", &ToyConfig::pos_x),
      toy_factor("data.pos_y", &ToyConfig::pos_y),
      PV_U64("data.seed", data.toy.seed),
      PV_DBL("data.pos_min", data.toy.pos_min),
      PV_DBL("data.pos_max", data.toy.pos_max),
      PV_DBL("data.scale_min", data.toy.scale_min),
      PV_DBL("data.scale_max", data.toy.scale_max),
      PV_BOOL("data.smooth", data.toy.smooth),
      PV_INT("data.channels", data.toy.channels),

      PV_INT("dims.latent_dim", train.dims.latent_dim),
      PV_INT("dims.metric_dim", train.dims.metric_dim),
      {"dims.conv_channels", [](RunConfig& c, const kv::Entry& e) { c.train.dims.conv_channels = kv::to_int_list(e); },
       [](const RunConfig& c) { return str(c.train.dims.conv_channels); }},
      PV_INT("dims.dense_width", train.dims.dense_width),
      PV_INT("dims.disc_width", train.dims.disc_width),
      PV_INT("dims.disc_layers", train.dims.disc_layers),

      PV_DBL("weights.alpha", train.weights.alpha),
      PV_DBL("weights.lambda", train.weights.lambda),
      PV_DBL("weights.kappa", train.weights.kappa),

      PV_INT("train.batch_size", train.batch_size),
      PV_INT("train.steps", train.steps),
      PV_DBL("train.lr", train.lr),
      PV_DBL("train.beta1", train.beta1),
      PV_DBL("train.beta2", train.beta2),
      PV_DBL("train.disc_lr", train.disc_lr),
      PV_DBL("train.disc_beta1", train.disc_beta1),
      PV_DBL("train.disc_beta2", train.disc_beta2),
      PV_U64("train.seed", train.seed),
      {"train.precision",
       [](RunConfig& c, const kv::Entry& e) {
         if (e.value == "32") c.train.precision = Precision::kFloat32;
         else if (e.value == "64") c.train.precision = Precision::kFloat64;
         else throw std::invalid_argument("train.precision must be 32 or 64, got '" + e.value + "'");
       },
       [](const RunConfig& c) { return std::string(c.train.precision == Precision::kFloat32 ? "32" : "64"); }},
      PV_BOOL("train.kl_weight_gradient", train.kl_weight_gradient),
      {"train.distance",
       [](RunConfig& c, const kv::Entry& e) {
         if (e.value == "squared") c.train.distance = Distance::kSquaredEuclidean;
         else if (e.value == "euclidean") c.train.distance = Distance::kEuclidean;
         else throw std::invalid_argument("train.distance must be squared or euclidean, got '" + e.value + "'");
       },
       [](const RunConfig& c) {
         return std::string(c.train.distance == Distance::kSquaredEuclidean ? "squared" : "euclidean");
       }},
      PV_INT("train.log_every", train.log_every),
      PV_INT("train.checkpoint_every", train.checkpoint_every),

      PV_U64("eval.seed", eval.seed),
      PV_INT("eval.global_samples", eval.global_samples),
      PV_INT("eval.train_votes", eval.train_votes),
      PV_INT("eval.eval_votes", eval.eval_votes),
      PV_INT("eval.batch_per_vote", eval.batch_per_vote),
      PV_DBL("eval.prune_threshold", eval.prune_threshold),
      PV_INT("eval.mig_samples", eval.mig_samples),
      PV_INT("eval.mig_bins", eval.mig_bins),
      PV_INT("eval.dci_train", eval.dci_train),
      PV_INT("eval.dci_test", eval.dci_test),
      {"eval.dci_predictor",
       [](RunConfig& c, const kv::Entry& e) {
         if (e.value == "gbdt") c.eval.dci_predictor = DciPredictor::kBoostedTrees;
         else if (e.value == "logistic") c.eval.dci_predictor = DciPredictor::kLogistic;
         else throw std::invalid_argument("eval.dci_predictor must be gbdt or logistic, got '" + e.value + "'");
       },
       [](const RunConfig& c) {
         return std::string(c.eval.dci_predictor == DciPredictor::kBoostedTrees ? "gbdt" : "logistic");
       }},
      PV_INT("eval.gbdt_rounds", eval.gbdt_rounds),
      PV_INT("eval.gbdt_depth", eval.gbdt_depth),
      PV_DBL("eval.gbdt_lr", eval.gbdt_lr),
      PV_INT("eval.gbdt_bins", eval.gbdt_bins),

      {"traverse.seed_images", [](RunConfig& c, const kv::Entry& e) { c.traverse.seed_images = kv::to_int_list(e); },
       [](const RunConfig& c) { return str(c.traverse.seed_images); }},
      PV_DBL("traverse.lo", traverse.lo),
      PV_DBL("traverse.hi", traverse.hi),
      PV_INT("traverse.steps", traverse.steps),
      {"traverse.dims", [](RunConfig& c, const kv::Entry& e) { c.traverse.dims = int_list_or_empty(e); },
       [](const RunConfig& c) { return c.traverse.dims.empty() ? std::string("all") : str(c.traverse.dims); }},
      PV_INT("traverse.kl_samples", traverse.kl_samples),
      PV_U64("traverse.seed", traverse.seed),

      {"embed.mode",
       [](RunConfig& c, const kv::Entry& e) {
         if (e.value == "ground_truth") c.embed.mode = EmbedMode::kGroundTruth;
         else if (e.value == "synthetic") c.embed.mode = EmbedMode::kSynthetic;
         else throw std::invalid_argument("embed.mode must be ground_truth or synthetic, got '" + e.value + "'");
       },
       [](const RunConfig& c) {
         return std::string(c.embed.mode == EmbedMode::kGroundTruth ? "ground_truth" : "synthetic");
       }},
      PV_INT("embed.n", embed.n),
      PV_U64("embed.seed", embed.seed),
  };
  return f;
}

#undef PV_INT
#undef PV_U64
#undef PV_DBL
#undef PV_BOOL

void set_entry(RunConfig& config, const kv::Entry& e) {
  for (const auto& f : fields()) {
    if (f.key == e.key) {
      f.set(config, e);
      return;
    }
  }
  kv::reject_unknown(e.key, config_keys(), "config");
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
  if (batch_size < 2) fail("batch_size must be >= 2 so interventions have donors");
  if (steps < 1) fail("steps must be >= 1");
  for (double w : {weights.alpha, weights.lambda, weights.kappa}) {
    if (!(w >= 0.0) || !std::isfinite(w)) fail("loss weights must be finite and non-negative");
  }
  if (!(lr > 0) || !(disc_lr > 0)) fail("learning rates must be positive");
  if (log_every < 1 || checkpoint_every < 1) fail("log_every and checkpoint_every must be >= 1");
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

void set_config_value(RunConfig& config, const std::string& key, const std::string& value) {
  set_entry(config, kv::Entry{key, value, 0});
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig c;
  for (const auto& e : kv::parse(text)) set_entry(c, e);
  return c;
}

std::string format_run_config(const RunConfig& config) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(config) + "\n";
  return out;
}

std::unique_ptr<GroundTruthDataset> make_dataset(const DataConfig& config) {
  return config.archive.empty() ? make_toy_grid(config.toy) : load_archive(config.archive);
}

ModelDims model_dims_for(const TrainConfig& config, const GroundTruthDataset& ds) {
  ModelDims d = config.dims;
  d.height = ds.height();
  d.width = ds.width();
  d.channels = ds.channels();
  d.validate();
  return d;
}

}  // namespace protovae
