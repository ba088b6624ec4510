#include "protovae/trainer.hpp"

#include <openssl/evp.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>

#include "protovae/keyvalue.hpp"
#include "protovae/npz.hpp"

namespace protovae {
namespace {

template <typename T>
double scalar(ad::Var<T> v) {
  return static_cast<double>(v.value()[0]);
}

template <typename T>
double mean_sigmoid(const Tensor<T>& logits) {
  double s = 0;
  for (T l : logits.data()) s += 1.0 / (1.0 + std::exp(-static_cast<double>(l)));
  return s / static_cast<double>(logits.size());
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
  for (T v : t.data())
    if (!std::isfinite(v)) return false;
  return true;
}

template <typename T>
std::vector<ad::ParamSet<T>*> main_sets(Models<T>& m) {
  return {&m.encoder.params(), &m.decoder.params(), &m.proto.params()};
}

template <typename T>
std::vector<const ad::ParamSet<T>*> all_sets(const Models<T>& m) {
  return {&m.encoder.params(), &m.decoder.params(), &m.proto.params(), &m.disc.params()};
}

std::string dims_text(const ModelDims& d) {
  std::string s;
  s += "height = " + std::to_string(d.height) + "\n";
  s += "width = " + std::to_string(d.width) + "\n";
  s += "channels = " + std::to_string(d.channels) + "\n";
  return s;
}

std::string sha256_hex(const std::vector<npz::Member>& members) {
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  for (const auto& m : members) {
    const auto bytes = npz::encode_npy(m.array);
    EVP_DigestUpdate(ctx, m.name.data(), m.name.size());
    EVP_DigestUpdate(ctx, "\0", 1);
    EVP_DigestUpdate(ctx, bytes.data(), bytes.size());
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

template <typename T>
npz::Array tensor_array(const Tensor<T>& t) {
  std::vector<std::int64_t> shape(t.shape().begin(), t.shape().end());
  return npz::make_array(t.storage(), std::move(shape));
}

template <typename T>
void load_tensor(const npz::Array& a, Tensor<T>& dst, const std::string& name) {
  std::vector<std::int64_t> shape(dst.shape().begin(), dst.shape().end());
  if (a.shape != shape) throw std::runtime_error("checkpoint member " + name + " has the wrong shape");
  if (a.dtype != npz::make_array(std::vector<T>{}, {0}).dtype) {
    throw std::runtime_error("checkpoint member " + name + " has dtype " + a.dtype);
  }
  std::memcpy(dst.ptr(), a.bytes.data(), a.bytes.size());
}

template <typename T>
void add_adam(std::vector<npz::Member>& out, const std::string& prefix, const Adam<T>& opt) {
  out.push_back({prefix + "/t", npz::make_array(std::vector<std::int64_t>{opt.t()}, {1})});
  const auto params = opt.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    out.push_back({prefix + "/m/" + params[i]->name, tensor_array(opt.first_moments()[i])});
    out.push_back({prefix + "/v/" + params[i]->name, tensor_array(opt.second_moments()[i])});
  }
}

template <typename T>
void read_adam(const std::map<std::string, npz::Array>& in, const std::string& prefix, Adam<T>& opt) {
  auto get = [&](const std::string& n) -> const npz::Array& {
    auto it = in.find(n);
    if (it == in.end()) throw std::runtime_error("checkpoint lacks member " + n);
    return it->second;
  };
  opt.set_t(get(prefix + "/t").as_int().at(0));
  const auto params = opt.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string m = prefix + "/m/" + params[i]->name;
    const std::string v = prefix + "/v/" + params[i]->name;
    load_tensor(get(m), opt.first_moments()[i], m);
    load_tensor(get(v), opt.second_moments()[i], v);
  }
}

std::map<std::string, npz::Array> read_verified(const std::string& path) {
  npz::Reader reader(path);
  std::vector<npz::Member> members;
  std::map<std::string, npz::Array> by_name;
  std::string digest;
  for (const auto& name : reader.names()) {
    npz::Array a = reader.read(name, false);
    if (name == "digest") {
      digest = npz::text_of(a);
      continue;
    }
    members.push_back({name, a});
    by_name.emplace(name, std::move(a));
  }
  if (digest.empty()) throw std::runtime_error("checkpoint " + path + " has no digest");
  const std::string actual = sha256_hex(members);
  if (actual != digest) {
    throw std::runtime_error("checkpoint " + path + " is corrupt: digest mismatch (stored " + digest +
                             ", computed " + actual + ")");
  }
  return by_name;
}

}  // namespace

template <typename T>
Models<T>::Models(const ModelDims& dims, std::uint64_t seed) : Models(dims, make_stream(seed, kInitStream), 0) {}

template <typename T>
Models<T>::Models(const ModelDims& dims, nn::InitRng rng, int)
    : encoder(dims, rng), decoder(dims, rng), proto(dims, rng), disc(dims, rng) {}

std::string LossReport::log_line(std::int64_t step) const {
  char buf[64];
  std::string s = "step=" + std::to_string(step);
  auto put = [&](const char* key, double v) {
    std::snprintf(buf, sizeof(buf), " %s=%.9g", key, v);
    s += buf;
  };
  put("total", total);
  put("neg_elbo", neg_elbo);
  put("recon_nll", recon_nll);
  put("kl", kl);
  put("l_e", l_e);
  put("l_u", l_u);
  put("l_c", l_c);
  put("l_p", l_p);
  put("l_i", l_i);
  put("l_d", l_d);
  put("d_real", score_real);
  put("d_intervened", score_intervened);
  for (std::size_t j = 0; j < kl_per_dim.size(); ++j) put(("kl" + std::to_string(j)).c_str(), kl_per_dim[j]);
  return s;
}

template <typename T>
LossTerms<T> total_loss(ad::Graph<T>& g, Models<T>& models, const Tensor<T>& x_nhwc, const Tensor<T>& eps,
                        const InterventionPlan& plan, const TrainConfig& config) {
  const int batch = x_nhwc.dim(0);
  const int d = models.encoder.dims().latent_dim;
  const auto& w = config.weights;
  LossTerms<T> out;
  LossReport& r = out.report;

  PosteriorVars<T> post = models.encoder.forward(g, g.constant(x_nhwc));
  out.z = reparameterize(post, eps);
  ad::Var<T> kl = kl_per_dim(post);

  r.episode = w.lambda > 0 || w.kappa > 0;
  Episode<T> ep;
  ad::Var<T> logits;
  if (r.episode) {
    ep = build_episode(out.z, plan, models.decoder);
    logits = ad::slice_rows(ep.logits, 0, batch);
  } else {
    logits = models.decoder.forward_nchw(g, out.z);
  }
  ad::Var<T> recon = reconstruction_nll(to_nchw(x_nhwc), logits);
  ad::Var<T> kl_sum = ad::sum(kl);
  ad::Var<T> total = ad::add(recon, kl_sum);
  r.recon_nll = scalar(recon);
  r.kl = scalar(kl_sum);
  r.neg_elbo = scalar(total);
  for (T v : kl.value().data()) r.kl_per_dim.push_back(static_cast<double>(v));

  ad::Var<T> real_logits = models.disc.logits_frozen(g, out.z);
  ad::Var<T> l_e = encoder_adv_loss(real_logits);
  r.l_e = scalar(l_e);
  r.score_real = mean_sigmoid(real_logits.value());
  if (w.alpha > 0) total = ad::add(total, ad::scale(l_e, static_cast<T>(w.alpha)));

  if (r.episode) {
    const int supports = ep.layout.num_support_pairs();
    PairOutputs<T> net = models.proto.forward(g, ep.pairs);
    ad::Var<T> support_emb = ad::slice_rows(net.embedding, 0, supports);
    ad::Var<T> query_emb = ad::slice_rows(net.embedding, supports, supports + batch);
    const ProtoOptions opt = config.proto_options();
    ad::Var<T> protos = compute_prototypes(support_emb, d);
    ad::Var<T> l_u = uniqueness_loss(query_emb, protos, std::span<const int>(ep.labels), kl, opt);
    ad::Var<T> l_c = consistency_loss(query_emb, support_emb, std::span<const int>(ep.query_examples),
                                      std::span<const int>(ep.labels), kl, opt);
    ad::Var<T> l_p = proto_loss(l_u, l_c);
    ad::Var<T> l_i =
        isometry_loss(ad::slice_rows(net.isometry, supports, supports + batch), ep.isometry_targets);
    r.l_u = scalar(l_u);
    r.l_c = scalar(l_c);
    r.l_p = scalar(l_p);
    r.l_i = scalar(l_i);
    if (w.lambda > 0) total = ad::add(total, ad::scale(l_p, static_cast<T>(w.lambda)));
    if (w.kappa > 0) total = ad::add(total, ad::scale(l_i, static_cast<T>(w.kappa)));
  }
  out.total = total;
  r.total = scalar(total);
  return out;
}

template <typename T>
ad::Var<T> discriminator_objective(ad::Graph<T>& g, Discriminator<T>& disc, const Tensor<T>& z,
                                   const InterventionPlan& plan, LossReport* report) {
  ad::Var<T> real = g.constant(z);
  ad::Var<T> intervened = ad::intervene(real, std::span<const int>(plan.query_dims),
                                        std::span<const int>(plan.query_donor_permutation));
  ad::Var<T> real_logits = disc.logits(g, real);
  ad::Var<T> int_logits = disc.logits(g, intervened);
  ad::Var<T> loss = disc_loss(real_logits, int_logits);
  if (report != nullptr) {
    report->l_d = scalar(loss);
    report->score_intervened = mean_sigmoid(int_logits.value());
  }
  return loss;
}

template <typename T>
TrainState<T>::TrainState(const TrainConfig& cfg, const ModelDims& model_dims, std::string text)
    : config(cfg),
      dims(model_dims),
      config_text(std::move(text)),
      models(model_dims, cfg.seed),
      main_opt({cfg.lr, cfg.beta1, cfg.beta2}, main_sets(models)),
      disc_opt({cfg.disc_lr, cfg.disc_beta1, cfg.disc_beta2}, {&models.disc.params()}),
      batch_rng(make_stream(cfg.seed, kBatchStream)),
      eps_rng(make_stream(cfg.seed, kEpsStream)),
      plan_rng(make_stream(cfg.seed, kPlanStream)),
      disc_rng(make_stream(cfg.seed, kDiscStream)) {
  config.validate();
  if (dims.latent_dim != config.dims.latent_dim) throw std::invalid_argument("model dims disagree with config");
}

template <typename T>
LossReport train_step(TrainState<T>& state, const GroundTruthDataset& ds) {
  const TrainConfig& cfg = state.config;
  const int batch = cfg.batch_size;
  const int d = state.dims.latent_dim;
  const Rng saved[4] = {state.batch_rng, state.eps_rng, state.plan_rng, state.disc_rng};

  const Tensor<T> x = ds.images(sample_indices(ds, batch, state.batch_rng)).template cast<T>();
  Tensor<T> eps({batch, d});
  std::normal_distribution<double> normal;
  for (auto& v : eps.data()) v = static_cast<T>(normal(state.eps_rng));
  const InterventionPlan plan = make_plan(batch, d, state.plan_rng);
  const InterventionPlan disc_plan = make_plan(batch, d, state.disc_rng);

  auto fail = [&](const std::string& what) {
    state.batch_rng = saved[0];
    state.eps_rng = saved[1];
    state.plan_rng = saved[2];
    state.disc_rng = saved[3];
    throw TrainingDiverged("non-finite " + what + " at step " + std::to_string(state.step + 1));
  };

  for (auto* set : main_sets(state.models)) set->zero_grad();
  state.models.disc.params().zero_grad();

  ad::Graph<T> g;
  LossTerms<T> terms = total_loss(g, state.models, x, eps, plan, cfg);
  LossReport report = terms.report;
  if (!std::isfinite(report.total)) fail("loss");
  g.backward(terms.total);
  for (auto* p : state.main_opt.parameters())
    if (!all_finite(p->grad)) fail("gradient of " + p->name);

  report.adversary = cfg.weights.alpha > 0;
  if (report.adversary) {
    ad::Graph<T> gd;
    ad::Var<T> l_d = discriminator_objective(gd, state.models.disc, terms.z.value(), disc_plan, &report);
    if (!std::isfinite(report.l_d)) fail("discriminator loss");
    gd.backward(l_d);
    for (auto* p : state.disc_opt.parameters())
      if (!all_finite(p->grad)) fail("gradient of " + p->name);
  }

  state.main_opt.step();
  if (report.adversary) state.disc_opt.step();
  ++state.step;
  return report;
}

template <typename T>
void train(TrainState<T>& state, const GroundTruthDataset& ds, const TrainOutputs& out) {
  std::ofstream log;
  if (!out.metrics_log.empty()) {
    log.open(out.metrics_log, std::ios::app);
    if (!log) throw std::runtime_error("cannot open metrics log " + out.metrics_log);
  }
  if (!out.checkpoint.empty() && !std::filesystem::exists(out.checkpoint)) save_checkpoint(state, out.checkpoint);
  const auto& cfg = state.config;
  while (state.step < cfg.steps) {
    LossReport r;
    try {
      r = train_step(state, ds);
    } catch (const TrainingDiverged& e) {
      throw TrainingDiverged(std::string(e.what()) + "; last good checkpoint kept at " +
                             (out.checkpoint.empty() ? std::string("(none)") : out.checkpoint));
    }
    if (state.step % cfg.log_every == 0 || state.step == cfg.steps) {
      if (log.is_open()) {
        log << r.log_line(state.step) << '\n';
        log.flush();
      }
      if (out.on_log) out.on_log(state.step, r);
    }
    if (!out.checkpoint.empty() && (state.step % cfg.checkpoint_every == 0 || state.step == cfg.steps)) {
      save_checkpoint(state, out.checkpoint);
    }
  }
}

template <typename T>
void save_checkpoint(const TrainState<T>& state, const std::string& path) {
  std::vector<npz::Member> members;
  members.push_back({"config", npz::make_text(state.config_text)});
  members.push_back({"model_dims", npz::make_text(dims_text(state.dims))});
  members.push_back({"step", npz::make_array(std::vector<std::int64_t>{state.step}, {1})});
  for (const auto* set : all_sets(state.models)) {
    for (const auto& p : *set) members.push_back({"param/" + p.name, tensor_array(p.value)});
  }
  add_adam(members, "adam_main", state.main_opt);
  add_adam(members, "adam_disc", state.disc_opt);
  members.push_back({"rng/batch", npz::make_text(rng_state(state.batch_rng))});
  members.push_back({"rng/eps", npz::make_text(rng_state(state.eps_rng))});
  members.push_back({"rng/plan", npz::make_text(rng_state(state.plan_rng))});
  members.push_back({"rng/disc", npz::make_text(rng_state(state.disc_rng))});
  members.push_back({"digest", npz::make_text(sha256_hex(members))});

  const std::string tmp = path + ".tmp";
  npz::write(tmp, members);
  std::filesystem::rename(tmp, path);
}

template <typename T>
std::unique_ptr<TrainState<T>> load_checkpoint(const std::string& path) {
  const auto in = read_verified(path);
  auto get = [&](const std::string& n) -> const npz::Array& {
    auto it = in.find(n);
    if (it == in.end()) throw std::runtime_error("checkpoint " + path + " lacks member " + n);
    return it->second;
  };
  const std::string config_text = npz::text_of(get("config"));
  const RunConfig run = parse_run_config(config_text);
  const bool want64 = std::is_same_v<T, double>;
  if ((run.train.precision == Precision::kFloat64) != want64) {
    throw std::runtime_error("checkpoint " + path + " was written with a different precision");
  }
  ModelDims dims = run.train.dims;
  for (const auto& e : kv::parse(npz::text_of(get("model_dims")))) {
    if (e.key == "height") dims.height = kv::to_int(e);
    else if (e.key == "width") dims.width = kv::to_int(e);
    else if (e.key == "channels") dims.channels = kv::to_int(e);
  }
  auto state = std::make_unique<TrainState<T>>(run.train, dims, config_text);
  state->step = get("step").as_int().at(0);
  for (auto* set : {&state->models.encoder.params(), &state->models.decoder.params(), &state->models.proto.params(),
                    &state->models.disc.params()}) {
    for (auto& p : *set) load_tensor(get("param/" + p.name), p.value, "param/" + p.name);
  }
  read_adam(in, "adam_main", state->main_opt);
  read_adam(in, "adam_disc", state->disc_opt);
  set_rng_state(state->batch_rng, npz::text_of(get("rng/batch")));
  set_rng_state(state->eps_rng, npz::text_of(get("rng/eps")));
  set_rng_state(state->plan_rng, npz::text_of(get("rng/plan")));
  set_rng_state(state->disc_rng, npz::text_of(get("rng/disc")));
  return state;
}

AnyState load_any_checkpoint(const std::string& path) {
  npz::Reader reader(path);
  const RunConfig run = parse_run_config(npz::text_of(reader.read("config", false)));
  if (run.train.precision == Precision::kFloat64) return load_checkpoint<double>(path);
  return load_checkpoint<float>(path);
}

#define PROTOVAE_TRAINER(T)                                                                                      \
  template struct Models<T>;                                                                                    \
  template class TrainState<T>;                                                                                 \
  template LossTerms<T> total_loss(ad::Graph<T>&, Models<T>&, const Tensor<T>&, const Tensor<T>&,               \
                                   const InterventionPlan&, const TrainConfig&);                                \
  template ad::Var<T> discriminator_objective(ad::Graph<T>&, Discriminator<T>&, const Tensor<T>&,               \
                                              const InterventionPlan&, LossReport*);                            \
  template LossReport train_step(TrainState<T>&, const GroundTruthDataset&);                                    \
  template void train(TrainState<T>&, const GroundTruthDataset&, const TrainOutputs&);                          \
  template void save_checkpoint(const TrainState<T>&, const std::string&);                                      \
  template std::unique_ptr<TrainState<T>> load_checkpoint(const std::string&);

PROTOVAE_TRAINER(float)
PROTOVAE_TRAINER(double)

}  // namespace protovae
