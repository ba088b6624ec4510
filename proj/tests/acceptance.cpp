// Acceptance runner: one PASS/FAIL line per criterion, details on the lines
// before it. Exit status is nonzero if any criterion fails.
//
//   protovae_acceptance [--work DIR] [--only 1,2,...]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "protovae/artifacts.hpp"
#include "protovae/config.hpp"
#include "protovae/metrics.hpp"
#include "protovae/trainer.hpp"

using namespace protovae;
namespace fs = std::filesystem;

namespace {

fs::path g_work = "acceptance_work";

void note(const char* fmt, auto... args) {
  std::printf("  ");
  std::printf(fmt, args...);
  std::printf("\n");
  std::fflush(stdout);
}

RunConfig toy_config() {
  std::ifstream f(PROTOVAE_TOY_CONFIG);
  if (!f) throw std::runtime_error("cannot read " PROTOVAE_TOY_CONFIG);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_run_config(ss.str());
}

double scalar(ad::Var<double> v) { return v.value().data()[0]; }

Tensor<double> mat(int rows, int cols, std::vector<double> v) { return Tensor<double>({rows, cols}, std::move(v)); }

// ---- 1 -------------------------------------------------------------------

bool gradients() {
  double worst = 0;
  for (const auto& c : protovae::testing::check_all_terms(3)) {
    note("%-24s max rel err %.3e over %d entries (%s)", c.term.c_str(), c.result.max_rel_err, c.result.checked,
         c.result.worst.c_str());
    worst = std::max(worst, c.result.max_rel_err);
  }
  return worst < 1e-4;
}

// ---- 2 -------------------------------------------------------------------

double kl_quadrature(double mu, double lv) {
  const int n = 200000;
  const double a = -12.0, h = 24.0 / n, s2 = std::exp(lv);
  auto f = [&](double z) {
    const double logq = -0.5 * std::log(2 * std::numbers::pi * s2) - (z - mu) * (z - mu) / (2 * s2);
    const double logp = -0.5 * std::log(2 * std::numbers::pi) - z * z / 2;
    return std::exp(logq) * (logq - logp);
  };
  double sum = f(a) + f(a + n * h);
  for (int i = 1; i < n; ++i) sum += (i % 2 ? 4 : 2) * f(a + i * h);
  return sum * h / 3;
}

bool closed_forms() {
  bool ok = true;
  Rng rng = make_stream(2, 1);
  std::uniform_real_distribution<double> mu(-1.0, 1.0), lv(-1.5, 1.0);
  double kl_err = 0;
  for (int t = 0; t < 20; ++t) {
    const double m = mu(rng), l = lv(rng);
    kl_err = std::max(kl_err, std::abs(kl_per_dim(PosteriorParams<double>{mat(1, 1, {m}), mat(1, 1, {l})}).data()[0] -
                                       kl_quadrature(m, l)));
  }
  note("kl_per_dim vs quadrature: max abs err %.3e", kl_err);
  ok &= kl_err < 1e-6;

  ad::Graph<double> g;
  const auto zero = g.constant(Tensor<double>({16}));
  const double ld = scalar(disc_loss(zero, zero));
  note("L_D at chance: %.15f (2 ln 2 = %.15f)", ld, 2 * std::log(2.0));
  ok &= std::abs(ld - 2 * std::log(2.0)) <= 1e-9;

  double eq_err = 0;
  for (int d = 2; d <= 6; ++d) {
    Tensor<double> protos({d, d});
    for (int k = 0; k < d; ++k) protos.at(k, k) = 1;
    const Tensor<double> probs = class_probs(Tensor<double>({1, d}), protos, Distance::kSquaredEuclidean);
    for (double p : probs.data()) eq_err = std::max(eq_err, std::abs(p - 1.0 / d));
  }
  note("class_probs equidistant: max |p - 1/d| %.3e", eq_err);
  ok &= eq_err <= 1e-9;

  const bool mean_exact = compute_prototypes(g.constant(mat(2, 2, {1, 3, 3, 5})), 1).value() == mat(1, 2, {2, 4});
  note("prototype of {(1,3),(3,5)} is (2,4) exactly: %s", mean_exact ? "yes" : "no");
  ok &= mean_exact;

  const std::vector<int> label{0};
  const double lu = scalar(uniqueness_loss(g.constant(mat(1, 1, {0})), g.constant(mat(2, 1, {0, 1})),
                                           std::span<const int>(label), g.constant(Tensor<double>({2}, 0.5))));
  const double expect = 0.5 * std::log(1 + std::exp(-1.0));
  note("L_U two-class: %.15f (expected %.15f)", lu, expect);
  ok &= std::abs(lu - expect) <= 1e-9;
  return ok;
}

// ---- 3 -------------------------------------------------------------------

bool episode_invariants() {
  std::vector<std::unique_ptr<Decoder<double>>> decoders;
  for (int d = 2; d <= 7; ++d) {
    ModelDims dims = protovae::testing::tiny_dims();
    dims.latent_dim = d;
    nn::InitRng init = make_stream(d, kInitStream);
    decoders.push_back(std::make_unique<Decoder<double>>(dims, init));
  }
  Rng rng = make_stream(3, 3);
  std::normal_distribution<double> normal;
  long violations = 0;
  long checked = 0;
  auto expect = [&](bool c) {
    ++checked;
    violations += !c;
  };
  for (int trial = 0; trial < 1000; ++trial) {
    const int batch = 2 + uniform_index(rng, 7);
    const int d = 2 + uniform_index(rng, 6);
    Tensor<double> z({batch, d});
    for (auto& v : z.data()) v = normal(rng);
    const InterventionPlan plan = make_plan(batch, d, rng);
    ad::Graph<double> g;
    const Episode<double> ep = build_episode_frozen(g.constant(z), plan, *decoders[d - 2]);
    const EpisodeLayout& L = ep.layout;
    const Tensor<double>& codes = ep.codes.value();
    auto differing = [&](int row, int orig) {
      std::vector<int> out;
      for (int j = 0; j < d; ++j)
        if (codes.at(row, j) != codes.at(orig, j)) out.push_back(j);
      return out;
    };
    expect(L.rows() == batch * (d + 2) && codes.dim(0) == L.rows());
    for (int i = 0; i < batch; ++i)
      for (int j = 0; j < d; ++j) expect(codes.at(L.original(i), j) == z.at(i, j));
    // Support sets: d of them, each of size B, every member one coordinate away from its original.
    std::vector<int> per_dim(d, 0);
    for (int p = 0; p < L.num_support_pairs(); ++p) {
      const int k = ep.pair_dims[p];
      ++per_dim[k];
      expect(k == p / batch);
      expect(differing(L.support(k, p % batch), L.original(p % batch)) == std::vector<int>{k});
    }
    expect(static_cast<int>(per_dim.size()) == d);
    for (int c : per_dim) expect(c == batch);
    // Queries: B of them, intervened exactly on their label, with isometry target supported there.
    expect(static_cast<int>(ep.labels.size()) == batch && static_cast<int>(ep.query_examples.size()) == batch);
    expect(ep.pairs.value().dim(0) == L.num_pairs());
    const Tensor<double>& iso = ep.isometry_targets.value();
    for (int i = 0; i < batch; ++i) {
      const int k = ep.labels[i];
      expect(ep.pair_dims[L.num_support_pairs() + i] == k);
      expect(differing(L.query(i), L.original(ep.query_examples[i])) == std::vector<int>{k});
      for (int j = 0; j < d; ++j) expect((iso.at(i, j) != 0) == (j == k));
    }
  }
  note("1000 trials, %ld checks, %ld violations", checked, violations);
  return violations == 0;
}

// ---- 4 -------------------------------------------------------------------

bool metric_oracles() {
  ToyConfig t;
  t.shapes = 3;
  t.scales = 4;
  t.pos_x = 8;
  t.pos_y = 8;
  auto ds = make_toy_grid(t);
  const EvalConfig cfg;
  const RepresentationFn rep = factor_representation(*ds);
  const MetricReport r = evaluate(*ds, rep, cfg);
  note("factors: FactorVAE %.4f MIG %.4f DCI-D %.4f DCI-C %.4f DCI-I %.4f", r.factorvae, r.mig, r.dci_disentanglement,
       r.dci_completeness, r.dci_informativeness);
  bool ok = r.factorvae == 1.0 && r.mig >= 0.95 && r.dci_disentanglement >= 0.95 && r.dci_informativeness >= 0.99;

  RepresentationFn constant = [](std::span<const std::int64_t> idx) {
    return Tensor<double>({static_cast<int>(idx.size()), 4}, 0.5);
  };
  Rng rng = make_stream(cfg.seed, 102);
  const double mig0 = mig(*ds, constant, cfg.mig_samples, cfg.mig_bins, rng);
  note("constant: MIG %.4f", mig0);
  ok &= mig0 == 0.0;

  const std::vector<int> perm{2, 0, 3, 1};
  RepresentationFn permuted = [&](std::span<const std::int64_t> idx) {
    const Tensor<double> z = rep(idx);
    Tensor<double> out(z.shape());
    for (int i = 0; i < z.dim(0); ++i)
      for (int j = 0; j < 4; ++j) out.at(i, j) = z.at(i, perm[j]);
    return out;
  };
  const MetricReport p = evaluate(*ds, permuted, cfg);
  note("permuted: FactorVAE %.4f MIG %.4f DCI-D %.4f DCI-C %.4f DCI-I %.4f", p.factorvae, p.mig,
       p.dci_disentanglement, p.dci_completeness, p.dci_informativeness);
  const double tol = 1e-12;
  ok &= p.factorvae == r.factorvae && p.mig == r.mig && std::abs(p.dci_disentanglement - r.dci_disentanglement) < tol &&
        std::abs(p.dci_completeness - r.dci_completeness) < tol &&
        std::abs(p.dci_informativeness - r.dci_informativeness) < tol;
  return ok;
}

// ---- 5 -------------------------------------------------------------------

std::vector<Tensor<double>> values(const ad::ParamSet<double>& set) {
  std::vector<Tensor<double>> out;
  for (const auto& p : set) out.push_back(p.value);
  return out;
}

bool ablation_identity() {
  RunConfig rc = toy_config();
  rc.train.weights = {0, 0, 0};
  rc.train.precision = Precision::kFloat64;
  auto ds = make_dataset(rc.data);
  TrainState<double> st(rc.train, model_dims_for(rc.train, *ds), format_run_config(rc));
  const auto enc0 = values(st.models.encoder.params()), dec0 = values(st.models.decoder.params());
  const auto proto0 = values(st.models.proto.params()), disc0 = values(st.models.disc.params());
  double worst = 0;
  for (int s = 0; s < 50; ++s) {
    const LossReport r = train_step(st, *ds);
    worst = std::max(worst, std::abs(r.total - r.neg_elbo));
  }
  const bool proto_same = values(st.models.proto.params()) == proto0;
  const bool disc_same = values(st.models.disc.params()) == disc0;
  const bool enc_moved = values(st.models.encoder.params()) != enc0;
  const bool dec_moved = values(st.models.decoder.params()) != dec0;
  note("50 steps: max |total + L_V| = %.3e; proto unchanged %d, disc unchanged %d, encoder moved %d, decoder moved %d",
       worst, proto_same, disc_same, enc_moved, dec_moved);
  return worst <= 1e-6 && proto_same && disc_same && enc_moved && dec_moved;
}

// ---- 6, 7 ----------------------------------------------------------------

struct ToyRun {
  std::uint64_t seed = 0;
  bool proto = false;
  double mig = 0;
  std::vector<double> kl;
  int active = 0;
  fs::path checkpoint;
};

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

std::vector<ToyRun> g_proto_runs;

ToyRun train_toy(std::uint64_t seed, bool proto) {
  RunConfig rc = toy_config();
  rc.train.seed = seed;
  rc.eval.seed = seed;
  if (!proto) rc.train.weights = {0, 0, 0};
  auto ds = make_dataset(rc.data);
  TrainState<float> st(rc.train, model_dims_for(rc.train, *ds), format_run_config(rc));
  ToyRun run;
  run.seed = seed;
  run.proto = proto;
  const std::string tag = std::string(proto ? "protovae" : "vae") + "_seed" + std::to_string(seed);
  run.checkpoint = g_work / (tag + ".npz");
  TrainOutputs out;
  out.checkpoint = run.checkpoint.string();
  out.metrics_log = (g_work / (tag + ".log")).string();
  fs::remove(out.metrics_log);
  const auto t0 = std::chrono::steady_clock::now();
  train(st, *ds, out);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  std::vector<std::int64_t> all(ds->size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<std::int64_t>(i);
  const auto kl = kl_per_dim(st.models.encoder.encode(ds->images(all)));
  for (float v : kl.data()) {
    run.kl.push_back(v);
    run.active += v > 0.1;
  }
  const MetricReport rep = evaluate(*ds, encoder_representation(*ds, st.models.encoder), rc.eval);
  run.mig = rep.mig;
  std::string kls;
  for (double v : run.kl) kls += (kls.empty() ? "" : " ") + std::to_string(v);
  note("%-16s %5.0f s  MIG %.4f  FactorVAE %.3f  DCI-D %.3f  KL per dim [%s]  dims with KL > 0.1: %d", tag.c_str(), secs,
       rep.mig, rep.factorvae, rep.dci_disentanglement, kls.c_str(), run.active);
  return run;
}

bool desk_scale_effect() {
  std::vector<ToyRun> proto, plain;
  for (std::uint64_t s = 0; s < 3; ++s) proto.push_back(train_toy(s, true));
  for (std::uint64_t s = 0; s < 3; ++s) plain.push_back(train_toy(s, false));
  g_proto_runs = proto;
  std::vector<double> mp, mv;
  for (const auto& r : proto) mp.push_back(r.mig);
  for (const auto& r : plain) mv.push_back(r.mig);
  const double a = median(mp), b = median(mv);
  int exact_two = 0;
  for (const auto& r : proto) exact_two += r.active == 2;
  note("(a) median MIG: ProtoVAE %.4f, plain VAE %.4f, gap %.4f (gate >= 0.05)", a, b, a - b);
  note("(b) ProtoVAE seeds with exactly 2 dims above 0.1 nats: %d of 3 (gate >= 2)", exact_two);
  return a >= b + 0.05 && exact_two >= 2;
}

bool prototype_clustering() {
  if (g_proto_runs.empty()) {
    // Criterion 6 was skipped; reuse its checkpoints if an earlier run left them.
    for (std::uint64_t s = 0; s < 3; ++s) {
      ToyRun r;
      r.seed = s;
      r.checkpoint = g_work / ("protovae_seed" + std::to_string(s) + ".npz");
      if (!fs::exists(r.checkpoint)) {
        note("no ProtoVAE checkpoint at %s; run criterion 6 first", r.checkpoint.c_str());
        return false;
      }
      g_proto_runs.push_back(r);
    }
  }
  RunConfig rc = toy_config();
  auto ds = make_dataset(rc.data);
  std::vector<double> acc;
  for (const auto& run : g_proto_runs) {
    auto st = load_checkpoint<float>(run.checkpoint.string());
    EmbedConfig cfg;
    cfg.n = 1000;
    cfg.seed = run.seed;
    const PairEmbeddingExport e = export_pair_embeddings(st->models, *ds, cfg, st->config.weights.lambda);
    acc.push_back(nearest_prototype_accuracy(e.embeddings, e.factor));
    note("seed %llu: nearest-prototype accuracy %.4f over %d ground-truth pairs", (unsigned long long)run.seed,
         acc.back(), cfg.n);
  }
  const double m = median(acc);
  note("median accuracy %.4f (gate >= 0.70, chance 0.50)", m);
  return m >= 0.70;
}

// ---- 8 -------------------------------------------------------------------

bool same_state(const TrainState<double>& a, const TrainState<double>& b) {
  auto same = [](const ad::ParamSet<double>& x, const ad::ParamSet<double>& y) { return values(x) == values(y); };
  return a.step == b.step && same(a.models.encoder.params(), b.models.encoder.params()) &&
         same(a.models.decoder.params(), b.models.decoder.params()) &&
         same(a.models.proto.params(), b.models.proto.params()) && same(a.models.disc.params(), b.models.disc.params()) &&
         a.main_opt.first_moments() == b.main_opt.first_moments() &&
         a.main_opt.second_moments() == b.main_opt.second_moments() &&
         a.disc_opt.first_moments() == b.disc_opt.first_moments() &&
         a.disc_opt.second_moments() == b.disc_opt.second_moments() && rng_state(a.batch_rng) == rng_state(b.batch_rng) &&
         rng_state(a.eps_rng) == rng_state(b.eps_rng) && rng_state(a.plan_rng) == rng_state(b.plan_rng) &&
         rng_state(a.disc_rng) == rng_state(b.disc_rng);
}

bool determinism() {
  RunConfig rc = toy_config();
  rc.train.precision = Precision::kFloat64;
  rc.train.seed = 11;
  rc.train.steps = 200;
  auto ds = make_dataset(rc.data);
  const ModelDims dims = model_dims_for(rc.train, *ds);

  auto trace = [&](TrainState<double>& st, int steps) {
    std::vector<std::string> lines;
    for (int s = 0; s < steps; ++s) {
      const LossReport r = train_step(st, *ds);
      char buf[64];
      std::string line;
      for (double v : {r.total, r.neg_elbo, r.l_e, r.l_u, r.l_c, r.l_i, r.l_d}) {
        std::snprintf(buf, sizeof buf, "%a ", v);
        line += buf;
      }
      lines.push_back(line);
    }
    return lines;
  };
  TrainState<double> a(rc.train, dims, format_run_config(rc)), b(rc.train, dims, format_run_config(rc));
  const auto ta = trace(a, 200);
  const auto tb = trace(b, 200);
  const bool traces = ta == tb;
  note("two 200-step 64-bit runs: loss traces identical %d, final states identical %d", traces, same_state(a, b));

  RunConfig half = rc;
  half.train.steps = 100;
  TrainState<double> c(half.train, dims, format_run_config(rc));
  trace(c, 100);
  const fs::path ck = g_work / "resume.npz";
  save_checkpoint(c, ck.string());
  auto resumed = load_checkpoint<double>(ck.string());
  const auto tr = trace(*resumed, 100);
  const bool resume_trace = std::equal(tr.begin(), tr.end(), ta.begin() + 100);
  const bool resume_state = same_state(*resumed, a);
  note("resume at 100 and run to 200: trace matches %d, state matches %d", resume_trace, resume_state);

  const fs::path full = g_work / "full.npz";
  save_checkpoint(a, full.string());
  TraverseConfig tc;
  tc.seed_images = {0, 100, 200};
  std::string first;
  bool grids = true;
  for (int invocation = 0; invocation < 2; ++invocation) {
    auto st = load_checkpoint<double>(full.string());
    const std::string pnm = traverse(st->models, *ds, tc).grid.encode_pnm();
    if (invocation == 0) first = pnm;
    else grids = pnm == first;
  }
  note("traversal grid (%zu bytes) identical across invocations: %d", first.size(), grids);
  return traces && same_state(a, b) && resume_trace && resume_state && grids;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--work" && i + 1 < argc) {
      g_work = argv[++i];
    } else if (arg == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string tok; std::getline(ss, tok, ',');) only.insert(std::stoi(tok));
    } else {
      std::fprintf(stderr, "usage: %s [--work DIR] [--only 1,2,...]\n", argv[0]);
      return 2;
    }
  }
  fs::create_directories(g_work);

  struct Criterion {
    const char* name;
    std::function<bool()> run;
    double time_limit = 0;  // seconds, 0 for none
  };
  const std::vector<Criterion> criteria{
      {"gradient correctness", gradients, 120},
      {"closed-form oracles", closed_forms},
      {"episode invariants", episode_invariants},
      {"metric oracles", metric_oracles, 300},
      {"ablation identity", ablation_identity},
      {"desk-scale disentanglement effect", desk_scale_effect},
      {"prototype clustering of ground-truth pairs", prototype_clustering},
      {"determinism and persistence", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const Criterion& c = criteria[i];
    std::printf("criterion %d: %s\n", id, c.name);
    std::fflush(stdout);
    const auto t0 = std::chrono::steady_clock::now();
    bool ok = false;
    try {
      ok = c.run();
    } catch (const std::exception& e) {
      note("exception: %s", e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.time_limit > 0 && secs >= c.time_limit) {
      note("took %.1f s, limit %.0f s", secs, c.time_limit);
      ok = false;
    }
    std::printf("%s criterion %d (%s) [%.1f s]\n", ok ? "PASS" : "FAIL", id, c.name, secs);
    std::fflush(stdout);
    failed += !ok;
  }
  return failed == 0 ? 0 : 1;
}
