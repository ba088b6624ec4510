// protovae command line: gen-data, train, eval, traverse, embed-export.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "protovae/artifacts.hpp"
#include "protovae/config.hpp"
#include "protovae/keyvalue.hpp"
#include "protovae/npz.hpp"
#include "protovae/trainer.hpp"

namespace fs = std::filesystem;
using namespace protovae;

namespace {

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

// "--section.key value" or "--section.key=value" pairs left over by the parser.
std::vector<std::pair<std::string, std::string>> overrides(const std::vector<std::string>& extras) {
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& a = extras[i];
    if (a.rfind("--", 0) != 0) throw std::invalid_argument("unexpected argument '" + a + "'");
    std::string key = a.substr(2);
    if (const auto eq = key.find('='); eq != std::string::npos) {
      out.emplace_back(key.substr(0, eq), key.substr(eq + 1));
      continue;
    }
    if (i + 1 >= extras.size()) throw std::invalid_argument("option --" + key + " needs a value");
    out.emplace_back(key, extras[++i]);
  }
  return out;
}

// Config file (or a fallback text) with flag overrides applied last.
RunConfig resolve_config(const std::string& config_path, const std::string& fallback,
                         const std::vector<std::string>& extras) {
  std::string text = fallback;
  if (!config_path.empty()) {
    if (!fs::is_regular_file(config_path)) throw std::runtime_error("config file not found: " + config_path);
    text = read_text(config_path);
  }
  RunConfig cfg = parse_run_config(text);
  for (const auto& [k, v] : overrides(extras)) set_config_value(cfg, k, v);
  cfg.train.validate();
  return cfg;
}

// Creates <root>/<prefix>-<timestamp>[-n] with a single mkdir so concurrent runs never share one.
fs::path make_run_dir(const std::string& prefix, const std::string& name) {
  const char* env = std::getenv("PROTOVAE_RUN_DIR");
  const fs::path root = env && *env ? fs::path(env) : fs::path("runs");
  fs::create_directories(root);
  if (!name.empty()) {
    const fs::path dir = root / name;
    if (!fs::create_directory(dir)) throw std::runtime_error("run directory already exists: " + dir.string());
    return dir;
  }
  const std::time_t now = std::time(nullptr);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", std::localtime(&now));
  for (int n = 0;; ++n) {
    const fs::path dir = root / (prefix + "-" + stamp + (n ? "-" + std::to_string(n) : ""));
    if (fs::create_directory(dir)) return dir;
  }
}

void print_warnings(const GroundTruthDataset& ds) {
  for (const auto& w : ds.warnings()) std::cerr << "warning: " << w << '\n';
}

std::unique_ptr<GroundTruthDataset> dataset_for(const RunConfig& cfg) {
  auto ds = make_dataset(cfg.data);
  print_warnings(*ds);
  return ds;
}

std::string checkpoint_config(const std::string& path) {
  npz::Reader r(path);
  return npz::text_of(r.read("config"));
}

int run_gen_data(const std::string& config_path, const std::string& name, const std::vector<std::string>& extras) {
  const RunConfig cfg = resolve_config(config_path, "", extras);
  const auto ds = dataset_for(cfg);
  const std::int64_t n = ds->size();
  const int nf = ds->num_factors();
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(n) * ds->image_size());
  std::vector<std::int32_t> classes(static_cast<std::size_t>(n) * nf);
  std::vector<float> img(ds->image_size());
  for (std::int64_t i = 0; i < n; ++i) {
    ds->render(i, img);
    for (std::size_t p = 0; p < img.size(); ++p)
      pixels[i * img.size() + p] = static_cast<std::uint8_t>(std::lround(std::clamp(img[p], 0.0f, 1.0f) * 255.0f));
    const auto f = index_to_factors(i, ds->factors());
    std::copy(f.begin(), f.end(), classes.begin() + i * nf);
  }
  std::string names;
  for (const auto& f : ds->factors()) names += f.name + "\n";

  const fs::path dir = make_run_dir("gen-data", name);
  write_text(dir / "config.cfg", format_run_config(cfg));
  npz::write((dir / "data.npz").string(),
             {{"images", npz::make_array(pixels, {n, ds->height(), ds->width(), ds->channels()})},
              {"factor_classes", npz::make_array(classes, {n, nf})},
              {"factor_names", npz::make_text(names)}});
  std::cout << (dir / "data.npz").string() << '\n';
  return 0;
}

template <typename T>
void train_run(const RunConfig& cfg, const GroundTruthDataset& ds, const fs::path& dir) {
  TrainState<T> state(cfg.train, model_dims_for(cfg.train, ds), format_run_config(cfg));
  TrainOutputs out;
  out.checkpoint = (dir / "checkpoint.npz").string();
  out.metrics_log = (dir / "metrics.log").string();
  out.on_log = [](std::int64_t step, const LossReport& r) {
    std::printf("step %lld total %.4f neg_elbo %.4f l_p %.4f l_i %.4f l_d %.4f\n", static_cast<long long>(step),
                r.total, r.neg_elbo, r.l_p, r.l_i, r.l_d);
    std::fflush(stdout);
  };
  train(state, ds, out);
}

int run_train(const std::string& config_path, const std::string& name, const std::vector<std::string>& extras) {
  if (config_path.empty()) throw std::invalid_argument("train needs --config");
  const RunConfig cfg = resolve_config(config_path, "", extras);
  const auto ds = dataset_for(cfg);
  model_dims_for(cfg.train, *ds).validate();
  const fs::path dir = make_run_dir("train", name);
  write_text(dir / "config.cfg", format_run_config(cfg));
  if (cfg.train.precision == Precision::kFloat64) {
    train_run<double>(cfg, *ds, dir);
  } else {
    train_run<float>(cfg, *ds, dir);
  }
  std::cout << (dir / "checkpoint.npz").string() << '\n';
  return 0;
}

// A checkpoint file, or every *.npz (and */checkpoint.npz) inside a directory.
std::vector<fs::path> collect_checkpoints(const std::string& target) {
  std::vector<fs::path> out;
  if (fs::is_regular_file(target)) return {fs::path(target)};
  if (!fs::is_directory(target)) throw std::runtime_error("checkpoint not found: " + target);
  for (const auto& e : fs::directory_iterator(target)) {
    if (e.is_regular_file() && e.path().extension() == ".npz") out.push_back(e.path());
    if (e.is_directory() && fs::is_regular_file(e.path() / "checkpoint.npz")) out.push_back(e.path() / "checkpoint.npz");
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw std::runtime_error("no checkpoints in " + target);
  return out;
}

std::string report_stem(const fs::path& checkpoint) {
  const std::string stem = checkpoint.stem().string();
  return stem == "checkpoint" && checkpoint.has_parent_path() ? checkpoint.parent_path().filename().string() : stem;
}

int run_eval(const std::string& config_path, const std::string& target, const std::string& name,
             const std::vector<std::string>& extras) {
  const auto checkpoints = collect_checkpoints(target);
  const RunConfig cfg = resolve_config(config_path, checkpoint_config(checkpoints.front().string()), extras);
  const auto ds = dataset_for(cfg);
  std::vector<MetricReport> reports;
  for (const auto& c : checkpoints) reports.push_back(evaluate_checkpoint(c.string(), *ds, cfg.eval));

  const fs::path dir = make_run_dir("eval", name);
  write_text(dir / "config.cfg", format_run_config(cfg));
  std::string summary = "checkpoints: " + std::to_string(reports.size()) + "\n";
  struct Column {
    const char* key;
    double MetricReport::*field;
  };
  const Column columns[] = {{"factorvae_score", &MetricReport::factorvae},
                            {"mig", &MetricReport::mig},
                            {"dci_disentanglement", &MetricReport::dci_disentanglement},
                            {"dci_completeness", &MetricReport::dci_completeness},
                            {"dci_informativeness", &MetricReport::dci_informativeness}};
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const std::string text = "checkpoint: " + checkpoints[i].string() + "\n" + reports[i].to_text();
    write_text(dir / ("report_" + report_stem(checkpoints[i]) + ".txt"), text);
    for (const auto& w : reports[i].warnings) std::cerr << "warning: " << checkpoints[i].string() << ": " << w << '\n';
  }
  for (const auto& col : columns) {
    double mean = 0;
    for (const auto& r : reports) mean += r.*col.field;
    mean /= static_cast<double>(reports.size());
    double var = 0;
    for (const auto& r : reports) var += (r.*col.field - mean) * (r.*col.field - mean);
    const double sd = reports.size() > 1 ? std::sqrt(var / static_cast<double>(reports.size() - 1)) : 0.0;
    summary += std::string(col.key) + ": " + kv::format_double(mean) + " +- " + kv::format_double(sd) + "\n";
  }
  write_text(dir / "summary.txt", summary);
  std::cout << summary;
  return 0;
}

int run_traverse(const std::string& config_path, const std::string& checkpoint, const std::string& name,
                 const std::vector<std::string>& extras) {
  if (!fs::is_regular_file(checkpoint)) throw std::runtime_error("checkpoint not found: " + checkpoint);
  const RunConfig cfg = resolve_config(config_path, checkpoint_config(checkpoint), extras);
  const auto ds = dataset_for(cfg);
  AnyState any = load_any_checkpoint(checkpoint);
  const Traversal t = std::visit([&](auto& s) { return traverse(s->models, *ds, cfg.traverse); }, any);
  const fs::path dir = make_run_dir("traverse", name);
  write_text(dir / "config.cfg", format_run_config(cfg));
  const fs::path grid = dir / (t.grid.channels == 1 ? "traversal.pgm" : "traversal.ppm");
  write_text(grid, t.grid.encode_pnm());
  for (const auto& c : t.grid.comments) std::cout << c << '\n';
  std::cout << grid.string() << '\n';
  return 0;
}

int run_embed(const std::string& config_path, const std::string& checkpoint, const std::string& name,
              const std::vector<std::string>& extras) {
  if (!fs::is_regular_file(checkpoint)) throw std::runtime_error("checkpoint not found: " + checkpoint);
  const RunConfig trained = parse_run_config(checkpoint_config(checkpoint));
  const RunConfig cfg = resolve_config(config_path, checkpoint_config(checkpoint), extras);
  const auto ds = dataset_for(cfg);
  AnyState any = load_any_checkpoint(checkpoint);
  const PairEmbeddingExport e = std::visit(
      [&](auto& s) { return export_pair_embeddings(s->models, *ds, cfg.embed, trained.train.weights.lambda); }, any);
  const fs::path dir = make_run_dir("embed", name);
  write_text(dir / "config.cfg", format_run_config(cfg));
  write_text(dir / "embeddings.csv", e.to_csv());
  const auto& labels = cfg.embed.mode == EmbedMode::kGroundTruth ? e.factor : e.dim;
  if (cfg.embed.n >= 2) {
    std::cout << "nearest_prototype_accuracy: " << kv::format_double(nearest_prototype_accuracy(e.embeddings, labels))
              << '\n';
  }
  std::cout << (dir / "embeddings.csv").string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ProtoVAE training, evaluation and figure artifacts"};
  app.require_subcommand(1);
  std::string config_path;
  std::string checkpoint;
  std::string name;

  auto add = [&](const char* cmd, const char* help, bool needs_checkpoint) {
    CLI::App* sub = app.add_subcommand(cmd, help);
    sub->add_option("--config", config_path, "key = value configuration file");
    sub->add_option("--name", name, "run directory name (default: <command>-<timestamp>)");
    if (needs_checkpoint) sub->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    sub->allow_extras();
    sub->footer("Any configuration key can be overridden as --section.key value.");
    return sub;
  };
  CLI::App* gen = add("gen-data", "render the toy dataset into an npz archive", false);
  CLI::App* tr = add("train", "train a model", false);
  CLI::App* ev = add("eval", "score a checkpoint or a directory of checkpoints", false);
  ev->add_option("--checkpoint", checkpoint, "checkpoint file or directory")->required();
  CLI::App* trav = add("traverse", "latent traversal image grid", true);
  CLI::App* emb = add("embed-export", "prototypical pair embeddings as CSV", true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (gen->parsed()) return run_gen_data(config_path, name, gen->remaining());
    if (tr->parsed()) return run_train(config_path, name, tr->remaining());
    if (ev->parsed()) return run_eval(config_path, checkpoint, name, ev->remaining());
    if (trav->parsed()) return run_traverse(config_path, checkpoint, name, trav->remaining());
    if (emb->parsed()) return run_embed(config_path, checkpoint, name, emb->remaining());
  } catch (const std::exception& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::cerr << "error: " << msg << '\n';
    return 1;
  }
  return 1;
}
