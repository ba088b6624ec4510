#pragma once

// Training: the weighted objective, alternating discriminator updates,
// checkpoints and the metrics log.

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "protovae/adversary.hpp"
#include "protovae/config.hpp"
#include "protovae/episodes.hpp"
#include "protovae/optim.hpp"
#include "protovae/proto_metric.hpp"
#include "protovae/rng.hpp"
#include "protovae/synth_data.hpp"

namespace protovae {

// Randomness consumers; each owns a stream derived from the training seed.
enum StreamId : std::uint64_t { kInitStream = 1, kBatchStream, kEpsStream, kPlanStream, kDiscStream };

template <typename T>
struct Models {
  Models(const ModelDims& dims, std::uint64_t seed);

  Encoder<T> encoder;
  Decoder<T> decoder;
  ProtoNet<T> proto;
  Discriminator<T> disc;

 private:
  Models(const ModelDims& dims, nn::InitRng rng, int);
};

struct LossReport {
  double total = 0;
  double neg_elbo = 0;  // -L_V
  double recon_nll = 0;
  double kl = 0;
  double l_e = 0;
  double l_u = 0;
  double l_c = 0;
  double l_p = 0;
  double l_i = 0;
  double l_d = 0;
  double score_real = 0.5;
  double score_intervened = 0.5;
  std::vector<double> kl_per_dim;
  bool episode = false;    // L_U, L_C, L_I computed
  bool adversary = false;  // discriminator updated

  // "step=.. total=.. ..." line for the metrics log.
  std::string log_line(std::int64_t step) const;
};

template <typename T>
struct LossTerms {
  ad::Var<T> total;
  ad::Var<T> z;  // sampled codes
  LossReport report;
};

// Builds -L_V + alpha L_E + lambda (L_U + L_C) + kappa L_I on g. The encoder,
// decoder and prototypical network are trainable; the discriminator is frozen.
// Terms with zero weight are not built (L_E is still reported).
template <typename T>
LossTerms<T> total_loss(ad::Graph<T>& g, Models<T>& models, const Tensor<T>& x_nhwc, const Tensor<T>& eps,
                        const InterventionPlan& plan, const TrainConfig& config);

// L_D on detached codes against single-dimension interventions of them.
template <typename T>
ad::Var<T> discriminator_objective(ad::Graph<T>& g, Discriminator<T>& disc, const Tensor<T>& z,
                                   const InterventionPlan& plan, LossReport* report = nullptr);

template <typename T>
class TrainState {
 public:
  TrainState(const TrainConfig& config, const ModelDims& dims, std::string config_text);
  TrainState(const TrainState&) = delete;
  TrainState& operator=(const TrainState&) = delete;

  TrainConfig config;
  ModelDims dims;
  std::string config_text;  // resolved run configuration
  Models<T> models;
  Adam<T> main_opt;  // encoder, decoder, prototypical network
  Adam<T> disc_opt;
  std::int64_t step = 0;
  Rng batch_rng;
  Rng eps_rng;
  Rng plan_rng;
  Rng disc_rng;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One main update followed by one discriminator update (skipped when alpha = 0).
// Throws TrainingDiverged, leaving the state untouched, on a non-finite loss or gradient.
template <typename T>
LossReport train_step(TrainState<T>& state, const GroundTruthDataset& ds);

struct TrainOutputs {
  std::string checkpoint;   // rewritten atomically every checkpoint_every steps and at the end
  std::string metrics_log;  // appended every log_every steps
  std::function<void(std::int64_t, const LossReport&)> on_log;
};

// Runs until state.step == config.steps.
template <typename T>
void train(TrainState<T>& state, const GroundTruthDataset& ds, const TrainOutputs& out);

template <typename T>
void save_checkpoint(const TrainState<T>& state, const std::string& path);
template <typename T>
std::unique_ptr<TrainState<T>> load_checkpoint(const std::string& path);

using AnyState = std::variant<std::unique_ptr<TrainState<float>>, std::unique_ptr<TrainState<double>>>;
AnyState load_any_checkpoint(const std::string& path);

}  // namespace protovae
