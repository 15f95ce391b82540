#pragma once

// Training loop, false-negative counting and sweep drivers.

#include "cosmo/ecm.hpp"
#include "cosmo/encoder.hpp"
#include "cosmo/gritsampler.hpp"
#include "cosmo/labelkit.hpp"
#include "cosmo/params.hpp"
#include "cosmo/retrieval.hpp"
#include "cosmo/synthdata.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cosmo::harness {

enum class ItcMode { OneHot, SITC, MD, CS };
enum class Optimizer { SGD, SGDMomentum };
enum class ConDKind { Oracle, Trained };

std::string_view to_string(ItcMode m);
std::string_view to_string(Optimizer o);
std::string_view to_string(ConDKind k);
ItcMode parse_itc_mode(std::string_view s);
Optimizer parse_optimizer(std::string_view s);
ConDKind parse_con_d_kind(std::string_view s);

struct ConDSettings {
  ConDKind kind = ConDKind::Oracle;
  ecm::OracleNoise oracle;
  // Trained flavour: pre-training epochs (S-ITC + MLM + ITM, GRIT, no ECM)
  // followed by ITM fine-tuning on recorded pairs vs random negatives.
  int pretrain_epochs = 10;
  int finetune_epochs = 50;
  double finetune_lr = 0.3;

  bool operator==(const ConDSettings&) const = default;
};

struct TrainConfig {
  int epochs = 10;
  double learning_rate = 0.05;
  Optimizer optimizer = Optimizer::SGD;
  double momentum = 0.9;
  double alpha = 0.5;
  grit::SamplerConfig sampler;
  ecm::EcmConfig ecm;
  ItcMode itc_mode = ItcMode::OneHot;
  bool ecm_enabled = false;
  bool ecm_eliminate_only = false;
  std::uint64_t seed = 0;
  ModelDims dims;
  double temperature = 0.07;
  // Multiplier on the encoder weight init (see init_params).
  double init_scale = 0.03;
  double ema_coeff = 0.995;
  // 0 means 8 * batch_size.
  std::size_t md_queue_size = 0;
  double mask_prob = 0.15;
  ConDSettings con_d;

  std::size_t queue_capacity() const;
  // Throws std::invalid_argument naming the offending field.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// Checks dataset and model dimensions agree.
void check_compatible(const TrainConfig& cfg, const synthdata::SyntheticDataset& ds);

struct FnCounts {
  std::size_t fn_img = 0;
  std::size_t fn_txt = 0;
  std::size_t neg_img = 0;
  std::size_t neg_txt = 0;

  FnCounts& operator+=(const FnCounts& o);
};

struct EpochMetrics {
  int epoch = 0;
  double itc = 0.0;
  double itm = 0.0;
  double mlm = 0.0;
  double total = 0.0;
  std::size_t steps = 0;
  // Ground-truth false negatives among the ITM negatives actually used.
  FnCounts fn;
  ecm::EcmStats ecm;
  std::optional<labelkit::ShapeReport> shape;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const EpochMetrics& m);
std::string ecm_stats_csv_header();
std::string ecm_stats_csv_row(const EpochMetrics& m);

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, ModelParams last_good)
      : std::runtime_error(what), last_good_(std::move(last_good)) {}
  const ModelParams& last_good() const { return last_good_; }

 private:
  ModelParams last_good_;
};

struct TrainState {
  ModelParams params;
  ParamBundle velocity;
  std::optional<encoder::MomentumState> momentum;
  grit::GritSampler sampler;
  // Batches for the upcoming epoch.
  grit::BatchSchedule schedule;
  int epochs_done = 0;
  std::mt19937_64 rng;
};

TrainState init_state(const TrainConfig& cfg, const synthdata::SyntheticDataset& ds);

// One pass over state.schedule. Feeds embeddings to the sampler and leaves
// the next epoch's schedule in state.schedule. con_d may be null when ECM is
// disabled.
EpochMetrics train_epoch(TrainState& state, const synthdata::SyntheticDataset& ds,
                         const TrainConfig& cfg, const ecm::ConnectionDiscriminator* con_d);

// Parameter update: SGD w -= lr*g, or v = mu*v + g, w -= lr*v.
void apply_update(ModelParams& params, ParamBundle& velocity, const ParamBundle& grads,
                  const TrainConfig& cfg);

struct TrainResult {
  ModelParams params;
  std::vector<EpochMetrics> epochs;
  // Schedule of every epoch that was run, in order.
  std::vector<grit::BatchSchedule> schedules;
  grit::BatchSchedule next_schedule;
  std::optional<encoder::MomentumState> momentum;
};

using EpochCallback = std::function<void(const EpochMetrics&, const TrainState&)>;

TrainResult train(const TrainConfig& cfg, const synthdata::SyntheticDataset& ds,
                  const ecm::ConnectionDiscriminator* con_d, const EpochCallback& on_epoch = {});

// Builds the configured Con-D (oracle, or a freshly trained scorer).
std::unique_ptr<ecm::ConnectionDiscriminator> make_con_d(const TrainConfig& cfg,
                                                         const synthdata::SyntheticDataset& ds);

struct ConDRecipe {
  TrainConfig pretrain;  // itc_mode / ECM fields are overridden (S-ITC, no ECM)
  int finetune_epochs = 50;
  double finetune_lr = 0.3;
  std::uint64_t seed = 0;
};

ConDRecipe default_con_d_recipe(const TrainConfig& cfg);

// Separate model trained with S-ITC + MLM + ITM under GRIT batching, then
// ITM fine-tuned on recorded pairs against balanced random negatives.
// Throws TrainingDiverged on a non-finite loss.
ecm::TrainedDiscriminator train_con_d(const synthdata::SyntheticDataset& ds,
                                      const ConDRecipe& recipe);

// Area under the ROC curve of prob(i, i) against prob(i, j), j != i random.
double pair_auc(const ecm::ConnectionDiscriminator& con_d, const synthdata::SyntheticDataset& ds,
                std::span<const std::size_t> indices, std::uint64_t seed);

// A negative is judged false if judge.prob(img, txt) > threshold.
struct Judge {
  const ecm::ConnectionDiscriminator* scorer = nullptr;
  double threshold = 0.5;
};

struct ReplayEntry {
  std::size_t batch = 0;
  ecm::AnchorSide side = ecm::AnchorSide::Image;
  std::size_t anchor = 0;    // example index of the anchor
  std::size_t negative = 0;  // example index of the selected negative
  bool judged_false = false;
};

struct FnReport {
  std::size_t fn_wrt_image = 0;
  std::size_t fn_wrt_text = 0;
  std::size_t negatives_image = 0;
  std::size_t negatives_text = 0;
  std::size_t total_negatives = 0;
  std::vector<ReplayEntry> log;

  double ratio_image() const;
  double ratio_text() const;
  double ratio() const;  // (fn_wrt_image + fn_wrt_text) / total_negatives
};

FnReport fn_report_from_counts(const FnCounts& c);

// Replays one epoch: per batch and anchor, the hardest in-batch negative
// under `params`, judged by `judge`.
FnReport count_false_negatives(const synthdata::SyntheticDataset& ds,
                               const grit::BatchSchedule& schedule, const ModelParams& params,
                               const Judge& judge);

// Label shape of `mode` targets on a fixed model. The momentum model is taken
// to be `params` itself and the MD queue holds the embeddings of preceding
// batches (the schedule is cycled until the queue is full before recording).
// Only full batches are recorded.
labelkit::ShapeReport analyze_label_shape(const ModelParams& params,
                                          const synthdata::SyntheticDataset& ds,
                                          const grit::BatchSchedule& schedule, ItcMode mode,
                                          double alpha, std::size_t queue_size);

enum class SweepAxis { M, Alpha };
std::string_view to_string(SweepAxis a);
SweepAxis parse_sweep_axis(std::string_view s);

struct SweepRow {
  double value = 0.0;
  std::uint64_t seed = 0;
  FnReport fn;
  retrieval::RetrievalReport retrieval;
};

struct SweepOptions {
  SweepAxis axis = SweepAxis::M;
  std::vector<double> values;
  std::vector<std::uint64_t> seeds{0};
  retrieval::RetrievalOptions eval;
  // Called after each row (for incremental flushing).
  std::function<void(const SweepRow&)> on_row;
};

TrainConfig with_axis_value(TrainConfig cfg, SweepAxis axis, double value);

// Training-time FN report over epochs [2, E] (epoch 1 is random for every M).
FnReport training_fn_report(const TrainResult& result);

std::vector<SweepRow> sweep(const TrainConfig& base, const synthdata::SyntheticDataset& ds,
                            const SweepOptions& options);

std::string sweep_csv_header();
std::string sweep_csv_row(SweepAxis axis, const SweepRow& row);

}  // namespace cosmo::harness
