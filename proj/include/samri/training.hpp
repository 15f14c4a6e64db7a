#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "samri/embedding_bank.hpp"
#include "samri/loss.hpp"
#include "samri/model.hpp"
#include "samri/preprocess.hpp"
#include "samri/prompts.hpp"

namespace samri {

struct OptimizerConfig {
  double lr = 1e-3;  // full-scale runs used 1e-5 at batch 1024
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.1;
  std::size_t batch = 16;

  void validate() const;
};

struct SamplerConfig {
  std::size_t quota = 64;
  std::uint64_t seed = 0;
};

// ---- sampler --------------------------------------------------------------------

struct EpochPlan {
  /// Indices drawn from each dataset, in draw order.
  std::map<std::string, std::vector<std::size_t>> per_dataset;
  /// Shuffled concatenation of every (dataset, index) draw.
  std::vector<std::pair<std::string, std::size_t>> order;
};

/// Datasets smaller than the quota are drawn with replacement, the rest
/// (including those exactly at quota) without. Each dataset and the final
/// shuffle use their own stream derived from (seed, dataset, epoch).
EpochPlan plan_epoch(const std::map<std::string, std::size_t>& sizes, const SamplerConfig& cfg, std::size_t epoch);

// ---- optimizer ------------------------------------------------------------------

/// One AdamW update of a flat tensor at 1-based step t, decay decoupled
/// from the adaptive term:
///   theta -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)
void adamw_update(std::span<double> theta, std::span<const double> grad, std::span<double> m, std::span<double> v,
                  const OptimizerConfig& cfg, std::size_t t);

class AdamW {
 public:
  explicit AdamW(const OptimizerConfig& cfg);
  /// Updates every nonfrozen parameter from its accumulated grad (missing
  /// grads count as zero). Throws NonFiniteGradient before touching anything.
  void step(tensor::ParameterSet& params);
  std::size_t steps() const { return t_; }

 private:
  OptimizerConfig cfg_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// ---- checkpoints ----------------------------------------------------------------

struct CheckpointSlot {
  std::string name;
  PromptRegime regime = PromptRegime::BoxOnly;
  bool zero_shot = false;  // criterion: zero-shot validation loss, else seen
  bool filled = false;
  std::size_t epoch = 0;
  double seen_val = 0;
  double zs_val = 0;
  std::filesystem::path snapshot;
};

/// The four retained checkpoints, one per (regime, validation criterion).
/// Each slot keeps the earliest epoch attaining the strict minimum so far.
class CheckpointSet {
 public:
  CheckpointSet();
  /// Returns the indices of slots that now point at `epoch`. NaN losses
  /// never win a slot.
  std::vector<std::size_t> observe(PromptRegime regime, std::size_t epoch, double seen_val, double zs_val);
  std::vector<CheckpointSlot>& slots() { return slots_; }
  const std::vector<CheckpointSlot>& slots() const { return slots_; }
  const CheckpointSlot& slot(const std::string& name) const;
  nlohmann::json to_json() const;

 private:
  std::vector<CheckpointSlot> slots_;
};

/// Decoder snapshot plus `<stem>.json` sidecar.
void save_checkpoint(const std::filesystem::path& snapshot, const SamModel& model, const nlohmann::json& sidecar);

struct LoadedCheckpoint {
  std::unique_ptr<SamModel> model;
  nlohmann::json sidecar;
};

/// Rebuilds the frozen parts from the sidecar's model config and loads the
/// decoder. Throws ChecksumMismatch when the rebuilt frozen hash differs from
/// the recorded one.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& snapshot);
std::filesystem::path sidecar_path(const std::filesystem::path& snapshot);

// ---- training -------------------------------------------------------------------

enum class EmbeddingSource { Bank, OnTheFly };

struct RunConfig {
  ModelConfig model;
  LossConfig loss;
  OptimizerConfig optim;
  SamplerConfig sampler;
  std::size_t epochs = 50;
  PromptRegime regime = PromptRegime::BoxOnly;
  bool jitter = true;
  int max_shift = 20;
  EmbeddingSource source = EmbeddingSource::Bank;
  std::vector<std::string> zero_shot_datasets;
  /// Checkpoints, history and failure dumps go here; empty writes nothing.
  std::filesystem::path out_dir;
};

nlohmann::json to_json(const RunConfig& c);
/// Missing fields keep their defaults.
RunConfig run_config_from_json(const nlohmann::json& j);

struct TrainingData {
  std::vector<SliceSample> train;     // seen datasets, train split
  std::vector<SliceSample> seen_val;  // seen datasets, val split
  std::vector<SliceSample> zs_val;    // held-out datasets, val split
};

/// Routes corpus entries: datasets listed as zero-shot contribute only their
/// val split (to zs_val); the others give train and seen_val.
TrainingData split_training_data(const std::vector<CorpusEntry>& corpus, const std::vector<std::string>& zero_shot);

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0;
  double seen_val = 0;
  double zs_val = 0;
};

/// Summed wall time of each training component over a run.
struct ComponentTimes {
  double data = 0;      // pixel normalization and patchify
  double encode = 0;    // encoder forward
  double decode = 0;    // bank lookup, prompt synthesis, decoder forward, loss
  double backward = 0;  // reverse pass and optimizer step
};

struct TrainResult {
  std::vector<EpochStats> history;
  std::vector<double> step_losses;
  CheckpointSet checkpoints;
  ComponentTimes times;
  double wall_seconds = 0;
  std::size_t encoder_invocations = 0;
  std::uint64_t frozen_hash_before = 0;
  std::uint64_t frozen_hash_after = 0;
};

/// Stage 2: decoder-only fine-tuning. Throws BankMissing when bank mode
/// lacks a bank or a key, NonFiniteLoss (after a state dump) on divergence.
/// `checkpoints` lets several regimes share the four slots.
TrainResult train(SamModel& model, const TrainingData& data, const RunConfig& cfg, const EmbeddingBank* bank,
                  CheckpointSet* checkpoints = nullptr);

/// Mean samri_loss over samples with un-jittered prompts; NaN when empty.
double validation_loss(const SamModel& model, const std::vector<SliceSample>& samples, const RunConfig& cfg,
                       const EmbeddingBank* bank);

/// "epoch,train_loss,seen_val,zs_val" rows.
std::string history_csv(const std::vector<EpochStats>& history);

}  // namespace samri
