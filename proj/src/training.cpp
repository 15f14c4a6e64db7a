#include "samri/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "samri/error.hpp"
#include "samri/rng.hpp"
#include "samri/snapshot.hpp"

namespace samri {

using tensor::Tensor;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string hex64(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

nlohmann::json json_number(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

void OptimizerConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::InvalidArgument, "optimizer config: " + m); };
  if (!(lr > 0)) fail("lr must be positive");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) fail("betas must lie in [0, 1)");
  if (!(eps > 0)) fail("eps must be positive");
  if (!(weight_decay >= 0)) fail("weight_decay must be non-negative");
  if (batch == 0) fail("batch must be positive");
}

// ---- sampler ----------------------------------------------------------------------

EpochPlan plan_epoch(const std::map<std::string, std::size_t>& sizes, const SamplerConfig& cfg, std::size_t epoch) {
  EpochPlan plan;
  for (const auto& [name, size] : sizes) {
    if (size == 0) throw Error(ErrorCode::InvalidArgument, "dataset " + name + " is empty");
    Xoshiro256 rng(derive_seed(cfg.seed, stream_tag("sampler.dataset." + name), epoch));
    std::vector<std::size_t> idx;
    idx.reserve(cfg.quota);
    if (size < cfg.quota) {
      for (std::size_t i = 0; i < cfg.quota; ++i) idx.push_back(static_cast<std::size_t>(rng.below(size)));
    } else {
      // partial Fisher-Yates: the first `quota` slots of a random permutation
      std::vector<std::size_t> perm(size);
      std::iota(perm.begin(), perm.end(), 0);
      for (std::size_t i = 0; i < cfg.quota; ++i) {
        const auto j = i + static_cast<std::size_t>(rng.below(size - i));
        std::swap(perm[i], perm[j]);
        idx.push_back(perm[i]);
      }
    }
    for (auto i : idx) plan.order.emplace_back(name, i);
    plan.per_dataset[name] = std::move(idx);
  }
  Xoshiro256 order_rng(derive_seed(cfg.seed, stream_tag("sampler.order"), epoch));
  shuffle(plan.order.begin(), plan.order.end(), order_rng);
  return plan;
}

// ---- optimizer --------------------------------------------------------------------

void adamw_update(std::span<double> theta, std::span<const double> grad, std::span<double> m, std::span<double> v,
                  const OptimizerConfig& cfg, std::size_t t) {
  if (grad.size() != theta.size() || m.size() != theta.size() || v.size() != theta.size())
    throw Error(ErrorCode::ShapeMismatch, "adamw_update: buffer sizes differ");
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double g = grad[i];
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
    const double mh = m[i] / bc1, vh = v[i] / bc2;
    theta[i] -= cfg.lr * (mh / (std::sqrt(vh) + cfg.eps) + cfg.weight_decay * theta[i]);
  }
}

AdamW::AdamW(const OptimizerConfig& cfg) : cfg_(cfg) { cfg_.validate(); }

void AdamW::step(tensor::ParameterSet& params) {
  auto& items = params.items();
  for (const auto& p : items) {
    if (p.frozen) {
      if (p.tensor.requires_grad())
        throw Error(ErrorCode::InvalidArgument, "frozen parameter " + p.name + " is recording gradients");
      continue;
    }
    for (double g : p.tensor.grad())
      if (!std::isfinite(g)) throw Error(ErrorCode::NonFiniteGradient, "gradient of " + p.name + " is not finite");
  }
  if (m_.empty()) {
    m_.resize(items.size());
    v_.resize(items.size());
  }
  if (m_.size() != items.size()) throw Error(ErrorCode::ShapeMismatch, "parameter set changed between steps");
  ++t_;
  std::vector<double> zeros;
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto& p = items[i];
    if (p.frozen) continue;
    const std::size_t n = p.tensor.numel();
    if (m_[i].empty()) {
      m_[i].assign(n, 0.0);
      v_[i].assign(n, 0.0);
    }
    std::span<const double> g = p.tensor.grad();
    if (g.size() != n) {
      zeros.assign(n, 0.0);
      g = zeros;
    }
    adamw_update(p.tensor.mutable_values(), g, m_[i], v_[i], cfg_, t_);
  }
}

// ---- checkpoints ------------------------------------------------------------------

CheckpointSet::CheckpointSet() {
  for (auto regime : {PromptRegime::BoxOnly, PromptRegime::BoxPoint})
    for (bool zs : {true, false}) {
      CheckpointSlot s;
      s.regime = regime;
      s.zero_shot = zs;
      s.name = std::string(regime == PromptRegime::BoxOnly ? "box_only" : "box_point") +
               (zs ? ".zero_shot_min" : ".seen_min");
      slots_.push_back(std::move(s));
    }
}

std::vector<std::size_t> CheckpointSet::observe(PromptRegime regime, std::size_t epoch, double seen_val,
                                                double zs_val) {
  std::vector<std::size_t> won;
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    auto& s = slots_[i];
    if (s.regime != regime) continue;
    const double v = s.zero_shot ? zs_val : seen_val;
    if (std::isnan(v)) continue;
    const double best = s.zero_shot ? s.zs_val : s.seen_val;
    if (!s.filled || v < best) {
      s.filled = true;
      s.epoch = epoch;
      s.seen_val = seen_val;
      s.zs_val = zs_val;
      won.push_back(i);
    }
  }
  return won;
}

const CheckpointSlot& CheckpointSet::slot(const std::string& name) const {
  for (const auto& s : slots_)
    if (s.name == name) return s;
  throw Error(ErrorCode::KeyNotFound, "no checkpoint slot " + name);
}

nlohmann::json CheckpointSet::to_json() const {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& s : slots_) {
    nlohmann::json j{{"slot", s.name}, {"regime", regime_name(s.regime)}, {"filled", s.filled}};
    if (s.filled) {
      j["epoch"] = s.epoch;
      j["seen_val"] = json_number(s.seen_val);
      j["zs_val"] = json_number(s.zs_val);
      j["snapshot"] = s.snapshot.string();
    }
    out.push_back(std::move(j));
  }
  return out;
}

std::filesystem::path sidecar_path(const std::filesystem::path& snapshot) {
  auto p = snapshot;
  p.replace_extension(".json");
  return p;
}

void save_checkpoint(const std::filesystem::path& snapshot, const SamModel& model, const nlohmann::json& sidecar) {
  if (snapshot.has_parent_path()) std::filesystem::create_directories(snapshot.parent_path());
  write_snapshot_file(snapshot, snapshot_of(model.params(), false));
  nlohmann::json j = sidecar;
  j["model"] = to_json(model.config());
  j["frozen_hash"] = hex64(model.frozen_hash());
  std::ofstream out(sidecar_path(snapshot));
  out << j.dump(2) << "\n";
  if (!out) throw Error(ErrorCode::IoError, "write " + sidecar_path(snapshot).string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& snapshot) {
  const auto side = sidecar_path(snapshot);
  std::ifstream in(side);
  if (!in) throw Error(ErrorCode::IoError, "cannot open checkpoint sidecar " + side.string());
  LoadedCheckpoint out;
  try {
    in >> out.sidecar;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, side.string() + ": " + e.what());
  }
  out.model = std::make_unique<SamModel>(model_config_from_json(out.sidecar.at("model")));
  const std::string want = out.sidecar.value("frozen_hash", "");
  if (!want.empty() && want != hex64(out.model->frozen_hash()))
    throw Error(ErrorCode::ChecksumMismatch, "frozen weights rebuilt from " + side.string() + " do not match its hash");
  load_snapshot(out.model->params(), read_snapshot_file(snapshot));
  return out;
}

// ---- config json ------------------------------------------------------------------

nlohmann::json to_json(const RunConfig& c) {
  return {{"model", to_json(c.model)},
          {"loss", to_json(c.loss)},
          {"optimizer",
           {{"lr", c.optim.lr},
            {"beta1", c.optim.beta1},
            {"beta2", c.optim.beta2},
            {"eps", c.optim.eps},
            {"weight_decay", c.optim.weight_decay},
            {"batch", c.optim.batch},
            {"paper_lr", 1e-5},
            {"paper_batch", 1024}}},
          {"sampler", {{"quota", c.sampler.quota}, {"seed", c.sampler.seed}, {"paper_quota", 5000}}},
          {"epochs", c.epochs},
          {"regime", regime_name(c.regime)},
          {"jitter", c.jitter},
          {"max_shift", c.max_shift},
          {"source", c.source == EmbeddingSource::Bank ? "bank" : "on_the_fly"},
          {"zero_shot_datasets", c.zero_shot_datasets}};
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  if (j.contains("model")) c.model = model_config_from_json(j["model"]);
  if (j.contains("loss")) c.loss = loss_config_from_json(j["loss"]);
  if (j.contains("optimizer")) {
    const auto& o = j["optimizer"];
    c.optim.lr = o.value("lr", c.optim.lr);
    c.optim.beta1 = o.value("beta1", c.optim.beta1);
    c.optim.beta2 = o.value("beta2", c.optim.beta2);
    c.optim.eps = o.value("eps", c.optim.eps);
    c.optim.weight_decay = o.value("weight_decay", c.optim.weight_decay);
    c.optim.batch = o.value("batch", c.optim.batch);
  }
  c.optim.validate();
  if (j.contains("sampler")) {
    c.sampler.quota = j["sampler"].value("quota", c.sampler.quota);
    c.sampler.seed = j["sampler"].value("seed", c.sampler.seed);
  }
  c.epochs = j.value("epochs", c.epochs);
  if (j.contains("regime")) c.regime = parse_regime(j["regime"].get<std::string>());
  c.jitter = j.value("jitter", c.jitter);
  c.max_shift = j.value("max_shift", c.max_shift);
  if (j.contains("source")) {
    const auto s = j["source"].get<std::string>();
    if (s == "bank") c.source = EmbeddingSource::Bank;
    else if (s == "on_the_fly") c.source = EmbeddingSource::OnTheFly;
    else throw Error(ErrorCode::InvalidArgument, "unknown embedding source " + s);
  }
  c.zero_shot_datasets = j.value("zero_shot_datasets", c.zero_shot_datasets);
  return c;
}

TrainingData split_training_data(const std::vector<CorpusEntry>& corpus, const std::vector<std::string>& zero_shot) {
  TrainingData d;
  for (const auto& e : corpus) {
    const bool zs = std::find(zero_shot.begin(), zero_shot.end(), e.sample.meta.dataset_id) != zero_shot.end();
    if (zs) {
      if (e.split == Split::Val) d.zs_val.push_back(e.sample);
    } else if (e.split == Split::Train) {
      d.train.push_back(e.sample);
    } else if (e.split == Split::Val) {
      d.seen_val.push_back(e.sample);
    }
  }
  return d;
}

// ---- training loop ----------------------------------------------------------------

namespace {

/// Embedding supplier shared by the training and validation passes.
class EmbeddingSupply {
 public:
  EmbeddingSupply(const SamModel& model, const RunConfig& cfg, const EmbeddingBank* bank, ComponentTimes* times)
      : model_(model), cfg_(cfg), bank_(bank), times_(times) {
    if (cfg_.source == EmbeddingSource::Bank && !bank_)
      throw Error(ErrorCode::BankMissing, "bank mode needs an embedding bank");
  }

  void new_epoch() { cache_.clear(); }

  const ImageEmbedding& get(const SliceSample& s) {
    if (auto it = cache_.find(s.key); it != cache_.end()) return it->second;
    ImageEmbedding e;
    if (cfg_.source == EmbeddingSource::Bank) {
      const auto t0 = Clock::now();
      e = bank_->lookup(s.key);
      if (times_) times_->decode += seconds_since(t0);
    } else {
      auto t0 = Clock::now();
      const Tensor patches = model_.prepare_image(s.image);
      if (times_) times_->data += seconds_since(t0);
      t0 = Clock::now();
      e = model_.encode_prepared(patches);
      if (times_) times_->encode += seconds_since(t0);
    }
    return cache_.emplace(s.key, std::move(e)).first->second;
  }

  void require(const std::vector<SliceSample>& samples) const {
    if (cfg_.source != EmbeddingSource::Bank) return;
    for (const auto& s : samples)
      if (!bank_->contains(s.key)) throw Error(ErrorCode::BankMissing, "bank has no embedding for " + s.key);
  }

 private:
  const SamModel& model_;
  const RunConfig& cfg_;
  const EmbeddingBank* bank_;
  ComponentTimes* times_;
  // Cleared every epoch, so on-the-fly mode encodes each distinct sample
  // once per epoch and bank mode re-reads its records each epoch.
  std::unordered_map<std::string, ImageEmbedding> cache_;
};

Tensor sample_loss(const SamModel& model, const ImageEmbedding& emb, const SliceSample& s, const PromptSet& prompts,
                   const LossConfig& loss) {
  const auto tokens = model.encode_prompts(prompts, s.mask.width, s.mask.height);
  const auto logits = model.decode_mask(emb, tokens, s.mask.height, s.mask.width);
  return samri_loss(tensor::sigmoid(logits.upsampled), mask_tensor(s.mask), loss);
}

double validation_pass(const SamModel& model, const std::vector<SliceSample>& samples, const RunConfig& cfg,
                       EmbeddingSupply& supply, ComponentTimes* times) {
  if (samples.empty()) return std::numeric_limits<double>::quiet_NaN();
  tensor::NoGradGuard no_grad;
  PromptOptions opt;
  opt.regime = cfg.regime;
  opt.jitter = false;
  double total = 0;
  for (const auto& s : samples) {
    const auto& emb = supply.get(s);
    const auto t0 = Clock::now();
    total += sample_loss(model, emb, s, make_prompts(s.mask, opt), cfg.loss).item();
    if (times) times->decode += seconds_since(t0);
  }
  return total / static_cast<double>(samples.size());
}

void dump_failure(const RunConfig& cfg, const SamModel& model, std::size_t epoch, std::size_t step,
                  const std::string& key, double loss) {
  if (cfg.out_dir.empty()) return;
  std::filesystem::create_directories(cfg.out_dir);
  const auto params_path = cfg.out_dir / "nonfinite_params.samrips";
  write_snapshot_file(params_path, snapshot_of(model.params(), false));
  nlohmann::json j{{"epoch", epoch},
                   {"step", step},
                   {"sample", key},
                   {"loss", fmt_double(loss)},
                   {"regime", regime_name(cfg.regime)},
                   {"params", params_path.filename().string()},
                   {"config", to_json(cfg)}};
  std::ofstream(cfg.out_dir / "nonfinite_state.json") << j.dump(2) << "\n";
}

}  // namespace

double validation_loss(const SamModel& model, const std::vector<SliceSample>& samples, const RunConfig& cfg,
                       const EmbeddingBank* bank) {
  EmbeddingSupply supply(model, cfg, bank, nullptr);
  supply.require(samples);
  return validation_pass(model, samples, cfg, supply, nullptr);
}

TrainResult train(SamModel& model, const TrainingData& data, const RunConfig& cfg, const EmbeddingBank* bank,
                  CheckpointSet* checkpoints) {
  if (data.train.empty()) throw Error(ErrorCode::InvalidArgument, "no training samples");
  if (!(cfg.model == model.config())) throw Error(ErrorCode::InvalidArgument, "run config and model config differ");
  cfg.loss.validate();
  const auto wall0 = Clock::now();

  TrainResult res;
  res.frozen_hash_before = model.frozen_hash();
  const std::size_t inv0 = model.encoder_invocations();
  CheckpointSet local;
  CheckpointSet& slots = checkpoints ? *checkpoints : local;

  EmbeddingSupply supply(model, cfg, bank, &res.times);
  supply.require(data.train);
  supply.require(data.seen_val);
  supply.require(data.zs_val);

  std::map<std::string, std::vector<const SliceSample*>> by_dataset;
  for (const auto& s : data.train) by_dataset[s.meta.dataset_id].push_back(&s);
  std::map<std::string, std::size_t> sizes;
  for (auto& [name, v] : by_dataset) {
    std::sort(v.begin(), v.end(), [](auto* a, auto* b) { return a->key < b->key; });
    sizes[name] = v.size();
  }

  AdamW opt(cfg.optim);
  PromptOptions popt;
  popt.regime = cfg.regime;
  popt.jitter = cfg.jitter;
  popt.max_shift = cfg.max_shift;

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    supply.new_epoch();
    const auto plan = plan_epoch(sizes, cfg.sampler, epoch);
    Xoshiro256 prompt_rng(derive_seed(cfg.sampler.seed, stream_tag("train.prompts"), epoch));
    double epoch_total = 0;

    for (std::size_t start = 0; start < plan.order.size(); start += cfg.optim.batch) {
      const std::size_t end = std::min(plan.order.size(), start + cfg.optim.batch);
      const double inv_b = 1.0 / static_cast<double>(end - start);
      model.params().zero_grad();
      double batch_total = 0;
      for (std::size_t i = start; i < end; ++i) {
        const SliceSample& s = *by_dataset.at(plan.order[i].first)[plan.order[i].second];
        const ImageEmbedding& emb = supply.get(s);
        auto t0 = Clock::now();
        const PromptSet prompts = make_prompts(s.mask, popt, &prompt_rng);
        const Tensor loss = sample_loss(model, emb, s, prompts, cfg.loss);
        res.times.decode += seconds_since(t0);
        const double lv = loss.item();
        if (!std::isfinite(lv)) {
          dump_failure(cfg, model, epoch, step, s.key, lv);
          throw Error(ErrorCode::NonFiniteLoss, "loss for " + s.key + " at epoch " + std::to_string(epoch));
        }
        t0 = Clock::now();
        tensor::scale(loss, inv_b).backward();
        res.times.backward += seconds_since(t0);
        batch_total += lv;
      }
      const auto t0 = Clock::now();
      opt.step(model.params());
      res.times.backward += seconds_since(t0);
      res.step_losses.push_back(batch_total * inv_b);
      epoch_total += batch_total;
      ++step;
    }

    EpochStats st;
    st.epoch = epoch;
    st.train_loss = epoch_total / static_cast<double>(plan.order.size());
    st.seen_val = validation_pass(model, data.seen_val, cfg, supply, &res.times);
    st.zs_val = validation_pass(model, data.zs_val, cfg, supply, &res.times);
    res.history.push_back(st);

    for (auto idx : slots.observe(cfg.regime, epoch, st.seen_val, st.zs_val)) {
      auto& slot = slots.slots()[idx];
      if (cfg.out_dir.empty()) continue;
      slot.snapshot = cfg.out_dir / "checkpoints" / (slot.name + ".samrips");
      save_checkpoint(slot.snapshot, model,
                      {{"slot", slot.name},
                       {"regime", regime_name(cfg.regime)},
                       {"epoch", epoch},
                       {"seen_val", json_number(st.seen_val)},
                       {"zs_val", json_number(st.zs_val)},
                       {"loss", to_json(cfg.loss)}});
    }
  }

  res.checkpoints = slots;
  res.encoder_invocations = model.encoder_invocations() - inv0;
  res.frozen_hash_after = model.frozen_hash();
  res.wall_seconds = seconds_since(wall0);
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    std::ofstream(cfg.out_dir / ("history_" + std::string(regime_name(cfg.regime)) + ".csv")) << history_csv(res.history);
  }
  return res;
}

std::string history_csv(const std::vector<EpochStats>& history) {
  std::ostringstream out;
  out << "epoch,train_loss,seen_val,zs_val\n";
  for (const auto& h : history)
    out << h.epoch << ',' << fmt_double(h.train_loss) << ',' << fmt_double(h.seen_val) << ',' << fmt_double(h.zs_val)
        << '\n';
  return out.str();
}

}  // namespace samri
