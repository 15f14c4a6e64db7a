#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "samri/metrics.hpp"
#include "samri/model.hpp"
#include "samri/preprocess.hpp"
#include "samri/prompts.hpp"

namespace samri {

struct EvalRecord {
  std::string key;
  std::string dataset_id;
  std::uint16_t target_id = 0;
  std::string target_name;
  SizeBin size_bin = SizeBin::Small;
  double dsc = 0;
  std::optional<double> hd;
  std::optional<double> msd;
  std::string absent_reason;  // set when hd/msd are absent
  PromptRegime regime = PromptRegime::BoxOnly;
  std::string model_id;

  bool operator==(const EvalRecord&) const = default;
};

/// Anything that turns a sample and its prompts into a mask.
class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual std::string id() const = 0;
  virtual BinaryMask predict(const SliceSample& sample, const PromptSet& prompts) = 0;
  /// Whether predict() may be called from several threads at once.
  virtual bool thread_safe() const { return false; }
};

class ModelPredictor : public Predictor {
 public:
  ModelPredictor(const SamModel& model, std::string id) : model_(model), id_(std::move(id)) {}
  std::string id() const override { return id_; }
  BinaryMask predict(const SliceSample& sample, const PromptSet& prompts) override;
  bool thread_safe() const override { return true; }

 private:
  const SamModel& model_;
  std::string id_;
};

/// Tight boxes, plus the max-inset foreground point in the box+point regime.
/// Metric failures become absent values with a reason. Records keep the
/// order of `samples`.
std::vector<EvalRecord> evaluate(Predictor& predictor, const std::vector<SliceSample>& samples, PromptRegime regime);

enum class GroupBy { Target, Dataset, SizeBin };
std::string_view group_by_name(GroupBy g);
GroupBy parse_group_by(std::string_view s);

struct SummaryRow {
  std::string group_by;
  std::string group;
  std::string metric;
  std::size_t n = 0;         // records with the metric present
  std::size_t n_absent = 0;  // records without it
  double mean = 0;
  double sd = 0;  // sample standard deviation, 0 for n < 2
  double median = 0;
  double q1 = 0;
  double q3 = 0;
};

/// Name of the extra group that summarizes per-group medians (mean and sd
/// of the medians; quantiles over the medians).
inline constexpr std::string_view kMediansGroup = "*medians*";

/// Per group (sorted) and metric (dsc, hd, msd); quantiles interpolate
/// linearly between order statistics.
std::vector<SummaryRow> aggregate(const std::vector<EvalRecord>& records, GroupBy by);

struct MetricComparison {
  std::string metric;
  std::size_t n_pairs = 0;
  double w = 0;
  double p = 1.0;
  bool all_zero = false;  // every paired difference was zero; p reported as 1
  bool exact = true;
};

struct BestCount {
  std::size_t a = 0;
  std::size_t b = 0;
  std::size_t ties = 0;
};

/// Paired Wilcoxon per metric over records matched by key; distance metrics
/// use the pairs where both sides are present. Throws KeyMismatch.
std::vector<MetricComparison> compare(const std::vector<EvalRecord>& a, const std::vector<EvalRecord>& b);
/// Targets on which each side has the strictly higher mean DSC.
BestCount best_dsc_count(const std::vector<EvalRecord>& a, const std::vector<EvalRecord>& b);

nlohmann::json to_json(const EvalRecord& r);
EvalRecord eval_record_from_json(const nlohmann::json& j);
std::string records_jsonl(const std::vector<EvalRecord>& records);
std::vector<EvalRecord> parse_records_jsonl(const std::string& text);
std::string summary_csv(const std::vector<SummaryRow>& rows);
nlohmann::json comparison_json(const std::vector<EvalRecord>& a, const std::vector<EvalRecord>& b);

/// records.jsonl, summary.csv (all three groupings) and comparison.json
/// (against `baseline` when given, else empty comparisons).
void write_report(const std::filesystem::path& dir, const std::vector<EvalRecord>& records,
                  const std::vector<EvalRecord>* baseline = nullptr);

}  // namespace samri
