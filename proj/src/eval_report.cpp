#include "samri/eval_report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <sstream>

#include "samri/error.hpp"

namespace samri {

BinaryMask ModelPredictor::predict(const SliceSample& sample, const PromptSet& prompts) {
  tensor::NoGradGuard no_grad;
  const auto emb = model_.encode_image(sample.image);
  const auto tokens = model_.encode_prompts(prompts, sample.image.width, sample.image.height);
  const auto logits = model_.decode_mask(emb, tokens, sample.mask.height, sample.mask.width);
  return predict_mask(logits.upsampled);
}

std::vector<EvalRecord> evaluate(Predictor& predictor, const std::vector<SliceSample>& samples, PromptRegime regime) {
  std::vector<EvalRecord> out(samples.size());
  std::exception_ptr failure;
  const bool par = predictor.thread_safe();
  PromptOptions opt;
  opt.regime = regime;
  opt.jitter = false;
  const std::string model_id = predictor.id();
#pragma omp parallel for schedule(dynamic) if (par)
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    EvalRecord r;
    r.key = s.key;
    r.dataset_id = s.meta.dataset_id;
    r.target_id = s.meta.target_id;
    r.target_name = s.meta.target_name;
    r.size_bin = size_bin(s.mask);
    r.regime = regime;
    r.model_id = model_id;
    try {
      const BinaryMask pred = predictor.predict(s, make_prompts(s.mask, opt));
      r.dsc = dsc(pred, s.mask);
      try {
        const auto a = surface_points(pred), b = surface_points(s.mask);
        r.hd = hausdorff(a, b);
        r.msd = msd(a, b);
      } catch (const Error& e) {
        r.absent_reason = std::string(error_code_name(e.code()));
      }
    } catch (...) {
#pragma omp critical(samri_evaluate_failure)
      if (!failure) failure = std::current_exception();
    }
    out[i] = std::move(r);
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

std::string_view group_by_name(GroupBy g) {
  switch (g) {
    case GroupBy::Target: return "target";
    case GroupBy::Dataset: return "dataset";
    case GroupBy::SizeBin: return "size_bin";
  }
  return "unknown";
}

GroupBy parse_group_by(std::string_view s) {
  if (s == "target") return GroupBy::Target;
  if (s == "dataset") return GroupBy::Dataset;
  if (s == "size_bin") return GroupBy::SizeBin;
  throw Error(ErrorCode::InvalidArgument, "unknown grouping " + std::string(s));
}

namespace {

const char* const kMetrics[] = {"dsc", "hd", "msd"};

std::optional<double> metric_of(const EvalRecord& r, std::string_view m) {
  if (m == "dsc") return r.dsc;
  if (m == "hd") return r.hd;
  return r.msd;
}

std::string group_of(const EvalRecord& r, GroupBy by) {
  switch (by) {
    case GroupBy::Target: return r.target_name;
    case GroupBy::Dataset: return r.dataset_id;
    case GroupBy::SizeBin: return std::string(size_bin_name(r.size_bin));
  }
  return {};
}

double quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

void describe(std::vector<double> v, SummaryRow& row) {
  row.n = v.size();
  if (v.empty()) return;
  std::sort(v.begin(), v.end());
  double s = 0;
  for (double x : v) s += x;
  row.mean = s / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0;
    for (double x : v) ss += (x - row.mean) * (x - row.mean);
    row.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  row.median = quantile(v, 0.5);
  row.q1 = quantile(v, 0.25);
  row.q3 = quantile(v, 0.75);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

std::vector<SummaryRow> aggregate(const std::vector<EvalRecord>& records, GroupBy by) {
  std::map<std::string, std::vector<const EvalRecord*>> groups;
  for (const auto& r : records) groups[group_of(r, by)].push_back(&r);
  std::vector<SummaryRow> rows;
  for (const char* m : kMetrics) {
    std::vector<double> medians;
    for (const auto& [g, members] : groups) {
      SummaryRow row{std::string(group_by_name(by)), g, m};
      std::vector<double> vals;
      for (const auto* r : members) {
        if (auto v = metric_of(*r, m)) vals.push_back(*v);
        else ++row.n_absent;
      }
      describe(std::move(vals), row);
      if (row.n > 0) medians.push_back(row.median);
      rows.push_back(row);
    }
    SummaryRow med{std::string(group_by_name(by)), std::string(kMediansGroup), m};
    describe(medians, med);
    rows.push_back(med);
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const SummaryRow& a, const SummaryRow& b) { return a.group < b.group; });
  return rows;
}

std::vector<MetricComparison> compare(const std::vector<EvalRecord>& a, const std::vector<EvalRecord>& b) {
  std::map<std::string, const EvalRecord*> ma, mb;
  for (const auto& r : a) ma[r.key] = &r;
  for (const auto& r : b) mb[r.key] = &r;
  if (ma.size() != a.size() || mb.size() != b.size())
    throw Error(ErrorCode::KeyMismatch, "duplicate keys in compared records");
  if (ma.size() != mb.size() || !std::equal(ma.begin(), ma.end(), mb.begin(),
                                            [](const auto& x, const auto& y) { return x.first == y.first; }))
    throw Error(ErrorCode::KeyMismatch, "compared record sets have different keys");

  std::vector<MetricComparison> out;
  for (const char* m : kMetrics) {
    MetricComparison c;
    c.metric = m;
    std::vector<double> diffs;
    for (const auto& [k, ra] : ma) {
      const auto va = metric_of(*ra, m), vb = metric_of(*mb.at(k), m);
      if (va && vb) diffs.push_back(*va - *vb);
    }
    c.n_pairs = diffs.size();
    try {
      const auto w = wilcoxon_signed_rank(diffs);
      c.w = w.w;
      c.p = w.p;
      c.exact = w.exact;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::AllZeroDifferences) throw;
      c.all_zero = true;
      c.p = 1.0;
    }
    out.push_back(c);
  }
  return out;
}

BestCount best_dsc_count(const std::vector<EvalRecord>& a, const std::vector<EvalRecord>& b) {
  auto means = [](const std::vector<EvalRecord>& rs) {
    std::map<std::string, std::pair<double, std::size_t>> acc;
    for (const auto& r : rs) {
      auto& [s, n] = acc[r.target_name];
      s += r.dsc;
      ++n;
    }
    std::map<std::string, double> out;
    for (const auto& [t, sn] : acc) out[t] = sn.first / static_cast<double>(sn.second);
    return out;
  };
  const auto ma = means(a), mb = means(b);
  BestCount c;
  for (const auto& [t, va] : ma) {
    auto it = mb.find(t);
    if (it == mb.end()) continue;
    if (va > it->second) ++c.a;
    else if (va < it->second) ++c.b;
    else ++c.ties;
  }
  return c;
}

// ---- serialization ----------------------------------------------------------------

nlohmann::json to_json(const EvalRecord& r) {
  nlohmann::json j{{"key", r.key},
                   {"dataset_id", r.dataset_id},
                   {"target_id", r.target_id},
                   {"target_name", r.target_name},
                   {"size_bin", size_bin_name(r.size_bin)},
                   {"dsc", r.dsc},
                   {"hd", r.hd ? nlohmann::json(*r.hd) : nlohmann::json(nullptr)},
                   {"msd", r.msd ? nlohmann::json(*r.msd) : nlohmann::json(nullptr)},
                   {"regime", regime_name(r.regime)},
                   {"model_id", r.model_id}};
  if (!r.absent_reason.empty()) j["absent_reason"] = r.absent_reason;
  return j;
}

EvalRecord eval_record_from_json(const nlohmann::json& j) {
  EvalRecord r;
  r.key = j.at("key").get<std::string>();
  r.dataset_id = j.at("dataset_id").get<std::string>();
  r.target_id = j.at("target_id").get<std::uint16_t>();
  r.target_name = j.at("target_name").get<std::string>();
  const auto bin = j.at("size_bin").get<std::string>();
  r.size_bin = bin == "small" ? SizeBin::Small : (bin == "medium" ? SizeBin::Medium : SizeBin::Large);
  r.dsc = j.at("dsc").get<double>();
  if (!j.at("hd").is_null()) r.hd = j["hd"].get<double>();
  if (!j.at("msd").is_null()) r.msd = j["msd"].get<double>();
  r.absent_reason = j.value("absent_reason", "");
  r.regime = parse_regime(j.at("regime").get<std::string>());
  r.model_id = j.at("model_id").get<std::string>();
  return r;
}

std::string records_jsonl(const std::vector<EvalRecord>& records) {
  std::string out;
  for (const auto& r : records) out += to_json(r).dump() + "\n";
  return out;
}

std::vector<EvalRecord> parse_records_jsonl(const std::string& text) {
  std::vector<EvalRecord> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(eval_record_from_json(nlohmann::json::parse(line)));
  }
  return out;
}

std::string summary_csv(const std::vector<SummaryRow>& rows) {
  std::ostringstream out;
  out << "group_by,group,metric,n,n_absent,mean,sd,median,q1,q3\n";
  for (const auto& r : rows) {
    out << r.group_by << ',' << r.group << ',' << r.metric << ',' << r.n << ',' << r.n_absent;
    if (r.n > 0)
      out << ',' << fmt(r.mean) << ',' << fmt(r.sd) << ',' << fmt(r.median) << ',' << fmt(r.q1) << ',' << fmt(r.q3);
    else
      out << ",,,,,";
    out << '\n';
  }
  return out.str();
}

nlohmann::json comparison_json(const std::vector<EvalRecord>& a, const std::vector<EvalRecord>& b) {
  nlohmann::json j;
  j["model_a"] = a.empty() ? "" : a.front().model_id;
  j["model_b"] = b.empty() ? "" : b.front().model_id;
  j["wilcoxon_exact_max_n"] = kWilcoxonExactMaxN;
  nlohmann::json metrics = nlohmann::json::array();
  for (const auto& c : compare(a, b))
    metrics.push_back({{"metric", c.metric},
                       {"n_pairs", c.n_pairs},
                       {"w", c.w},
                       {"p", c.p},
                       {"all_zero_differences", c.all_zero},
                       {"exact", c.exact}});
  j["metrics"] = metrics;
  const auto best = best_dsc_count(a, b);
  j["best_dsc_count"] = {{"a", best.a}, {"b", best.b}, {"ties", best.ties}};
  return j;
}

void write_report(const std::filesystem::path& dir, const std::vector<EvalRecord>& records,
                  const std::vector<EvalRecord>* baseline) {
  std::filesystem::create_directories(dir);
  auto write = [&](const std::string& name, const std::string& body) {
    std::ofstream out(dir / name, std::ios::binary);
    out << body;
    if (!out) throw Error(ErrorCode::IoError, "write " + (dir / name).string());
  };
  write("records.jsonl", records_jsonl(records));
  std::vector<SummaryRow> rows;
  if (!records.empty())
    for (auto by : {GroupBy::Target, GroupBy::Dataset, GroupBy::SizeBin}) {
      auto part = aggregate(records, by);
      rows.insert(rows.end(), part.begin(), part.end());
    }
  write("summary.csv", summary_csv(rows));
  nlohmann::json cmp;
  if (baseline) cmp = comparison_json(records, *baseline);
  else cmp = {{"model_a", records.empty() ? "" : records.front().model_id}, {"metrics", nlohmann::json::array()},
              {"wilcoxon_exact_max_n", kWilcoxonExactMaxN}};
  write("comparison.json", cmp.dump(2) + "\n");
}

}  // namespace samri
