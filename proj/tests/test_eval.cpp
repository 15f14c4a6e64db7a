#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "samri/error.hpp"
#include "samri/eval_report.hpp"
#include "support.hpp"

using namespace samri;

namespace {

class OraclePredictor : public Predictor {
 public:
  std::string id() const override { return "oracle"; }
  BinaryMask predict(const SliceSample& s, const PromptSet&) override { return s.mask; }
};

class EmptyPredictor : public Predictor {
 public:
  std::string id() const override { return "empty"; }
  BinaryMask predict(const SliceSample& s, const PromptSet&) override { return BinaryMask(s.mask.height, s.mask.width); }
};

// Fills the prompt box, and records whether a point came along.
class BoxPredictor : public Predictor {
 public:
  std::string id() const override { return "box"; }
  BinaryMask predict(const SliceSample& s, const PromptSet& p) override {
    saw_points += !p.points.empty();
    BinaryMask m(s.mask.height, s.mask.width);
    for (int y = p.box.y_min; y <= p.box.y_max; ++y)
      for (int x = p.box.x_min; x <= p.box.x_max; ++x) m.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = 1;
    return m;
  }
  int saw_points = 0;
};

EvalRecord rec(const std::string& key, const std::string& target, double d, std::optional<double> hd = 1.0) {
  EvalRecord r;
  r.key = key;
  r.dataset_id = "A";
  r.target_name = target;
  r.dsc = d;
  r.hd = hd;
  r.msd = hd ? std::optional<double>(*hd / 2) : std::nullopt;
  if (!hd) r.absent_reason = "EmptySurface";
  r.model_id = "m";
  return r;
}

const SummaryRow& row_of(const std::vector<SummaryRow>& rows, const std::string& group, const std::string& metric) {
  for (const auto& r : rows)
    if (r.group == group && r.metric == metric) return r;
  throw std::runtime_error("missing row " + group + "/" + metric);
}

}  // namespace

TEST_SUITE("eval") {
  TEST_CASE("identity predictor scores perfectly") {
    const auto samples = test::phantom_samples("A", 1, 1);
    REQUIRE(!samples.empty());
    OraclePredictor p;
    const auto recs = evaluate(p, samples, PromptRegime::BoxOnly);
    REQUIRE(recs.size() == samples.size());
    for (std::size_t i = 0; i < recs.size(); ++i) {
      CHECK(recs[i].key == samples[i].key);
      CHECK(recs[i].dsc == 1.0);
      CHECK(recs[i].hd == 0.0);
      CHECK(recs[i].msd == 0.0);
      CHECK(recs[i].absent_reason.empty());
      CHECK(recs[i].model_id == "oracle");
    }
  }

  TEST_CASE("empty predictor leaves distances absent with a reason") {
    const auto samples = test::phantom_samples("A", 2, 1);
    EmptyPredictor p;
    for (const auto& r : evaluate(p, samples, PromptRegime::BoxPoint)) {
      CHECK(r.dsc == 0.0);
      CHECK_FALSE(r.hd.has_value());
      CHECK_FALSE(r.msd.has_value());
      CHECK(r.absent_reason == "EmptySurface");
      CHECK(r.regime == PromptRegime::BoxPoint);
    }
  }

  TEST_CASE("prompts are tight boxes, with a point only in the box+point regime") {
    const auto samples = test::phantom_samples("A", 3, 1, 10);
    BoxPredictor p;
    const auto a = evaluate(p, samples, PromptRegime::BoxOnly);
    CHECK(p.saw_points == 0);
    const auto b = evaluate(p, samples, PromptRegime::BoxPoint);
    CHECK(p.saw_points == static_cast<int>(samples.size()));
    // filling the tight box covers the mask, so DSC is 2|G| / (|G| + |box|)
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto box = tightest_box(samples[i].mask);
      const double g = static_cast<double>(foreground_count(samples[i].mask));
      const double area = static_cast<double>((box.x_max - box.x_min + 1) * (box.y_max - box.y_min + 1));
      CHECK(a[i].dsc == doctest::Approx(2 * g / (g + area)).epsilon(1e-12));
      CHECK(a[i].dsc == b[i].dsc);
    }
  }

  TEST_CASE("model evaluation is deterministic") {
    const auto samples = test::phantom_samples("A", 4, 1, 6);
    SamModel model(ModelConfig{});
    ModelPredictor p(model, "toy");
    const auto a = evaluate(p, samples, PromptRegime::BoxPoint);
    const auto b = evaluate(p, samples, PromptRegime::BoxPoint);
    CHECK(a == b);
    for (const auto& r : a) {
      CHECK(r.dsc >= 0);
      CHECK(r.dsc <= 1);
      CHECK(r.hd.has_value() != !r.absent_reason.empty());
    }
  }

  TEST_CASE("aggregate examples") {
    const std::vector<EvalRecord> ones{rec("k1", "t", 1.0), rec("k2", "t", 1.0), rec("k3", "t", 1.0)};
    const auto r1 = aggregate(ones, GroupBy::Target);
    CHECK(row_of(r1, "t", "dsc").mean == 1.0);
    CHECK(row_of(r1, "t", "dsc").sd == 0.0);
    const std::vector<EvalRecord> two{rec("k1", "t", 0.5), rec("k2", "t", 1.0)};
    const auto r2 = aggregate(two, GroupBy::Target);
    CHECK(row_of(r2, "t", "dsc").mean == 0.75);
    CHECK(row_of(r2, "t", "dsc").median == 0.75);
    CHECK(row_of(r2, "t", "dsc").sd == doctest::Approx(std::sqrt(0.125)));
  }

  TEST_CASE("aggregate quantiles, absences and the medians row") {
    std::vector<EvalRecord> rs;
    const double vals[] = {0.1, 0.4, 0.2, 0.9, 0.6};
    for (int i = 0; i < 5; ++i) rs.push_back(rec("a" + std::to_string(i), "liver", vals[i], i == 2 ? std::nullopt : std::optional<double>(i)));
    rs.push_back(rec("b0", "kidney", 0.3));
    rs.push_back(rec("b1", "kidney", 0.5));
    const auto rows = aggregate(rs, GroupBy::Target);
    const auto& dl = row_of(rows, "liver", "dsc");
    CHECK(dl.n == 5);
    CHECK(dl.median == 0.4);
    CHECK(dl.q1 == doctest::Approx(0.2));
    CHECK(dl.q3 == doctest::Approx(0.6));
    const auto& hl = row_of(rows, "liver", "hd");
    CHECK(hl.n == 4);
    CHECK(hl.n_absent == 1);
    CHECK(hl.median == doctest::Approx(2.0));
    const auto& med = row_of(rows, std::string(kMediansGroup), "dsc");
    CHECK(med.n == 2);
    CHECK(med.mean == doctest::Approx((0.4 + 0.4) / 2));
    // groups are sorted per metric
    std::vector<std::string> groups;
    for (const auto& r : rows)
      if (r.metric == "dsc") groups.push_back(r.group);
    CHECK(std::is_sorted(groups.begin(), groups.end()));
  }

  TEST_CASE("size-bin grouping matches an independent recount") {
    const auto samples = test::phantom_samples("A", 5, 3);
    OraclePredictor p;
    const auto recs = evaluate(p, samples, PromptRegime::BoxOnly);
    std::map<std::string, std::size_t> expect;
    for (const auto& s : samples) {
      const double pct = 100.0 * static_cast<double>(foreground_count(s.mask)) /
                         static_cast<double>(s.mask.height * s.mask.width);
      expect[pct < 0.5 ? "small" : (pct > 3.5 ? "large" : "medium")]++;
    }
    for (const auto& r : aggregate(recs, GroupBy::SizeBin))
      if (r.metric == "dsc" && r.group != kMediansGroup) CHECK(r.n == expect.at(r.group));
  }

  TEST_CASE("compare pairs by key and flags identical models") {
    std::vector<EvalRecord> a, b;
    for (int i = 0; i < 8; ++i) {
      a.push_back(rec("k" + std::to_string(i), "t", 0.5 + 0.05 * i));
      b.push_back(rec("k" + std::to_string(i), "t", 0.4 + 0.04 * i, i == 3 ? std::nullopt : std::optional<double>(2.0)));
    }
    const auto same = compare(a, a);
    for (const auto& c : same) {
      CHECK(c.all_zero);
      CHECK(c.p == 1.0);
    }
    auto shuffled = b;
    std::reverse(shuffled.begin(), shuffled.end());
    const auto c = compare(a, shuffled);
    REQUIRE(c.size() == 3);
    CHECK(c[0].metric == "dsc");
    CHECK(c[0].n_pairs == 8);
    CHECK(c[0].w == 0);
    CHECK(c[0].p == doctest::Approx(2.0 / 256).epsilon(1e-12));
    CHECK(c[1].n_pairs == 7);
    auto missing = b;
    missing.pop_back();
    try {
      compare(a, missing);
      FAIL("expected KeyMismatch");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::KeyMismatch);
    }
    const auto best = best_dsc_count(a, b);
    CHECK(best.a == 1);
    CHECK(best.b == 0);
  }

  TEST_CASE("records, summary and comparison files") {
    const auto dir = test::scratch("eval_report");
    std::vector<EvalRecord> a{rec("k1", "t", 0.5), rec("k2", "u", 0.7, std::nullopt)};
    a[0].size_bin = SizeBin::Medium;
    a[1].regime = PromptRegime::BoxPoint;
    CHECK(parse_records_jsonl(records_jsonl(a)) == a);
    write_report(dir, a, &a);
    std::ifstream in(dir / "records.jsonl");
    std::stringstream ss;
    ss << in.rdbuf();
    CHECK(parse_records_jsonl(ss.str()) == a);
    std::ifstream csv(dir / "summary.csv");
    std::string header;
    std::getline(csv, header);
    CHECK(header == "group_by,group,metric,n,n_absent,mean,sd,median,q1,q3");
    std::ifstream cj(dir / "comparison.json");
    const auto j = nlohmann::json::parse(cj);
    CHECK(j.at("metrics").size() == 3);
    CHECK(j["metrics"][0]["all_zero_differences"] == true);
    CHECK(j["best_dsc_count"]["ties"] == 2);
    CHECK(parse_group_by("size_bin") == GroupBy::SizeBin);
    CHECK_THROWS_AS(parse_group_by("patient"), Error);
  }
}
