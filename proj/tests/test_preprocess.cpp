#include <doctest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "samri/error.hpp"
#include "samri/phantom.hpp"
#include "samri/preprocess.hpp"
#include "samri/rng.hpp"
#include "support.hpp"

using namespace samri;

namespace {

std::vector<int> iota_vec(int n) {
  std::vector<int> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), 0);
  return v;
}

Grid2<std::uint16_t> labels_with(std::uint16_t id, std::size_t pixels) {
  Grid2<std::uint16_t> g(8, 8);
  for (std::size_t i = 0; i < pixels; ++i) g.data[i] = id;
  return g;
}

}  // namespace

TEST_SUITE("preprocess") {
  TEST_CASE("trim_peripheral drops floor(f n) per end") {
    CHECK(trim_peripheral(iota_vec(10)) == std::vector<int>{1, 2, 3, 4, 5, 6, 7, 8});
    CHECK(trim_peripheral(iota_vec(4)) == iota_vec(4));
    const auto t20 = trim_peripheral(iota_vec(20));
    REQUIRE(t20.size() == 16);
    CHECK(t20.front() == 2);
    CHECK(t20.back() == 17);
    CHECK(trim_peripheral(iota_vec(3), 0.4).size() == 1);
    CHECK(peripheral_count(30, 0.1) == 3);
    CHECK_THROWS_AS(peripheral_count(10, 0.5), Error);
  }

  TEST_CASE("targets below ten pixels are dropped") {
    CHECK(explode_targets_and_filter(labels_with(3, 9)).empty());
    const auto kept = explode_targets_and_filter(labels_with(3, 10));
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].target_id == 3);
    CHECK(foreground_count(kept[0].mask) == 10);
    CHECK(explode_targets_and_filter(Grid2<std::uint16_t>(8, 8)).empty());
  }

  TEST_CASE("explode gives one mask per label in ascending id") {
    Grid2<std::uint16_t> g(8, 8);
    for (std::size_t i = 0; i < 20; ++i) g.data[i] = 7;
    for (std::size_t i = 30; i < 45; ++i) g.data[i] = 2;
    const auto t = explode_targets_and_filter(g);
    REQUIRE(t.size() == 2);
    CHECK(t[0].target_id == 2);
    CHECK(t[1].target_id == 7);
    CHECK(foreground_count(t[1].mask) == 20);
  }

  TEST_CASE("normalize_to_u8 rounding and degenerate range") {
    Grid2<float> c(2, 2, 7.3F);
    const auto z = normalize_to_u8(c);
    REQUIRE(z.data.size() == 12);
    for (auto v : z.data) CHECK(v == 0);

    Grid2<float> g(1, 3);
    g.data = {0.0F, 50.0F, 100.0F};
    const auto r = normalize_to_u8(g);
    CHECK(r.at(0, 1, 0) == 128);
    CHECK(r.at(0, 0, 2) == 0);
    CHECK(r.at(0, 2, 1) == 255);

    Grid2<float> e(1, 2);
    e.data = {-1.0F, 1.0F};
    const auto s = normalize_to_u8(e);
    CHECK(s.at(0, 0, 0) == 0);
    CHECK(s.at(0, 1, 0) == 255);

    Grid2<float> bad(1, 2);
    bad.data = {0.0F, std::nanf("")};
    CHECK_THROWS_AS(normalize_to_u8(bad), Error);
  }

  TEST_CASE("split_patients ratios and determinism") {
    std::vector<std::string> ids;
    for (int i = 0; i < 10; ++i) ids.push_back("p" + std::to_string(i));
    const auto a = split_patients(ids, {}, 1);
    std::map<Split, int> count;
    for (const auto& [id, s] : a.by_patient) ++count[s];
    CHECK(count[Split::Train] == 8);
    CHECK(count[Split::Val] == 1);
    CHECK(count[Split::Test] == 1);

    const auto one = split_patients({"solo"}, {}, 1);
    CHECK(one.of("solo") == Split::Train);

    std::vector<std::string> fifty;
    for (int i = 0; i < 50; ++i) fifty.push_back("id" + std::to_string(i));
    CHECK(split_patients(fifty, {}, 9).by_patient == split_patients(fifty, {}, 9).by_patient);
    const auto big = split_patients(fifty, {}, 9);
    CHECK(big.by_patient.size() == 50);
  }

  TEST_CASE("split sizes follow the ceiling rule for many n") {
    for (std::size_t n = 1; n <= 40; ++n) {
      std::vector<std::string> ids;
      for (std::size_t i = 0; i < n; ++i) ids.push_back("q" + std::to_string(i));
      const auto a = split_patients(ids, {}, n);
      std::size_t tr = 0, va = 0, te = 0;
      for (const auto& [id, s] : a.by_patient) (s == Split::Train ? tr : s == Split::Val ? va : te)++;
      const auto n_train = static_cast<std::size_t>(std::ceil(0.8 * static_cast<double>(n) - 1e-9));
      const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::ceil(0.1 * static_cast<double>(n) - 1e-9)));
      CHECK(tr == n_train);
      CHECK(va == n_val);
      CHECK(tr + va + te == n);
    }
  }

  TEST_CASE("phantom pipeline output invariants") {
    PhantomSpec s;
    s.seed = 17;
    const auto [v, l] = generate_phantom(s);
    const auto a = preprocess_volume(v, l, "ds", "p1");
    const auto b = preprocess_volume(v, l, "ds", "p1");
    REQUIRE_FALSE(a.empty());
    std::vector<std::string> ka, kb;
    for (const auto& x : a) ka.push_back(x.key);
    for (const auto& x : b) kb.push_back(x.key);
    CHECK(ka == kb);
    CHECK(std::is_sorted(ka.begin(), ka.end()));
    const std::size_t trimmed = peripheral_count(s.dims[2], 0.1);
    for (const auto& x : a) {
      CHECK(foreground_count(x.mask) >= 10);
      CHECK(x.meta.slice_index >= trimmed);
      CHECK(x.meta.slice_index < s.dims[2] - trimmed);
      for (std::size_t i = 0; i < x.image.height * x.image.width; ++i) {
        REQUIRE(x.image.data[3 * i] == x.image.data[3 * i + 1]);
        REQUIRE(x.image.data[3 * i] == x.image.data[3 * i + 2]);
      }
    }
    CHECK(a.front().key.rfind("ds/p1/", 0) == 0);
  }

  TEST_CASE("phantom targets populate all three size bins") {
    std::set<int> bins;
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
      PhantomSpec s;
      s.seed = seed;
      const auto [v, l] = generate_phantom(s);
      for (const auto& x : preprocess_volume(v, l, "ds", "p")) {
        const std::size_t n = foreground_count(x.mask), area = x.mask.size();
        bins.insert(200 * n < area ? 0 : (200 * n > 7 * area ? 2 : 1));
      }
    }
    CHECK(bins.size() == 3);
  }

  TEST_CASE("connected component splitting") {
    BinaryMask m(6, 6);
    m.at(0, 0) = m.at(0, 1) = 1;
    m.at(4, 4) = m.at(5, 5) = 1;  // diagonal neighbours join under 8-connectivity
    const auto parts = connected_components(m);
    REQUIRE(parts.size() == 2);
    CHECK(foreground_count(parts[0]) == 2);
    CHECK(parts[0].at(0, 0) == 1);
  }

  TEST_CASE("bilinear resize keeps constants and nearest keeps binary") {
    Grid2<float> c(5, 7, 3.25F);
    for (float v : resize_bilinear(c, 9, 4).data) CHECK(v == doctest::Approx(3.25F));
    Xoshiro256 rng(2);
    const auto m = test::random_mask(rng, 8, 8, 0.5);
    const auto up = resize_nearest(m, 16, 16);
    CHECK(up.at(3, 5) == m.at(1, 2));
    CHECK(resize_nearest(m, 8, 8) == m);
  }

  TEST_CASE("corpus round trip through disk") {
    PhantomSpec s;
    s.seed = 3;
    const auto [v, l] = generate_phantom(s);
    std::vector<CorpusEntry> entries;
    for (auto& x : preprocess_volume(v, l, "ds", "p3")) entries.push_back({x, Split::Val});
    const auto dir = test::scratch("corpus");
    write_corpus(dir, entries);
    const auto back = read_corpus(dir / "manifest.jsonl");
    REQUIRE(back.size() == entries.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
      CHECK(back[i].sample.key == entries[i].sample.key);
      CHECK(back[i].sample.image == entries[i].sample.image);
      CHECK(back[i].sample.mask == entries[i].sample.mask);
      CHECK(back[i].split == Split::Val);
      CHECK(back[i].sample.meta.target_name == entries[i].sample.meta.target_name);
    }
  }
}
