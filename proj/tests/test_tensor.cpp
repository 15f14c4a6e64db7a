#include <doctest.h>

#include <cmath>

#include "samri/error.hpp"
#include "samri/rng.hpp"
#include "samri/snapshot.hpp"
#include "samri/tensor.hpp"
#include "support.hpp"

using namespace samri;
using namespace samri::tensor;

namespace {

std::vector<double> rand_vec(Xoshiro256& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

Tensor rand_leaf(Xoshiro256& rng, Shape s, double lo = -1.0, double hi = 1.0) {
  return Tensor::leaf(s, rand_vec(rng, numel(s), lo, hi));
}

// Scalar readout sum(op * R) with a fixed random R.
double check_op(const std::function<Tensor(const std::vector<Tensor>&)>& op, std::vector<Tensor> inputs,
                std::uint64_t seed) {
  Xoshiro256 proj_rng(seed);
  const Tensor probe = op(inputs);
  const Tensor r = Tensor::constant(probe.shape(), rand_vec(proj_rng, probe.numel()));
  return grad_check([&] { return sum(mul(op(inputs), r)); }, inputs).max_rel_error;
}

void expect_values(const Tensor& t, const std::vector<double>& expect, double tol = 1e-12) {
  REQUIRE(t.numel() == expect.size());
  for (std::size_t i = 0; i < expect.size(); ++i) CHECK(t[i] == doctest::Approx(expect[i]).epsilon(tol));
}

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("matmul shape and values") {
    const auto a = Tensor::constant({2, 3}, {1, 2, 3, 4, 5, 6});
    const auto b = Tensor::constant({3, 4}, {1, 0, 0, 1, 0, 1, 0, 1, 0, 0, 1, 1});
    const auto c = matmul(a, b);
    CHECK(c.shape() == Shape{2, 4});
    expect_values(c, {1, 2, 3, 6, 4, 5, 6, 15});
    CHECK_THROWS_AS(matmul(a, a), Error);
    expect_values(matmul_nt(a, a), {14, 32, 32, 77});
    expect_values(transpose(a), {1, 4, 2, 5, 3, 6});
  }

  TEST_CASE("softmax, layer norm, sigmoid forward values") {
    expect_values(softmax(Tensor::constant({3}, {0, 0, 0})), {1.0 / 3, 1.0 / 3, 1.0 / 3});
    const auto ln = layer_norm(Tensor::constant({3}, {1, 2, 3}), Tensor::full({3}, 1.0), Tensor::zeros({3}), 0.0);
    double mean = 0, var = 0;
    for (double v : ln.values()) mean += v / 3;
    for (double v : ln.values()) var += (v - mean) * (v - mean) / 3;
    CHECK(std::abs(mean) < 1e-12);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-12));

    Xoshiro256 rng(4);
    const auto x = Tensor::constant({50, 7}, rand_vec(rng, 350, -40, 40));
    const auto s = softmax(x);
    for (std::size_t r = 0; r < 50; ++r) {
      double row = 0;
      for (std::size_t c = 0; c < 7; ++c) row += s[r * 7 + c];
      CHECK(std::abs(row - 1.0) < 1e-12);
    }
    const auto wide = sigmoid(Tensor::constant({5}, {-700, -30, 0, 30, 700}));
    for (double v : wide.values()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    const auto narrow = sigmoid(Tensor::constant({3}, {-30, 0, 30}));
    for (double v : narrow.values()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
    CHECK(gelu(Tensor::scalar(1.0)).item() == doctest::Approx(0.5 * (1 + std::erf(1 / std::sqrt(2.0)))));
  }

  TEST_CASE("broadcasting aligns trailing dimensions") {
    const auto a = Tensor::constant({2, 3}, {1, 2, 3, 4, 5, 6});
    expect_values(add(a, Tensor::constant({3}, {10, 20, 30})), {11, 22, 33, 14, 25, 36});
    expect_values(add(a, Tensor::constant({2, 1}, {100, 200})), {101, 102, 103, 204, 205, 206});
    expect_values(mul(Tensor::constant({2, 1, 2}, {1, 2, 3, 4}), Tensor::constant({3, 1}, {1, 10, 100})),
                  {1, 2, 10, 20, 100, 200, 3, 4, 30, 40, 300, 400});
    CHECK(broadcast_shape({4, 1, 3}, {5, 1}) == Shape{4, 5, 3});
    CHECK_THROWS_AS(add(a, Tensor::constant({2}, {1, 2})), Error);
  }

  TEST_CASE("concat, slice, reshape, embedding lookup") {
    const auto a = Tensor::constant({2, 2}, {1, 2, 3, 4});
    const auto b = Tensor::constant({1, 2}, {5, 6});
    expect_values(concat({a, b}, 0), {1, 2, 3, 4, 5, 6});
    expect_values(concat({a, a}, 1), {1, 2, 1, 2, 3, 4, 3, 4});
    expect_values(slice(concat({a, b}, 0), 0, 1, 3), {3, 4, 5, 6});
    expect_values(slice(a, 1, 1, 2), {2, 4});
    CHECK(reshape(a, {4}).shape() == Shape{4});
    CHECK_THROWS_AS(reshape(a, {3}), Error);
    expect_values(embedding_lookup(Tensor::constant({3, 2}, {0, 1, 10, 11, 20, 21}), {2, 0, 2}),
                  {20, 21, 0, 1, 20, 21});
  }

  TEST_CASE("conv2d_transpose matches a direct scatter oracle") {
    Xoshiro256 rng(8);
    const std::size_t h = 3, w = 2, ci = 2, co = 3, k = 2, s = 2;
    const auto x = rand_vec(rng, h * w * ci), wt = rand_vec(rng, ci * k * k * co), b = rand_vec(rng, co);
    const auto y = conv2d_transpose(Tensor::constant({h, w, ci}, x), Tensor::constant({ci, k, k, co}, wt),
                                    Tensor::constant({co}, b), s);
    const std::size_t oh = (h - 1) * s + k, ow = (w - 1) * s + k;
    CHECK(y.shape() == Shape{oh, ow, co});
    std::vector<double> ref(oh * ow * co);
    for (std::size_t i = 0; i < oh * ow; ++i)
      for (std::size_t o = 0; o < co; ++o) ref[i * co + o] = b[o];
    for (std::size_t iy = 0; iy < h; ++iy)
      for (std::size_t ix = 0; ix < w; ++ix)
        for (std::size_t c = 0; c < ci; ++c)
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx)
              for (std::size_t o = 0; o < co; ++o)
                ref[((iy * s + ky) * ow + ix * s + kx) * co + o] +=
                    x[(iy * w + ix) * ci + c] * wt[((c * k + ky) * k + kx) * co + o];
    expect_values(y, ref);
  }

  TEST_CASE("bilinear resize with half-pixel centers") {
    const auto x = Tensor::constant({2, 2}, {0, 1, 2, 3});
    const auto y = bilinear_resize(x, 4, 4);
    // source coordinate of output i is (i + 0.5) / 2 - 0.5, clamped to the edge
    auto src = [](std::size_t i) { return std::clamp((static_cast<double>(i) + 0.5) / 2.0 - 0.5, 0.0, 1.0); };
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 4; ++c) {
        const double sy = src(r), sx = src(c);
        CHECK(y[r * 4 + c] == doctest::Approx(2 * sy + sx).epsilon(1e-12));
      }
    expect_values(bilinear_resize(x, 2, 2), {0, 1, 2, 3});
    const auto c3 = bilinear_resize(Tensor::full({3, 5, 2}, 4.0), 7, 2);
    CHECK(c3.shape() == Shape{7, 2, 2});
    for (double v : c3.values()) CHECK(v == doctest::Approx(4.0));
  }

  TEST_CASE("grad_check on a polynomial") {
    const auto t = Tensor::leaf({1}, {3.0});
    const auto r = grad_check([&] { return mul(t, t); }, {t});
    CHECK(r.max_rel_error < 1e-8);
    auto t2 = t;
    t2.zero_grad();
    mul(t, t).backward();
    CHECK(t.grad()[0] == doctest::Approx(6.0));
  }

  TEST_CASE("every primitive passes grad_check below 1e-6") {
    Xoshiro256 rng(21);
    auto L = [&](Shape s) { return rand_leaf(rng, s); };
    const std::vector<std::pair<const char*, double>> results = {
        {"matmul", check_op([](auto& in) { return matmul(in[0], in[1]); }, {L({3, 4}), L({4, 5})}, 1)},
        {"matmul_nt", check_op([](auto& in) { return matmul_nt(in[0], in[1]); }, {L({3, 4}), L({5, 4})}, 2)},
        {"linear", check_op([](auto& in) { return linear(in[0], in[1], in[2]); }, {L({3, 4}), L({4, 2}), L({2})}, 3)},
        {"transpose", check_op([](auto& in) { return transpose(in[0]); }, {L({3, 4})}, 4)},
        {"add", check_op([](auto& in) { return add(in[0], in[1]); }, {L({2, 3, 4}), L({3, 1})}, 5)},
        {"sub", check_op([](auto& in) { return sub(in[0], in[1]); }, {L({4}), L({3, 4})}, 6)},
        {"mul", check_op([](auto& in) { return mul(in[0], in[1]); }, {L({2, 1, 4}), L({3, 1})}, 7)},
        {"scale", check_op([](auto& in) { return scale(in[0], -2.5); }, {L({5})}, 8)},
        {"layer_norm",
         check_op([](auto& in) { return layer_norm(in[0], in[1], in[2]); }, {L({3, 6}), L({6}), L({6})}, 9)},
        {"softmax", check_op([](auto& in) { return softmax(in[0]); }, {L({4, 5})}, 10)},
        {"gelu", check_op([](auto& in) { return gelu(in[0]); }, {rand_leaf(rng, {20}, -3, 3)}, 11)},
        {"sigmoid", check_op([](auto& in) { return sigmoid(in[0]); }, {rand_leaf(rng, {20}, -4, 4)}, 12)},
        {"conv2d_transpose",
         check_op([](auto& in) { return conv2d_transpose(in[0], in[1], in[2], 2); },
                  {L({3, 2, 3}), L({3, 2, 2, 2}), L({2})}, 13)},
        {"bilinear_resize", check_op([](auto& in) { return bilinear_resize(in[0], 7, 5); }, {L({3, 4})}, 14)},
        {"bilinear_resize_c", check_op([](auto& in) { return bilinear_resize(in[0], 5, 6); }, {L({2, 3, 2})}, 15)},
        {"embedding_lookup",
         check_op([](auto& in) { return embedding_lookup(in[0], {1, 1, 0, 3}); }, {L({4, 3})}, 16)},
        {"concat", check_op([](auto& in) { return concat({in[0], in[1]}, 1); }, {L({2, 3}), L({2, 2})}, 17)},
        {"slice", check_op([](auto& in) { return slice(in[0], 1, 1, 3); }, {L({3, 4})}, 18)},
        {"reshape", check_op([](auto& in) { return reshape(in[0], {6, 2}); }, {L({3, 4})}, 19)},
        {"sum", check_op([](auto& in) { return sum(in[0]); }, {L({3, 4})}, 20)},
        {"mean", check_op([](auto& in) { return mean(in[0]); }, {L({3, 4})}, 21)},
    };
    for (const auto& [name, err] : results) {
      INFO(name);
      CHECK(err < 1e-6);
    }
  }

  TEST_CASE("two-layer perceptron with sigmoid loss passes grad_check") {
    Xoshiro256 rng(31);
    const auto x = Tensor::constant({6, 4}, rand_vec(rng, 24));
    const auto w1 = rand_leaf(rng, {4, 8}), b1 = rand_leaf(rng, {8}), w2 = rand_leaf(rng, {8, 1}),
               b2 = rand_leaf(rng, {1});
    auto f = [&] { return mean(sigmoid(linear(gelu(linear(x, w1, b1)), w2, b2))); };
    CHECK(grad_check(f, {w1, b1, w2, b2}).max_rel_error < 1e-6);
  }

  TEST_CASE("gradients accumulate and are not recorded under NoGradGuard") {
    const auto a = Tensor::leaf({2}, {1, 2});
    sum(a).backward();
    sum(a).backward();
    CHECK(a.grad()[0] == 2.0);
    {
      NoGradGuard guard;
      CHECK_FALSE(grad_enabled());
      const auto y = scale(a, 3.0);
      CHECK_FALSE(y.requires_grad());
    }
    CHECK(grad_enabled());
  }

  TEST_CASE("grad_check reports non-finite losses") {
    const auto t = Tensor::leaf({1}, {0.0});
    CHECK_THROWS_AS(grad_check([&] { return scale(t, std::numeric_limits<double>::infinity()); }, {t}), Error);
  }

  TEST_CASE("parameter hash tracks values and frozen flag") {
    ParameterSet p;
    p.add("a", {2}, {1, 2}, true);
    auto& b = p.add("b", {1}, {3}, false);
    const auto frozen = p.hash(true), train = p.hash(false);
    CHECK(frozen != train);
    b.mutable_values()[0] = 4;
    CHECK(p.hash(true) == frozen);
    CHECK(p.hash(false) != train);
    CHECK(p.scalar_count(true) == 2);
    CHECK(p.count(false) == 1);
  }

  TEST_CASE("snapshot round trip and corruption detection") {
    ParameterSet p;
    p.add("w", {2, 3}, {1.5, -2, 3, 4, 5, 6.25}, false);
    p.add("frozen", {1}, {9}, true);
    p.add("b", {3}, {0.1, 0.2, 0.3}, false);
    const auto recs = snapshot_of(p);
    REQUIRE(recs.size() == 2);
    CHECK(recs[0].name == "w");
    const auto bytes = encode_snapshot(recs);
    CHECK(decode_snapshot(bytes) == recs);

    auto bad = bytes;
    bad[20] ^= std::byte{1};
    CHECK_THROWS_AS(decode_snapshot(bad), Error);
    CHECK_THROWS_AS(decode_snapshot(std::span(bytes).first(bytes.size() - 3)), Error);

    ParameterSet q;
    q.add("w", {2, 3}, std::vector<double>(6, 0.0), false);
    q.add("b", {3}, std::vector<double>(3, 0.0), false);
    load_snapshot(q, recs);
    CHECK(q.find("w")->tensor[5] == 6.25);
    CHECK(q.find("b")->tensor[0] == static_cast<double>(0.1F));

    ParameterSet r;
    r.add("w", {3, 2}, std::vector<double>(6, 0.0), false);
    CHECK_THROWS_AS(load_snapshot(r, recs), Error);

    const auto path = test::scratch("snapshot") / "p.samrips";
    write_snapshot_file(path, recs);
    CHECK(read_snapshot_file(path) == recs);
  }
}
