#include "samri/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>

#include "samri/checksum.hpp"
#include "samri/error.hpp"
#include "samri/kernels.hpp"

namespace samri::tensor {

using kernels::GemmArgs;
using kernels::Trans;

namespace {

thread_local bool t_grad_enabled = true;

[[noreturn]] void shape_error(const std::string& op, const Shape& a, const Shape& b) {
  throw Error(ErrorCode::ShapeMismatch, op + ": " + shape_str(a) + " vs " + shape_str(b));
}

[[noreturn]] void shape_error(const std::string& op, const Shape& a) {
  throw Error(ErrorCode::ShapeMismatch, op + ": " + shape_str(a));
}

std::shared_ptr<Node> new_node(Shape shape, std::vector<double> values) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  return n;
}

Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

// Maps each output element to its source element in a broadcast operand.
std::vector<std::size_t> broadcast_index(const Shape& src, const Shape& out) {
  const std::size_t n = numel(out);
  std::vector<std::size_t> idx(n);
  const std::size_t ns = numel(src);
  if (src == out) {
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    return idx;
  }
  // source shape equal to the trailing output dims: plain modulo
  bool suffix = src.size() <= out.size();
  for (std::size_t i = 0; suffix && i < src.size(); ++i)
    suffix = src[src.size() - 1 - i] == out[out.size() - 1 - i];
  if (suffix) {
    for (std::size_t i = 0; i < n; ++i) idx[i] = i % ns;
    return idx;
  }
  const std::size_t r = out.size();
  std::vector<std::size_t> stride(r, 0);
  std::size_t s = 1;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const std::size_t od = r - 1 - i;
    const std::size_t extent = src[src.size() - 1 - i];
    stride[od] = extent == 1 ? 0 : s;
    s *= extent;
  }
  std::vector<std::size_t> counter(r, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t off = 0;
    for (std::size_t d = 0; d < r; ++d) off += counter[d] * stride[d];
    idx[i] = off;
    for (std::size_t d = r; d-- > 0;) {
      if (++counter[d] < out[d]) break;
      counter[d] = 0;
    }
  }
  return idx;
}

void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
          double* c, bool accumulate) {
  kernels::gemm(GemmArgs{ta, tb, m, n, k, a, b, c, accumulate});
}

void require_rank(const Tensor& t, std::size_t r, const std::string& op) {
  if (t.rank() != r) shape_error(op + " expects rank " + std::to_string(r), t.shape());
}

}  // namespace

std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// ---- Tensor ------------------------------------------------------------------

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  if (tensor::numel(shape) != values.size())
    throw Error(ErrorCode::ShapeMismatch,
                "constant: " + std::to_string(values.size()) + " values for shape " + shape_str(shape));
  return Tensor(new_node(std::move(shape), std::move(values)));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double v) {
  const std::size_t n = tensor::numel(shape);
  return Tensor(new_node(std::move(shape), std::vector<double>(n, v)));
}

Tensor Tensor::leaf(Shape shape, std::vector<double> values) {
  Tensor t = constant(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

double Tensor::item() const {
  if (numel() != 1) shape_error("item on non-scalar", shape());
  return node_->value[0];
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::backward() const {
  if (numel() != 1) shape_error("backward from non-scalar", shape());
  if (!node_->requires_grad) return;
  // iterative post-order DFS
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = prev_; }

Tensor make_op(Shape shape, std::vector<double> values, const std::vector<Tensor>& parents,
               std::function<void(Node&)> backward) {
  auto node = new_node(std::move(shape), std::move(values));
  if (t_grad_enabled) {
    const bool any = std::any_of(parents.begin(), parents.end(), [](const Tensor& p) { return p.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(parents.size());
      for (const auto& p : parents) node->parents.push_back(p.ptr());
      node->backward = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

// ---- linear algebra ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) shape_error("matmul", a.shape(), b.shape());
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  gemm(Trans::N, Trans::N, m, n, k, a.values().data(), b.values().data(), out.data(), false);
  return make_op({m, n}, std::move(out), {a, b}, [m, n, k](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) gemm(Trans::N, Trans::T, m, k, n, self.grad.data(), pb.value.data(), pa.ensure_grad().data(), true);
    if (pb.requires_grad) gemm(Trans::T, Trans::N, k, n, m, pa.value.data(), self.grad.data(), pb.ensure_grad().data(), true);
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) shape_error("matmul_nt", a.shape(), b.shape());
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  std::vector<double> out(m * n);
  gemm(Trans::N, Trans::T, m, n, k, a.values().data(), b.values().data(), out.data(), false);
  return make_op({m, n}, std::move(out), {a, b}, [m, n, k](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) gemm(Trans::N, Trans::N, m, k, n, self.grad.data(), pb.value.data(), pa.ensure_grad().data(), true);
    if (pb.requires_grad) gemm(Trans::T, Trans::N, n, k, m, self.grad.data(), pa.value.data(), pb.ensure_grad().data(), true);
  });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<double> out(r * c);
  const auto v = a.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = v[i * c + j];
  return make_op({c, r}, std::move(out), {a}, [r, c](Node& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(0)) shape_error("linear", x.shape(), w.shape());
  if (b.numel() != w.dim(1)) shape_error("linear bias", w.shape(), b.shape());
  const std::size_t t = x.dim(0), in = x.dim(1), o = w.dim(1);
  std::vector<double> out(t * o);
  const auto bv = b.values();
  for (std::size_t i = 0; i < t; ++i) std::copy(bv.begin(), bv.end(), out.begin() + static_cast<std::ptrdiff_t>(i * o));
  gemm(Trans::N, Trans::N, t, o, in, x.values().data(), w.values().data(), out.data(), true);
  return make_op({t, o}, std::move(out), {x, w, b}, [t, in, o](Node& self) {
    Node& px = parent(self, 0);
    Node& pw = parent(self, 1);
    Node& pb = parent(self, 2);
    if (px.requires_grad) gemm(Trans::N, Trans::T, t, in, o, self.grad.data(), pw.value.data(), px.ensure_grad().data(), true);
    if (pw.requires_grad) gemm(Trans::T, Trans::N, in, o, t, px.value.data(), self.grad.data(), pw.ensure_grad().data(), true);
    if (pb.requires_grad) {
      auto& gb = pb.ensure_grad();
      for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < o; ++j) gb[j] += self.grad[i * o + j];
    }
  });
}

// ---- elementwise --------------------------------------------------------------

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    const std::size_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1) shape_error("broadcast", a, b);
    out[r - 1 - i] = std::max(da, db);
  }
  return out;
}

namespace {

enum class BinOp { Add, Sub, Mul };

Tensor binary(const Tensor& a, const Tensor& b, BinOp op) {
  Shape out_shape = broadcast_shape(a.shape(), b.shape());
  auto ia = std::make_shared<std::vector<std::size_t>>(broadcast_index(a.shape(), out_shape));
  auto ib = std::make_shared<std::vector<std::size_t>>(broadcast_index(b.shape(), out_shape));
  const std::size_t n = numel(out_shape);
  std::vector<double> out(n);
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < n; ++i) {
    const double x = av[(*ia)[i]], y = bv[(*ib)[i]];
    out[i] = op == BinOp::Add ? x + y : (op == BinOp::Sub ? x - y : x * y);
  }
  return make_op(std::move(out_shape), std::move(out), {a, b}, [ia, ib, n, op](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    const auto& g = self.grad;
    if (pa.requires_grad) {
      auto& ga = pa.ensure_grad();
      for (std::size_t i = 0; i < n; ++i) ga[(*ia)[i]] += op == BinOp::Mul ? g[i] * pb.value[(*ib)[i]] : g[i];
    }
    if (pb.requires_grad) {
      auto& gb = pb.ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        const double d = op == BinOp::Mul ? g[i] * pa.value[(*ia)[i]] : (op == BinOp::Sub ? -g[i] : g[i]);
        gb[(*ib)[i]] += d;
      }
    }
  });
}

template <class F, class D>
Tensor unary(const Tensor& x, F f, D dfdx_from_xy) {
  const std::size_t n = x.numel();
  std::vector<double> out(n);
  const auto v = x.values();
  for (std::size_t i = 0; i < n; ++i) out[i] = f(v[i]);
  return make_op(x.shape(), std::move(out), {x}, [n, dfdx_from_xy](Node& self) {
    Node& p = parent(self, 0);
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * dfdx_from_xy(p.value[i], self.value[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Add); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Mul); }

Tensor scale(const Tensor& a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor gelu(const Tensor& x) {
  return unary(
      x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)); },
      [](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
        const double pdf = std::exp(-0.5 * v * v) * std::numbers::inv_sqrtpi / std::numbers::sqrt2;
        return cdf + v * pdf;
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

// ---- normalization ------------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() == 0) shape_error("layer_norm", x.shape());
  const std::size_t d = x.shape().back();
  if (gain.numel() != d || bias.numel() != d) shape_error("layer_norm gain/bias", x.shape(), gain.shape());
  const std::size_t rows = x.numel() / d;
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto rstd = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(x.numel());
  const auto v = x.values(), gv = gain.values(), bv = bias.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = v.data() + r * d;
    double mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const double xh = (row[j] - mu) * rs;
      (*xhat)[r * d + j] = xh;
      out[r * d + j] = xh * gv[j] + bv[j];
    }
  }
  return make_op(x.shape(), std::move(out), {x, gain, bias}, [d, rows, xhat, rstd](Node& self) {
    Node& px = parent(self, 0);
    Node& pg = parent(self, 1);
    Node& pb = parent(self, 2);
    const auto& g = self.grad;
    if (pg.requires_grad || pb.requires_grad) {
      auto& gg = pg.ensure_grad();
      auto& gb = pb.ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) {
          gg[j] += g[r * d + j] * (*xhat)[r * d + j];
          gb[j] += g[r * d + j];
        }
    }
    if (px.requires_grad) {
      auto& gx = px.ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        double m1 = 0, m2 = 0;
        for (std::size_t j = 0; j < d; ++j) {
          const double dxh = g[r * d + j] * pg.value[j];
          m1 += dxh;
          m2 += dxh * (*xhat)[r * d + j];
        }
        m1 /= static_cast<double>(d);
        m2 /= static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j) {
          const double dxh = g[r * d + j] * pg.value[j];
          gx[r * d + j] += (*rstd)[r] * (dxh - m1 - (*xhat)[r * d + j] * m2);
        }
      }
    }
  });
}

Tensor softmax(const Tensor& x) {
  if (x.rank() == 0) shape_error("softmax", x.shape());
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.numel() / d;
  std::vector<double> out(x.numel());
  const auto v = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = v.data() + r * d;
    const double mx = *std::max_element(row, row + d);
    double s = 0;
    for (std::size_t j = 0; j < d; ++j) s += (out[r * d + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] /= s;
  }
  return make_op(x.shape(), std::move(out), {x}, [d, rows](Node& self) {
    auto& gx = parent(self, 0).ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0;
      for (std::size_t j = 0; j < d; ++j) dot += self.grad[r * d + j] * self.value[r * d + j];
      for (std::size_t j = 0; j < d; ++j)
        gx[r * d + j] += self.value[r * d + j] * (self.grad[r * d + j] - dot);
    }
  });
}

// ---- spatial ------------------------------------------------------------------

Tensor conv2d_transpose(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride) {
  if (x.rank() != 3 || w.rank() != 4 || w.dim(0) != x.dim(2) || w.dim(1) != w.dim(2))
    shape_error("conv2d_transpose", x.shape(), w.shape());
  const std::size_t h = x.dim(0), wd = x.dim(1), cin = x.dim(2), k = w.dim(1), cout = w.dim(3);
  if (b.numel() != cout) shape_error("conv2d_transpose bias", w.shape(), b.shape());
  if (stride == 0) throw Error(ErrorCode::InvalidArgument, "conv2d_transpose stride must be positive");
  const std::size_t oh = (h - 1) * stride + k, ow = (wd - 1) * stride + k;
  const std::size_t cols = k * k * cout;

  // per-input-pixel contributions: [H*W, Cin] x [Cin, k*k*Cout]
  std::vector<double> contrib(h * wd * cols);
  gemm(Trans::N, Trans::N, h * wd, cols, cin, x.values().data(), w.values().data(), contrib.data(), false);
  std::vector<double> out(oh * ow * cout);
  const auto bv = b.values();
  for (std::size_t p = 0; p < oh * ow; ++p)
    for (std::size_t o = 0; o < cout; ++o) out[p * cout + o] = bv[o];
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < wd; ++j)
      for (std::size_t a = 0; a < k; ++a)
        for (std::size_t c = 0; c < k; ++c) {
          const double* src = contrib.data() + (i * wd + j) * cols + (a * k + c) * cout;
          double* dst = out.data() + ((i * stride + a) * ow + (j * stride + c)) * cout;
          for (std::size_t o = 0; o < cout; ++o) dst[o] += src[o];
        }

  return make_op({oh, ow, cout}, std::move(out), {x, w, b}, [=](Node& self) {
    Node& px = parent(self, 0);
    Node& pw = parent(self, 1);
    Node& pb = parent(self, 2);
    std::vector<double> dcontrib(h * wd * cols);
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < wd; ++j)
        for (std::size_t a = 0; a < k; ++a)
          for (std::size_t c = 0; c < k; ++c) {
            const double* src = self.grad.data() + ((i * stride + a) * ow + (j * stride + c)) * cout;
            double* dst = dcontrib.data() + (i * wd + j) * cols + (a * k + c) * cout;
            std::copy(src, src + cout, dst);
          }
    if (px.requires_grad)
      gemm(Trans::N, Trans::T, h * wd, cin, cols, dcontrib.data(), pw.value.data(), px.ensure_grad().data(), true);
    if (pw.requires_grad)
      gemm(Trans::T, Trans::N, cin, cols, h * wd, px.value.data(), dcontrib.data(), pw.ensure_grad().data(), true);
    if (pb.requires_grad) {
      auto& gb = pb.ensure_grad();
      for (std::size_t p = 0; p < oh * ow; ++p)
        for (std::size_t o = 0; o < cout; ++o) gb[o] += self.grad[p * cout + o];
    }
  });
}

namespace {

struct Tap {
  std::size_t i0, i1;
  double l;
};

std::vector<Tap> resize_taps(std::size_t in, std::size_t out) {
  std::vector<Tap> taps(out);
  const double sc = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    const double f = std::max(0.0, (static_cast<double>(o) + 0.5) * sc - 0.5);
    const auto i0 = std::min(static_cast<std::size_t>(f), in - 1);
    taps[o] = {i0, std::min(i0 + 1, in - 1), f - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

Tensor bilinear_resize(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  if (x.rank() != 2 && x.rank() != 3) shape_error("bilinear_resize", x.shape());
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.rank() == 3 ? x.dim(2) : 1;
  auto ty = std::make_shared<std::vector<Tap>>(resize_taps(h, out_h));
  auto tx = std::make_shared<std::vector<Tap>>(resize_taps(w, out_w));
  std::vector<double> out(out_h * out_w * c);
  const auto v = x.values();
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    const Tap& a = (*ty)[oy];
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      const Tap& b = (*tx)[ox];
      for (std::size_t ch = 0; ch < c; ++ch) {
        auto at = [&](std::size_t yy, std::size_t xx) { return v[(yy * w + xx) * c + ch]; };
        const double top = (1 - b.l) * at(a.i0, b.i0) + b.l * at(a.i0, b.i1);
        const double bot = (1 - b.l) * at(a.i1, b.i0) + b.l * at(a.i1, b.i1);
        out[(oy * out_w + ox) * c + ch] = (1 - a.l) * top + a.l * bot;
      }
    }
  }
  Shape shape = x.rank() == 3 ? Shape{out_h, out_w, c} : Shape{out_h, out_w};
  return make_op(std::move(shape), std::move(out), {x}, [=](Node& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const Tap& a = (*ty)[oy];
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const Tap& b = (*tx)[ox];
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double go = self.grad[(oy * out_w + ox) * c + ch];
          g[(a.i0 * w + b.i0) * c + ch] += go * (1 - a.l) * (1 - b.l);
          g[(a.i0 * w + b.i1) * c + ch] += go * (1 - a.l) * b.l;
          g[(a.i1 * w + b.i0) * c + ch] += go * a.l * (1 - b.l);
          g[(a.i1 * w + b.i1) * c + ch] += go * a.l * b.l;
        }
      }
    }
  });
}

// ---- indexing -------------------------------------------------------------------

Tensor embedding_lookup(const Tensor& table, const std::vector<std::size_t>& indices) {
  require_rank(table, 2, "embedding_lookup");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  for (auto i : indices)
    if (i >= vocab)
      throw Error(ErrorCode::ShapeMismatch, "embedding_lookup: index " + std::to_string(i) + " outside table " +
                                                shape_str(table.shape()));
  std::vector<double> out(indices.size() * d);
  const auto v = table.values();
  for (std::size_t r = 0; r < indices.size(); ++r)
    std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(indices[r] * d), d, out.begin() + static_cast<std::ptrdiff_t>(r * d));
  return make_op({indices.size(), d}, std::move(out), {table}, [indices, d](Node& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (std::size_t r = 0; r < indices.size(); ++r)
      for (std::size_t j = 0; j < d; ++j) g[indices[r] * d + j] += self.grad[r * d + j];
  });
}

namespace {

struct AxisSplit {
  std::size_t outer, extent, inner;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit a{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) a.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) a.inner *= s[i];
  return a;
}

}  // namespace

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw Error(ErrorCode::ShapeMismatch, "concat of nothing");
  Shape out_shape = parts[0].shape();
  if (axis >= out_shape.size()) shape_error("concat axis out of range", out_shape);
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != out_shape.size()) shape_error("concat", out_shape, p.shape());
    for (std::size_t d = 0; d < out_shape.size(); ++d)
      if (d != axis && p.dim(d) != out_shape[d]) shape_error("concat", out_shape, p.shape());
    total += p.dim(axis);
  }
  out_shape[axis] = total;
  const AxisSplit os = split_at(out_shape, axis);
  std::vector<double> out(numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t blk = p.dim(axis) * os.inner;
    const auto v = p.values();
    for (std::size_t o = 0; o < os.outer; ++o)
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(o * blk), blk,
                  out.begin() + static_cast<std::ptrdiff_t>(o * total * os.inner + off * os.inner));
    off += p.dim(axis);
  }
  return make_op(std::move(out_shape), std::move(out), parts, [os, total, offsets](Node& self) {
    for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
      Node& p = *self.parents[pi];
      if (!p.requires_grad) continue;
      auto& g = p.ensure_grad();
      const std::size_t blk = (p.value.size() / os.outer);
      for (std::size_t o = 0; o < os.outer; ++o)
        for (std::size_t j = 0; j < blk; ++j) g[o * blk + j] += self.grad[o * total * os.inner + offsets[pi] * os.inner + j];
    }
  });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= x.rank() || begin > end || end > x.dim(axis))
    shape_error("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " + std::to_string(axis), x.shape());
  const AxisSplit s = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  const std::size_t blk = (end - begin) * s.inner;
  std::vector<double> out(s.outer * blk);
  const auto v = x.values();
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(v.begin() + static_cast<std::ptrdiff_t>((o * s.extent + begin) * s.inner), blk,
                out.begin() + static_cast<std::ptrdiff_t>(o * blk));
  return make_op(std::move(out_shape), std::move(out), {x}, [s, begin, blk](Node& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t j = 0; j < blk; ++j) g[(o * s.extent + begin) * s.inner + j] += self.grad[o * blk + j];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) shape_error("reshape", x.shape(), shape);
  std::vector<double> out(x.values().begin(), x.values().end());
  return make_op(std::move(shape), std::move(out), {x}, [](Node& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor sum(const Tensor& x) {
  double s = 0;
  for (double v : x.values()) s += v;
  return make_op({1}, {s}, {x}, [](Node& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (auto& gi : g) gi += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

// ---- parameters -------------------------------------------------------------------

Tensor& ParameterSet::add(std::string name, Shape shape, std::vector<double> values, bool frozen) {
  Tensor t = frozen ? Tensor::constant(std::move(shape), std::move(values))
                    : Tensor::leaf(std::move(shape), std::move(values));
  params_.push_back({std::move(name), std::move(t), frozen});
  return params_.back().tensor;
}

Parameter* ParameterSet::find(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

std::size_t ParameterSet::count(bool frozen) const {
  return static_cast<std::size_t>(std::count_if(params_.begin(), params_.end(), [&](auto& p) { return p.frozen == frozen; }));
}

std::size_t ParameterSet::scalar_count(bool frozen) const {
  std::size_t n = 0;
  for (const auto& p : params_)
    if (p.frozen == frozen) n += p.tensor.numel();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

std::uint64_t ParameterSet::hash(bool frozen) const {
  Xxh64Stream s;
  for (const auto& p : params_) {
    if (p.frozen != frozen) continue;
    s.update(std::as_bytes(std::span(p.name.data(), p.name.size())));
    s.update(std::as_bytes(p.tensor.values()));
  }
  return s.digest();
}

// ---- gradient check -----------------------------------------------------------------

GradCheckResult grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params, double h) {
  for (auto p : params) p.zero_grad();
  const Tensor loss = f();
  if (!std::isfinite(loss.item())) throw Error(ErrorCode::NonFiniteLoss, "grad_check: loss is not finite");
  loss.backward();

  GradCheckResult res;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor p = params[pi];
    const std::vector<double> analytic(p.grad().begin(), p.grad().end());
    auto vals = p.mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double saved = vals[i];
      double fp, fm;
      {
        NoGradGuard ng;
        vals[i] = saved + h;
        fp = f().item();
        vals[i] = saved - h;
        fm = f().item();
      }
      vals[i] = saved;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw Error(ErrorCode::NonFiniteLoss, "grad_check: perturbed loss is not finite");
      const double fd = (fp - fm) / (2.0 * h);
      const double a = analytic.empty() ? 0.0 : analytic[i];
      const double err = std::abs(a - fd) / std::max(1.0, std::abs(fd));
      ++res.entries;
      if (err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst_tensor = "param#" + std::to_string(pi);
        res.worst_index = i;
      }
    }
  }
  return res;
}

}  // namespace samri::tensor
