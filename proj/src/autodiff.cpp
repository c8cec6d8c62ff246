#include "svq/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace svq {

// ---------------------------------------------------------------------------
// Var / Tape

const Array& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Array value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Array value) {
  nodes_.push_back(Node{std::move(value), {}, {}, true});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Array value, std::span<const Var> inputs, BackwardFn backward) {
  bool needs = false;
  for (const auto& in : inputs) {
    if (&in.tape() != this) throw std::invalid_argument("op mixes vars from different tapes");
    needs = needs || nodes_[in.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : BackwardFn{}, needs});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Array value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
}

std::span<double> Tape::grad_slot(std::size_t id) {
  auto& node = nodes_[id];
  if (node.grad.empty()) node.grad.assign(node.value.size(), 0.0);
  return node.grad;
}

void Tape::backward(const Var& loss, double seed) {
  if (&loss.tape() != this) throw std::invalid_argument("backward: loss belongs to another tape");
  if (loss.value().size() != 1) {
    throw ShapeError("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  for (auto& node : nodes_) node.grad.clear();
  grad_slot(loss.id())[0] = seed;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (node.backward && !node.grad.empty()) node.backward(*this, i);
  }
}

Array Tape::grad(const Var& v) const {
  const auto& node = nodes_[v.id()];
  if (node.grad.empty()) return Array(node.value.shape(), 0.0);
  return Array(node.value.shape(), node.grad);
}

// ---------------------------------------------------------------------------
// helpers

namespace {

// Message built only on failure.
#define SVQ_CHECK(ok, msg)          \
  do {                              \
    if (!(ok)) throw ShapeError(msg); \
  } while (false)

void check_same_shape(const char* op, const Var& a, const Var& b) {
  SVQ_CHECK(a.shape() == b.shape(),
        std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void check_rank2(const char* op, const Var& x) {
  SVQ_CHECK(x.value().rank() == 2, std::string(op) + ": expected a matrix, got " + shape_str(x.shape()));
}

// Splits a shape into (rows, last) for last-axis ops.
std::pair<std::size_t, std::size_t> rows_last(const char* op, const Array& x) {
  SVQ_CHECK(x.rank() >= 1 && x.shape().back() > 0, std::string(op) + ": empty last axis in " + shape_str(x.shape()));
  const std::size_t last = x.shape().back();
  return {x.size() / last, last};
}

using Unary = double (*)(double);

// Elementwise op with derivative expressed through input x and output y.
template <class Fwd, class Deriv>
Var elementwise(const Var& x, Fwd fwd, Deriv deriv) {
  const Array& xv = x.value();
  Array out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, deriv](Tape& t, std::size_t self) {
    const auto g = t.grad_of(self);
    const auto& xv = t.value(ix);
    const auto& yv = t.value(self);
    auto gx = t.grad_slot(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xv[i], yv[i]);
  });
}

}  // namespace

// ---------------------------------------------------------------------------
// elementwise and linear algebra

Var matmul(const Var& a, const Var& b) {
  check_rank2("matmul", a);
  check_rank2("matmul", b);
  const Array& av = a.value();
  const Array& bv = b.value();
  const std::size_t n = av.rows(), k = av.cols(), m = bv.cols();
  SVQ_CHECK(k == bv.rows(), "matmul: shape mismatch " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
  Array out(Shape{n, m});
  {
    const double* A = av.data().data();
    const double* B = bv.data().data();
    double* O = out.data().data();
    for (std::size_t i = 0; i < n; ++i) {
      double* orow = O + i * m;
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = A[i * k + p];
        if (aip == 0.0) continue;
        const double* brow = B + p * m;
        for (std::size_t j = 0; j < m; ++j) orow[j] += aip * brow[j];
      }
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib, n, k, m](Tape& t, std::size_t self) {
    const double* G = t.grad_of(self).data();
    const double* A = t.value(ia).data().data();
    const double* B = t.value(ib).data().data();
    if (t.requires_grad(ia)) {
      double* GA = t.grad_slot(ia).data();
      for (std::size_t i = 0; i < n; ++i) {
        const double* grow = G + i * m;
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = B + p * m;
          double acc = 0.0;
          for (std::size_t j = 0; j < m; ++j) acc += grow[j] * brow[j];
          GA[i * k + p] += acc;
        }
      }
    }
    if (t.requires_grad(ib)) {
      double* GB = t.grad_slot(ib).data();
      for (std::size_t i = 0; i < n; ++i) {
        const double* grow = G + i * m;
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A[i * k + p];
          if (aip == 0.0) continue;
          double* gbrow = GB + p * m;
          for (std::size_t j = 0; j < m; ++j) gbrow[j] += aip * grow[j];
        }
      }
    }
  });
}

namespace {

template <class Combine, class GradA, class GradB>
Var binary(const char* op, const Var& a, const Var& b, Combine combine, GradA grad_a, GradB grad_b) {
  check_same_shape(op, a, b);
  const Array& av = a.value();
  const Array& bv = b.value();
  Array out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = combine(av[i], bv[i]);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib, grad_a, grad_b](Tape& t, std::size_t self) {
    const auto g = t.grad_of(self);
    const auto& av = t.value(ia);
    const auto& bv = t.value(ib);
    if (t.requires_grad(ia)) {
      auto ga = t.grad_slot(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += grad_a(g[i], av[i], bv[i]);
    }
    if (t.requires_grad(ib)) {
      auto gb = t.grad_slot(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += grad_b(g[i], av[i], bv[i]);
    }
  });
}

}  // namespace

Var add(const Var& a, const Var& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double g, double, double) { return g; },
      [](double g, double, double) { return g; });
}

Var sub(const Var& a, const Var& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double g, double, double) { return g; },
      [](double g, double, double) { return -g; });
}

Var mul(const Var& a, const Var& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double g, double, double y) { return g * y; },
      [](double g, double x, double) { return g * x; });
}

Var add_bias(const Var& x, const Var& bias) {
  const Array& xv = x.value();
  const Array& bv = bias.value();
  SVQ_CHECK(bv.rank() == 1 && (xv.rank() == 1 || xv.rank() == 2) && xv.cols() == bv.size(),
        "add_bias: shape mismatch " + shape_str(xv.shape()) + " + " + shape_str(bv.shape()));
  const std::size_t d = bv.size();
  Array out = xv;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % d];
  const std::size_t ix = x.id(), ib = bias.id();
  return x.tape().record(std::move(out), {x, bias}, [ix, ib, d](Tape& t, std::size_t self) {
    const auto g = t.grad_of(self);
    if (t.requires_grad(ix)) {
      auto gx = t.grad_slot(ix);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      auto gb = t.grad_slot(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % d] += g[i];
    }
  });
}

Var scale(const Var& x, double c) { return affine(x, c, 0.0); }

Var affine(const Var& x, double a, double b) {
  return elementwise(
      x, [a, b](double v) { return a * v + b; }, [a](double, double) { return a; });
}

Var powc(const Var& x, double exponent) {
  const bool integral = std::floor(exponent) == exponent;
  if (!integral) {
    for (double v : x.value().data()) {
      if (v < 0.0) throw std::domain_error("powc: negative base with non-integer exponent");
    }
  }
  return elementwise(
      x, [exponent](double v) { return std::pow(v, exponent); },
      [exponent](double v, double) { return exponent == 0.0 ? 0.0 : exponent * std::pow(v, exponent - 1.0); });
}

Var clamp(const Var& x, double lo, double hi) {
  if (!(lo <= hi)) throw std::invalid_argument("clamp: lo > hi");
  return elementwise(
      x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// shape

Var reshape(const Var& x, Shape shape) {
  Array out = x.value().reshaped(std::move(shape));
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix](Tape& t, std::size_t self) {
    const auto g = t.grad_of(self);
    auto gx = t.grad_slot(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  SVQ_CHECK(!parts.empty(), "concat: no inputs");
  const Shape& first = parts[0].shape();
  SVQ_CHECK(axis < first.size(), "concat: axis " + std::to_string(axis) + " out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
    SVQ_CHECK(ok, "concat: shape mismatch " + shape_str(first) + " vs " + shape_str(s) + " along axis " +
                  std::to_string(axis));
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];

  Array out(out_shape);
  const std::size_t out_stride = out_shape[axis] * inner;
  std::vector<std::size_t> ids, widths, offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.shape()[axis] * inner;
    const auto& pv = p.value();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pv.data().data() + o * w, w, out.data().data() + o * out_stride + offset);
    }
    ids.push_back(p.id());
    widths.push_back(w);
    offsets.push_back(offset);
    offset += w;
  }
  return parts[0].tape().record(
      std::move(out), parts, [ids, widths, offsets, outer, out_stride](Tape& t, std::size_t self) {
        const auto g = t.grad_of(self);
        for (std::size_t p = 0; p < ids.size(); ++p) {
          if (!t.requires_grad(ids[p])) continue;
          auto gp = t.grad_slot(ids[p]);
          for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t i = 0; i < widths[p]; ++i) gp[o * widths[p] + i] += g[o * out_stride + offsets[p] + i];
          }
        }
      });
}

Var concat(std::initializer_list<Var> parts, std::size_t axis) {
  return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

Var slice_rows(const Var& x, std::size_t begin, std::size_t end) {
  check_rank2("slice_rows", x);
  const Array& xv = x.value();
  SVQ_CHECK(begin <= end && end <= xv.rows(), "slice_rows: range [" + std::to_string(begin) + ", " +
                                              std::to_string(end) + ") out of bounds for " + shape_str(xv.shape()));
  const std::size_t d = xv.cols();
  Array out(Shape{end - begin, d});
  std::copy_n(xv.data().data() + begin * d, (end - begin) * d, out.data().data());
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, begin, d](Tape& t, std::size_t self) {
    const auto g = t.grad_of(self);
    auto gx = t.grad_slot(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[begin * d + i] += g[i];
  });
}

Var gather_rows(const Var& table, std::span<const std::size_t> ids) {
  check_rank2("gather_rows", table);
  const Array& tv = table.value();
  const std::size_t d = tv.cols();
  Array out(Shape{ids.size(), d});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= tv.rows()) {
      throw ShapeError("gather_rows: id " + std::to_string(ids[r]) + " out of range for table " +
                       shape_str(tv.shape()));
    }
    std::copy_n(&tv(ids[r], 0), d, &out(r, 0));
  }
  const std::size_t it = table.id();
  std::vector<std::size_t> rows(ids.begin(), ids.end());
  return table.tape().record(std::move(out), {table}, [it, d, rows = std::move(rows)](Tape& t, std::size_t self) {
    const auto g = t.grad_of(self);
    auto gt = t.grad_slot(it);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (std::size_t c = 0; c < d; ++c) gt[rows[r] * d + c] += g[r * d + c];
    }
  });
}

Var pick(const Var& x, std::span<const std::size_t> cols) {
  check_rank2("pick", x);
  const Array& xv = x.value();
  SVQ_CHECK(cols.size() == xv.rows(),
        "pick: " + std::to_string(cols.size()) + " indices for " + shape_str(xv.shape()));
  const std::size_t m = xv.cols();
  Array out(Shape{cols.size()});
  for (std::size_t r = 0; r < cols.size(); ++r) {
    if (cols[r] >= m) throw ShapeError("pick: column " + std::to_string(cols[r]) + " out of range for " +
                                       shape_str(xv.shape()));
    out[r] = xv(r, cols[r]);
  }
  const std::size_t ix = x.id();
  std::vector<std::size_t> c(cols.begin(), cols.end());
  return x.tape().record(std::move(out), {x}, [ix, m, c = std::move(c)](Tape& t, std::size_t self) {
    const auto g = t.grad_of(self);
    auto gx = t.grad_slot(ix);
    for (std::size_t r = 0; r < c.size(); ++r) gx[r * m + c[r]] += g[r];
  });
}

// ---------------------------------------------------------------------------
// reductions

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  const std::size_t ix = x.id();
  return x.tape().record(Array::scalar(s), {x}, [ix](Tape& t, std::size_t self) {
    const double g = t.grad_of(self)[0];
    auto gx = t.grad_slot(ix);
    for (auto& v : gx) v += g;
  });
}

Var mean_all(const Var& x) {
  SVQ_CHECK(x.value().size() > 0, "mean_all: empty array");
  return scale(sum(x), 1.0 / static_cast<double>(x.value().size()));
}

Var mean(const Var& x, std::size_t axis) {
  const Shape& s = x.shape();
  SVQ_CHECK(axis < s.size() && s[axis] > 0, "mean: axis " + std::to_string(axis) + " invalid for " + shape_str(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  const std::size_t len = s[axis];
  Shape out_shape;
  for (std::size_t d = 0; d < s.size(); ++d) {
    if (d != axis) out_shape.push_back(s[d]);
  }
  Array out(out_shape);
  const Array& xv = x.value();
  const double inv = 1.0 / static_cast<double>(len);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t a = 0; a < len; ++a) {
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += xv[(o * len + a) * inner + i];
    }
  }
  for (auto& v : out.data()) v *= inv;
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, outer, inner, len, inv](Tape& t, std::size_t self) {
    const auto g = t.grad_of(self);
    auto gx = t.grad_slot(ix);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t a = 0; a < len; ++a) {
        for (std::size_t i = 0; i < inner; ++i) gx[(o * len + a) * inner + i] += g[o * inner + i] * inv;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// nonlinearities

Var softmax(const Var& x) {
  const auto [rows, d] = rows_last("softmax", x.value());
  const Array& xv = x.value();
  Array out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data().data() + r * d;
    double* o = out.data().data() + r * d;
    const double mx = *std::max_element(in, in + d);
    double z = 0.0;
    for (std::size_t c = 0; c < d; ++c) z += (o[c] = std::exp(in[c] - mx));
    for (std::size_t c = 0; c < d; ++c) o[c] /= z;
  }
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, rows = rows, d = d](Tape& t, std::size_t self) {
    const auto g = t.grad_of(self);
    const auto& y = t.value(self);
    auto gx = t.grad_slot(ix);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += g[r * d + c] * y[r * d + c];
      for (std::size_t c = 0; c < d; ++c) gx[r * d + c] += y[r * d + c] * (g[r * d + c] - dot);
    }
  });
}

Var log_softmax(const Var& x) {
  const auto [rows, d] = rows_last("log_softmax", x.value());
  const Array& xv = x.value();
  Array out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data().data() + r * d;
    double* o = out.data().data() + r * d;
    const double mx = *std::max_element(in, in + d);
    double z = 0.0;
    for (std::size_t c = 0; c < d; ++c) z += std::exp(in[c] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < d; ++c) o[c] = in[c] - lse;
  }
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, rows = rows, d = d](Tape& t, std::size_t self) {
    const auto g = t.grad_of(self);
    const auto& y = t.value(self);
    auto gx = t.grad_slot(ix);
    for (std::size_t r = 0; r < rows; ++r) {
      double gs = 0.0;
      for (std::size_t c = 0; c < d; ++c) gs += g[r * d + c];
      for (std::size_t c = 0; c < d; ++c) gx[r * d + c] += g[r * d + c] - std::exp(y[r * d + c]) * gs;
    }
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const auto [rows, d] = rows_last("layer_norm", x.value());
  SVQ_CHECK(gamma.shape() == Shape{d} && beta.shape() == Shape{d},
        "layer_norm: scale/shift " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
            " do not match last axis of " + shape_str(x.shape()));
  const Array& xv = x.value();
  const Array& gv = gamma.value();
  const Array& bv = beta.value();
  Array out(xv.shape());
  std::vector<double> xhat(xv.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data().data() + r * d;
    double mu = 0.0;
    for (std::size_t c = 0; c < d; ++c) mu += in[c];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (in[c] - mu) * (in[c] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      xhat[r * d + c] = (in[c] - mu) * inv_std[r];
      out[r * d + c] = xhat[r * d + c] * gv[c] + bv[c];
    }
  }
  const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.tape().record(
      std::move(out), {x, gamma, beta},
      [ix, ig, ib, rows = rows, d = d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t,
                                                                                           std::size_t self) {
        const auto g = t.grad_of(self);
        const auto& gv = t.value(ig);
        if (t.requires_grad(ig)) {
          auto gg = t.grad_slot(ig);
          for (std::size_t i = 0; i < g.size(); ++i) gg[i % d] += g[i] * xhat[i];
        }
        if (t.requires_grad(ib)) {
          auto gb = t.grad_slot(ib);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i % d] += g[i];
        }
        if (t.requires_grad(ix)) {
          auto gx = t.grad_slot(ix);
          const double n = static_cast<double>(d);
          for (std::size_t r = 0; r < rows; ++r) {
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
              const double dxh = g[r * d + c] * gv[c];
              s1 += dxh;
              s2 += dxh * xhat[r * d + c];
            }
            for (std::size_t c = 0; c < d; ++c) {
              const double dxh = g[r * d + c] * gv[c];
              gx[r * d + c] += inv_std[r] / n * (n * dxh - s1 - xhat[r * d + c] * s2);
            }
          }
        }
      });
}

Var gelu(const Var& x) {
  return elementwise(
      x, [](double v) { return 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2)); },
      [](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
        const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
        return cdf + v * pdf;
      });
}

namespace {
double stable_sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}
}  // namespace

Var sigmoid(const Var& x) {
  return elementwise(
      x, [](double v) { return stable_sigmoid(v); }, [](double, double y) { return y * (1.0 - y); });
}

Var softplus(const Var& x) {
  return elementwise(
      x, [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); },
      [](double v, double) { return stable_sigmoid(v); });
}

Var log(const Var& x) {
  const Array& xv = x.value();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    if (!(xv[i] > 0.0)) {
      throw std::domain_error("log: non-positive input " + std::to_string(xv[i]) + " at element " +
                              std::to_string(i));
    }
  }
  return elementwise(
      x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

// ---------------------------------------------------------------------------
// geometry

Var sq_dist(const Var& a, const Var& b) {
  check_rank2("sq_dist", a);
  check_rank2("sq_dist", b);
  const Array& av = a.value();
  const Array& bv = b.value();
  SVQ_CHECK(av.cols() == bv.cols(),
        "sq_dist: row dimension mismatch " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  const std::size_t n = av.rows(), m = bv.rows(), d = av.cols();
  Array out(Shape{n, m});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = av(i, c) - bv(j, c);
        s += diff * diff;
      }
      out(i, j) = s;
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib, n, m, d](Tape& t, std::size_t self) {
    const auto g = t.grad_of(self);
    const auto& av = t.value(ia);
    const auto& bv = t.value(ib);
    const bool ga_on = t.requires_grad(ia), gb_on = t.requires_grad(ib);
    std::span<double> ga, gb;
    if (ga_on) ga = t.grad_slot(ia);
    if (gb_on) gb = t.grad_slot(ib);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        const double gij = 2.0 * g[i * m + j];
        if (gij == 0.0) continue;
        for (std::size_t c = 0; c < d; ++c) {
          const double diff = av(i, c) - bv(j, c);
          if (ga_on) ga[i * d + c] += gij * diff;
          if (gb_on) gb[j * d + c] -= gij * diff;
        }
      }
    }
  });
}

Var normalize_rows(const Var& x, double min_norm) {
  check_rank2("normalize_rows", x);
  const Array& xv = x.value();
  const std::size_t n = xv.rows(), d = xv.cols();
  Array out(xv.shape());
  std::vector<double> norms(n);
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) s += xv(r, c) * xv(r, c);
    norms[r] = std::sqrt(s);
    if (norms[r] < min_norm) {
      throw std::invalid_argument("normalize_rows: row " + std::to_string(r) + " has norm " +
                                  std::to_string(norms[r]) + " below " + std::to_string(min_norm));
    }
    for (std::size_t c = 0; c < d; ++c) out(r, c) = xv(r, c) / norms[r];
  }
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, n, d, norms = std::move(norms)](Tape& t, std::size_t self) {
    const auto g = t.grad_of(self);
    const auto& y = t.value(self);
    auto gx = t.grad_slot(ix);
    for (std::size_t r = 0; r < n; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += y(r, c) * g[r * d + c];
      for (std::size_t c = 0; c < d; ++c) gx[r * d + c] += (g[r * d + c] - y(r, c) * dot) / norms[r];
    }
  });
}

// ---------------------------------------------------------------------------
// attention

Var attention(const Var& q, const Var& k, const Var& v, std::size_t heads, const Segments& segments) {
  check_rank2("attention", q);
  check_same_shape("attention", q, k);
  check_same_shape("attention", q, v);
  const std::size_t n = q.value().rows(), d = q.value().cols();
  SVQ_CHECK(heads > 0 && d % heads == 0,
        "attention: width " + std::to_string(d) + " not divisible into " + std::to_string(heads) + " heads");
  SVQ_CHECK(segments.empty() || segments.size() == n,
        "attention: " + std::to_string(segments.size()) + " segment ids for " + std::to_string(n) + " tokens");
  const std::size_t dh = d / heads;
  const double s = 1.0 / std::sqrt(static_cast<double>(dh));
  const Array& qv = q.value();
  const Array& kv = k.value();
  const Array& vv = v.value();

  std::vector<double> probs(heads * n * n, 0.0);
  Array out(Shape{n, d});
  auto allowed = [&segments](std::size_t i, std::size_t j) { return segments.empty() || segments[i] == segments[j]; };
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    for (std::size_t i = 0; i < n; ++i) {
      double* p = &probs[(h * n + i) * n];
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j) {
        if (!allowed(i, j)) continue;
        double dot = 0.0;
        for (std::size_t c = 0; c < dh; ++c) dot += qv(i, off + c) * kv(j, off + c);
        p[j] = dot * s;
        mx = std::max(mx, p[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (!allowed(i, j)) continue;
        p[j] = std::exp(p[j] - mx);
        z += p[j];
      }
      for (std::size_t j = 0; j < n; ++j) {
        if (!allowed(i, j)) continue;
        p[j] /= z;
        for (std::size_t c = 0; c < dh; ++c) out(i, off + c) += p[j] * vv(j, off + c);
      }
    }
  }

  const std::size_t iq = q.id(), ik = k.id(), iv = v.id();
  return q.tape().record(
      std::move(out), {q, k, v},
      [iq, ik, iv, n, dh, heads, s, segments, probs = std::move(probs)](Tape& t, std::size_t self) {
        const auto g = t.grad_of(self);
        const auto& qv = t.value(iq);
        const auto& kv = t.value(ik);
        const auto& vv = t.value(iv);
        const std::size_t d = dh * heads;
        const bool gq_on = t.requires_grad(iq), gk_on = t.requires_grad(ik), gv_on = t.requires_grad(iv);
        std::span<double> gq, gk, gv;
        if (gq_on) gq = t.grad_slot(iq);
        if (gk_on) gk = t.grad_slot(ik);
        if (gv_on) gv = t.grad_slot(iv);
        std::vector<double> dp(n);
        auto allowed = [&segments](std::size_t i, std::size_t j) {
          return segments.empty() || segments[i] == segments[j];
        };
        for (std::size_t h = 0; h < heads; ++h) {
          const std::size_t off = h * dh;
          for (std::size_t i = 0; i < n; ++i) {
            const double* p = &probs[(h * n + i) * n];
            const double* gi = &g[i * d + off];
            double rowdot = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              if (!allowed(i, j)) {
                dp[j] = 0.0;
                continue;
              }
              double acc = 0.0;
              for (std::size_t c = 0; c < dh; ++c) acc += gi[c] * vv(j, off + c);
              dp[j] = acc;
              rowdot += p[j] * acc;
              if (gv_on) {
                for (std::size_t c = 0; c < dh; ++c) gv[j * d + off + c] += p[j] * gi[c];
              }
            }
            for (std::size_t j = 0; j < n; ++j) {
              if (!allowed(i, j)) continue;
              const double ds = p[j] * (dp[j] - rowdot) * s;
              if (ds == 0.0) continue;
              for (std::size_t c = 0; c < dh; ++c) {
                if (gq_on) gq[i * d + off + c] += ds * kv(j, off + c);
                if (gk_on) gk[j * d + off + c] += ds * qv(i, off + c);
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// gradient routing

Var stop_gradient(const Var& x) { return x.tape().constant(x.value()); }

Var straight_through(const Var& z, const Var& q) {
  check_same_shape("straight_through", z, q);
  if (&z.tape() != &q.tape()) throw std::invalid_argument("straight_through: vars from different tapes");
  const std::size_t iz = z.id();
  return z.tape().record(q.value(), {z}, [iz](Tape& t, std::size_t self) {
    const auto g = t.grad_of(self);
    auto gz = t.grad_slot(iz);
    for (std::size_t i = 0; i < g.size(); ++i) gz[i] += g[i];
  });
}

Var cross_entropy(const Var& logits, std::span<const std::size_t> targets) {
  check_rank2("cross_entropy", logits);
  SVQ_CHECK(!targets.empty(), "cross_entropy: no targets");
  return scale(mean_all(pick(log_softmax(logits), targets)), -1.0);
}

}  // namespace svq
