#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "wmtl/errors.hpp"
#include "wmtl/rng.hpp"

namespace wmtl {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_product(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_to_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {

struct TensorData {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
};

}  // namespace detail

/// Dense n-dimensional array of f64, row-major, participating in reverse-mode
/// differentiation via a Tape. Tensor is a shared handle: copies alias the
/// same buffer, which lets tape closures and parameter sets hold the same
/// storage the optimizer updates in place. Scalars use shape [1].
class Tensor {
 public:
  Tensor() : data_(std::make_shared<detail::TensorData>()) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Tensor t;
    t.data_->values.assign(shape_product(shape), 0.0);
    t.data_->shape = std::move(shape);
    t.data_->requires_grad = requires_grad;
    return t;
  }

  static Tensor full(Shape shape, double value) {
    Tensor t = zeros(std::move(shape));
    for (double& v : t.data_->values) v = value;
    return t;
  }

  static Tensor from_values(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (shape_product(shape) != values.size()) {
      throw DimensionError("tensor shape " + shape_to_string(shape) + " does not match " +
                           std::to_string(values.size()) + " values");
    }
    Tensor t;
    t.data_->shape = std::move(shape);
    t.data_->values = std::move(values);
    t.data_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(double v) { return from_values({1}, {v}); }

  const Shape& shape() const { return data_->shape; }
  std::size_t rank() const { return data_->shape.size(); }
  std::size_t size() const { return data_->values.size(); }
  std::size_t dim(std::size_t i) const { return data_->shape.at(i); }

  // Accessors follow pointer semantics: a const handle still exposes the
  // shared, mutable payload, which is what lets tape closures and the
  // optimizer write through captured copies.
  std::vector<double>& values() const { return data_->values; }

  double item() const {
    if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_to_string(shape()));
    return data_->values[0];
  }

  bool requires_grad() const { return data_->requires_grad; }
  void set_requires_grad(bool b) const { data_->requires_grad = b; }

  bool has_grad() const { return !data_->grad.empty(); }

  /// Gradient buffer, allocated (zero-filled) on first access.
  std::vector<double>& grad() const {
    if (data_->grad.empty()) data_->grad.assign(data_->values.size(), 0.0);
    return data_->grad;
  }

  void zero_grad() const {
    if (!data_->grad.empty()) data_->grad.assign(data_->values.size(), 0.0);
  }

  /// Independent copy of values (new buffer, no grad, same shape).
  Tensor clone_values() const {
    Tensor t;
    t.data_->shape = data_->shape;
    t.data_->values = data_->values;
    t.data_->requires_grad = data_->requires_grad;
    return t;
  }

  bool same_buffer(const Tensor& other) const { return data_ == other.data_; }

  std::shared_ptr<detail::TensorData> data() const { return data_; }

 private:
  std::shared_ptr<detail::TensorData> data_;
};

/// Records primitive ops in execution order; `backward` replays them once in
/// reverse, accumulating (summing) gradients through shared subexpressions.
/// Recording order is the topological order by construction. Intermediate
/// gradients are cleared at the start of every backward call so a tape may be
/// walked multiple times for different losses; leaf (parameter) gradients
/// accumulate across calls and are cleared by the caller.
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }
  void set_recording(bool b) { recording_ = b; }

  void record(const Tensor& output, std::function<void()> backward_fn) {
    if (recording_) records_.push_back({output.data(), std::move(backward_fn)});
  }

  std::size_t num_records() const { return records_.size(); }

  void backward(const Tensor& loss) {
    if (loss.size() != 1) {
      throw DimensionError("backward() requires a scalar loss, got " + shape_to_string(loss.shape()));
    }
    for (auto& r : records_) {
      if (!r.output->grad.empty()) r.output->grad.assign(r.output->values.size(), 0.0);
    }
    loss.data()->grad.assign(1, 1.0);
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) it->fn();
  }

  void clear() { records_.clear(); }

 private:
  struct Record {
    std::shared_ptr<detail::TensorData> output;
    std::function<void()> fn;
  };
  std::vector<Record> records_;
  bool recording_ = true;
};

namespace detail {

inline bool wants_grad(const Tape& tape, const Tensor& t) {
  return tape.recording() && t.requires_grad();
}

inline void accumulate(const Tensor& t, std::span<const double> delta) {
  auto& g = t.grad();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitive ops. Each returns a fresh tensor and, when the tape is recording
// and any input requires a gradient, records a closure implementing its
// backward rule.
// ---------------------------------------------------------------------------

inline Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_to_string(a.shape()) + " x " +
                         shape_to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::zeros({m, n});
  {
    const double* A = a.values().data();
    const double* B = b.values().data();
    double* Y = out.values().data();
    for (std::size_t i = 0; i < m; ++i) {
      double* yrow = Y + i * n;
      for (std::size_t l = 0; l < k; ++l) {
        const double av = A[i * k + l];
        const double* brow = B + l * n;
        for (std::size_t j = 0; j < n; ++j) yrow[j] += av * brow[j];
      }
    }
  }
  const bool needs = detail::wants_grad(tape, a) || detail::wants_grad(tape, b);
  out.set_requires_grad(needs);
  if (needs) {
    tape.record(out, [a, b, out, m, k, n]() mutable {
      if (!out.has_grad()) return;
      const double* dY = out.grad().data();
      if (a.requires_grad()) {
        double* dA = a.grad().data();
        const double* B = b.values().data();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t l = 0; l < k; ++l) {
            double acc = 0.0;
            const double* dyrow = dY + i * n;
            const double* brow = B + l * n;
            for (std::size_t j = 0; j < n; ++j) acc += dyrow[j] * brow[j];
            dA[i * k + l] += acc;
          }
        }
      }
      if (b.requires_grad()) {
        double* dB = b.grad().data();
        const double* A = a.values().data();
        for (std::size_t l = 0; l < k; ++l) {
          for (std::size_t i = 0; i < m; ++i) {
            const double av = A[i * k + l];
            const double* dyrow = dY + i * n;
            double* dbrow = dB + l * n;
            for (std::size_t j = 0; j < n; ++j) dbrow[j] += av * dyrow[j];
          }
        }
      }
    });
  }
  return out;
}

/// x[B,k] * W[k,n] + b[n] broadcast over rows; the dense-layer workhorse.
inline Tensor linear(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& bias) {
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(0)) {
    throw DimensionError("linear: incompatible shapes " + shape_to_string(x.shape()) + " x " +
                         shape_to_string(w.shape()));
  }
  if (bias.rank() != 1 || bias.dim(0) != w.dim(1)) {
    throw DimensionError("linear: bias shape " + shape_to_string(bias.shape()) +
                         " does not match output width " + std::to_string(w.dim(1)));
  }
  const std::size_t m = x.dim(0), k = x.dim(1), n = w.dim(1);
  Tensor out = Tensor::zeros({m, n});
  {
    const double* X = x.values().data();
    const double* W = w.values().data();
    const double* bv = bias.values().data();
    double* Y = out.values().data();
    for (std::size_t i = 0; i < m; ++i) {
      double* yrow = Y + i * n;
      for (std::size_t j = 0; j < n; ++j) yrow[j] = bv[j];
      for (std::size_t l = 0; l < k; ++l) {
        const double xv = X[i * k + l];
        const double* wrow = W + l * n;
        for (std::size_t j = 0; j < n; ++j) yrow[j] += xv * wrow[j];
      }
    }
  }
  const bool needs =
      detail::wants_grad(tape, x) || detail::wants_grad(tape, w) || detail::wants_grad(tape, bias);
  out.set_requires_grad(needs);
  if (needs) {
    tape.record(out, [x, w, bias, out, m, k, n]() mutable {
      if (!out.has_grad()) return;
      const double* dY = out.grad().data();
      if (x.requires_grad()) {
        double* dX = x.grad().data();
        const double* W = w.values().data();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t l = 0; l < k; ++l) {
            double acc = 0.0;
            const double* dyrow = dY + i * n;
            const double* wrow = W + l * n;
            for (std::size_t j = 0; j < n; ++j) acc += dyrow[j] * wrow[j];
            dX[i * k + l] += acc;
          }
        }
      }
      if (w.requires_grad()) {
        double* dW = w.grad().data();
        const double* X = x.values().data();
        for (std::size_t l = 0; l < k; ++l) {
          for (std::size_t i = 0; i < m; ++i) {
            const double xv = X[i * k + l];
            const double* dyrow = dY + i * n;
            double* dwrow = dW + l * n;
            for (std::size_t j = 0; j < n; ++j) dwrow[j] += xv * dyrow[j];
          }
        }
      }
      if (bias.requires_grad()) {
        double* dB = bias.grad().data();
        for (std::size_t i = 0; i < m; ++i) {
          const double* dyrow = dY + i * n;
          for (std::size_t j = 0; j < n; ++j) dB[j] += dyrow[j];
        }
      }
    });
  }
  return out;
}

namespace detail {

// Shared machinery for binary elementwise ops: equal shapes, or one side a
// scalar ([1]) broadcast over the other. Returns the broadcast layout.
enum class Broadcast { Equal, LeftScalar, RightScalar };

inline Broadcast binary_layout(const char* name, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Broadcast::Equal;
  if (a.size() == 1) return Broadcast::LeftScalar;
  if (b.size() == 1) return Broadcast::RightScalar;
  throw DimensionError(std::string(name) + ": incompatible shapes " + shape_to_string(a.shape()) +
                       " and " + shape_to_string(b.shape()));
}

}  // namespace detail

inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  const auto layout = detail::binary_layout("add", a, b);
  const Tensor& big = (layout == detail::Broadcast::LeftScalar) ? b : a;
  Tensor out = Tensor::zeros(big.shape());
  const std::size_t n = out.size();
  {
    const double* av = a.values().data();
    const double* bv = b.values().data();
    double* y = out.values().data();
    switch (layout) {
      case detail::Broadcast::Equal:
        for (std::size_t i = 0; i < n; ++i) y[i] = av[i] + bv[i];
        break;
      case detail::Broadcast::LeftScalar:
        for (std::size_t i = 0; i < n; ++i) y[i] = av[0] + bv[i];
        break;
      case detail::Broadcast::RightScalar:
        for (std::size_t i = 0; i < n; ++i) y[i] = av[i] + bv[0];
        break;
    }
  }
  const bool needs = detail::wants_grad(tape, a) || detail::wants_grad(tape, b);
  out.set_requires_grad(needs);
  if (needs) {
    tape.record(out, [a, b, out, layout, n]() mutable {
      if (!out.has_grad()) return;
      const double* dy = out.grad().data();
      if (a.requires_grad()) {
        double* da = a.grad().data();
        if (layout == detail::Broadcast::LeftScalar) {
          for (std::size_t i = 0; i < n; ++i) da[0] += dy[i];
        } else {
          for (std::size_t i = 0; i < n; ++i) da[i] += dy[i];
        }
      }
      if (b.requires_grad()) {
        double* db = b.grad().data();
        if (layout == detail::Broadcast::RightScalar) {
          for (std::size_t i = 0; i < n; ++i) db[0] += dy[i];
        } else {
          for (std::size_t i = 0; i < n; ++i) db[i] += dy[i];
        }
      }
    });
  }
  return out;
}

inline Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  const auto layout = detail::binary_layout("mul", a, b);
  const Tensor& big = (layout == detail::Broadcast::LeftScalar) ? b : a;
  Tensor out = Tensor::zeros(big.shape());
  const std::size_t n = out.size();
  {
    const double* av = a.values().data();
    const double* bv = b.values().data();
    double* y = out.values().data();
    switch (layout) {
      case detail::Broadcast::Equal:
        for (std::size_t i = 0; i < n; ++i) y[i] = av[i] * bv[i];
        break;
      case detail::Broadcast::LeftScalar:
        for (std::size_t i = 0; i < n; ++i) y[i] = av[0] * bv[i];
        break;
      case detail::Broadcast::RightScalar:
        for (std::size_t i = 0; i < n; ++i) y[i] = av[i] * bv[0];
        break;
    }
  }
  const bool needs = detail::wants_grad(tape, a) || detail::wants_grad(tape, b);
  out.set_requires_grad(needs);
  if (needs) {
    tape.record(out, [a, b, out, layout, n]() mutable {
      if (!out.has_grad()) return;
      const double* dy = out.grad().data();
      const double* av = a.values().data();
      const double* bv = b.values().data();
      if (a.requires_grad()) {
        double* da = a.grad().data();
        switch (layout) {
          case detail::Broadcast::Equal:
            for (std::size_t i = 0; i < n; ++i) da[i] += dy[i] * bv[i];
            break;
          case detail::Broadcast::LeftScalar:
            for (std::size_t i = 0; i < n; ++i) da[0] += dy[i] * bv[i];
            break;
          case detail::Broadcast::RightScalar:
            for (std::size_t i = 0; i < n; ++i) da[i] += dy[i] * bv[0];
            break;
        }
      }
      if (b.requires_grad()) {
        double* db = b.grad().data();
        switch (layout) {
          case detail::Broadcast::Equal:
            for (std::size_t i = 0; i < n; ++i) db[i] += dy[i] * av[i];
            break;
          case detail::Broadcast::LeftScalar:
            for (std::size_t i = 0; i < n; ++i) db[i] += dy[i] * av[0];
            break;
          case detail::Broadcast::RightScalar:
            for (std::size_t i = 0; i < n; ++i) db[0] += dy[i] * av[i];
            break;
        }
      }
    });
  }
  return out;
}

namespace detail {

template <typename Fwd, typename Bwd>
Tensor unary_op(Tape& tape, const Tensor& x, Fwd fwd, Bwd dfdx_from_xy) {
  Tensor out = Tensor::zeros(x.shape());
  const std::size_t n = x.size();
  const double* xv = x.values().data();
  double* y = out.values().data();
  for (std::size_t i = 0; i < n; ++i) y[i] = fwd(xv[i]);
  const bool needs = wants_grad(tape, x);
  out.set_requires_grad(needs);
  if (needs) {
    tape.record(out, [x, out, dfdx_from_xy, n]() mutable {
      if (!out.has_grad()) return;
      const double* dy = out.grad().data();
      const double* xv = x.values().data();
      const double* yv = out.values().data();
      double* dx = x.grad().data();
      for (std::size_t i = 0; i < n; ++i) dx[i] += dy[i] * dfdx_from_xy(xv[i], yv[i]);
    });
  }
  return out;
}

}  // namespace detail

inline Tensor tanh(Tape& tape, const Tensor& x) {
  return detail::unary_op(
      tape, x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

inline Tensor elu(Tape& tape, const Tensor& x) {
  return detail::unary_op(
      tape, x, [](double v) { return v > 0.0 ? v : std::expm1(v); },
      [](double v, double y) { return v > 0.0 ? 1.0 : y + 1.0; });
}

inline Tensor exp(Tape& tape, const Tensor& x) {
  return detail::unary_op(
      tape, x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Tensor softplus(Tape& tape, const Tensor& x) {
  return detail::unary_op(
      tape, x,
      [](double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); },
      [](double v, double) { return 1.0 / (1.0 + std::exp(-v)); });
}

inline Tensor negate(Tape& tape, const Tensor& x) {
  return detail::unary_op(
      tape, x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

inline Tensor scale(Tape& tape, const Tensor& x, double k) {
  return detail::unary_op(
      tape, x, [k](double v) { return k * v; }, [k](double, double) { return k; });
}

/// max(x, c) elementwise; subgradient 0 at the kink.
inline Tensor max_const(Tape& tape, const Tensor& x, double c) {
  return detail::unary_op(
      tape, x, [c](double v) { return v > c ? v : c; },
      [c](double v, double) { return v > c ? 1.0 : 0.0; });
}

inline Tensor sum(Tape& tape, const Tensor& x) {
  Tensor out = Tensor::zeros({1});
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  out.values()[0] = acc;
  const bool needs = detail::wants_grad(tape, x);
  out.set_requires_grad(needs);
  if (needs) {
    tape.record(out, [x, out]() mutable {
      if (!out.has_grad()) return;
      const double dy = out.grad()[0];
      double* dx = x.grad().data();
      for (std::size_t i = 0; i < x.size(); ++i) dx[i] += dy;
    });
  }
  return out;
}

inline Tensor mean(Tape& tape, const Tensor& x) {
  Tensor s = sum(tape, x);
  return scale(tape, s, 1.0 / static_cast<double>(x.size()));
}

/// Row sums of a rank-2 tensor: [B,n] -> [B].
inline Tensor sum_rows(Tape& tape, const Tensor& x) {
  if (x.rank() != 2) throw DimensionError("sum_rows: expected rank-2, got " + shape_to_string(x.shape()));
  const std::size_t m = x.dim(0), n = x.dim(1);
  Tensor out = Tensor::zeros({m});
  {
    const double* xv = x.values().data();
    double* y = out.values().data();
    for (std::size_t i = 0; i < m; ++i) {
      double acc = 0.0;
      const double* row = xv + i * n;
      for (std::size_t j = 0; j < n; ++j) acc += row[j];
      y[i] = acc;
    }
  }
  const bool needs = detail::wants_grad(tape, x);
  out.set_requires_grad(needs);
  if (needs) {
    tape.record(out, [x, out, m, n]() mutable {
      if (!out.has_grad()) return;
      const double* dy = out.grad().data();
      double* dx = x.grad().data();
      for (std::size_t i = 0; i < m; ++i) {
        double* row = dx + i * n;
        for (std::size_t j = 0; j < n; ++j) row[j] += dy[i];
      }
    });
  }
  return out;
}

/// Column-wise concatenation of rank-2 tensors with a common row count.
inline Tensor concat_cols(Tape& tape, std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = parts[0].dim(0);
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != 2 || p.dim(0) != m) {
      throw DimensionError("concat_cols: inconsistent shape " + shape_to_string(p.shape()));
    }
    total += p.dim(1);
  }
  Tensor out = Tensor::zeros({m, total});
  {
    double* y = out.values().data();
    std::size_t col = 0;
    for (const Tensor& p : parts) {
      const std::size_t w = p.dim(1);
      const double* pv = p.values().data();
      for (std::size_t i = 0; i < m; ++i) {
        double* dst = y + i * total + col;
        const double* src = pv + i * w;
        for (std::size_t j = 0; j < w; ++j) dst[j] = src[j];
      }
      col += w;
    }
  }
  bool needs = false;
  for (const Tensor& p : parts) needs = needs || detail::wants_grad(tape, p);
  out.set_requires_grad(needs);
  if (needs) {
    std::vector<Tensor> held(parts.begin(), parts.end());
    tape.record(out, [held, out, m, total]() mutable {
      if (!out.has_grad()) return;
      const double* dy = out.grad().data();
      std::size_t col = 0;
      for (Tensor& p : held) {
        const std::size_t w = p.dim(1);
        if (p.requires_grad()) {
          double* dp = p.grad().data();
          for (std::size_t i = 0; i < m; ++i) {
            const double* src = dy + i * total + col;
            double* dst = dp + i * w;
            for (std::size_t j = 0; j < w; ++j) dst[j] += src[j];
          }
        }
        col += w;
      }
    });
  }
  return out;
}

inline Tensor concat_cols(Tape& tape, std::initializer_list<Tensor> parts) {
  std::vector<Tensor> v(parts);
  return concat_cols(tape, std::span<const Tensor>(v));
}

/// Column slice [start, start+len) of a rank-2 tensor.
inline Tensor slice_cols(Tape& tape, const Tensor& x, std::size_t start, std::size_t len) {
  if (x.rank() != 2) throw DimensionError("slice_cols: expected rank-2, got " + shape_to_string(x.shape()));
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (start + len > n) {
    throw DimensionError("slice_cols: range [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") exceeds width " + std::to_string(n));
  }
  Tensor out = Tensor::zeros({m, len});
  {
    const double* xv = x.values().data();
    double* y = out.values().data();
    for (std::size_t i = 0; i < m; ++i) {
      const double* src = xv + i * n + start;
      double* dst = y + i * len;
      for (std::size_t j = 0; j < len; ++j) dst[j] = src[j];
    }
  }
  const bool needs = detail::wants_grad(tape, x);
  out.set_requires_grad(needs);
  if (needs) {
    tape.record(out, [x, out, m, n, start, len]() mutable {
      if (!out.has_grad()) return;
      const double* dy = out.grad().data();
      double* dx = x.grad().data();
      for (std::size_t i = 0; i < m; ++i) {
        double* dst = dx + i * n + start;
        const double* src = dy + i * len;
        for (std::size_t j = 0; j < len; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

/// Same values under a new shape (sizes must match); gradient passes through.
inline Tensor reshape(Tape& tape, const Tensor& x, Shape shape) {
  if (shape_product(shape) != x.size()) {
    throw DimensionError("reshape: " + shape_to_string(x.shape()) + " to " + shape_to_string(shape) +
                         " changes element count");
  }
  Tensor out = Tensor::from_values(std::move(shape), x.values());
  const bool needs = detail::wants_grad(tape, x);
  out.set_requires_grad(needs);
  if (needs) {
    tape.record(out, [x, out]() mutable {
      if (!out.has_grad()) return;
      detail::accumulate(x, out.grad());
    });
  }
  return out;
}

/// Copy of x detached from the tape: no gradient flows through.
inline Tensor stop_gradient(const Tensor& x) {
  Tensor out = x.clone_values();
  out.set_requires_grad(false);
  return out;
}

/// Reparameterized Gaussian draw: mean + stddev * eps with eps ~ N(0, I).
/// eps is recorded so replay with the same stream is bit-identical; the
/// backward rule flows into both mean and stddev. stddev must be >= 0
/// elementwise (a zero entry degenerates to the mean exactly).
inline Tensor gaussian_sample(Tape& tape, const Tensor& mean, const Tensor& stddev, RngStream& rng) {
  if (mean.shape() != stddev.shape()) {
    throw DimensionError("gaussian_sample: mean " + shape_to_string(mean.shape()) + " vs stddev " +
                         shape_to_string(stddev.shape()));
  }
  const std::size_t n = mean.size();
  const double* sv = stddev.values().data();
  for (std::size_t i = 0; i < n; ++i) {
    if (sv[i] < 0.0) throw DomainError("gaussian_sample: negative stddev " + std::to_string(sv[i]));
  }
  std::vector<double> eps(n);
  for (std::size_t i = 0; i < n; ++i) eps[i] = rng.next_gaussian();
  Tensor out = Tensor::zeros(mean.shape());
  {
    const double* mv = mean.values().data();
    double* y = out.values().data();
    for (std::size_t i = 0; i < n; ++i) y[i] = mv[i] + sv[i] * eps[i];
  }
  const bool needs = detail::wants_grad(tape, mean) || detail::wants_grad(tape, stddev);
  out.set_requires_grad(needs);
  if (needs) {
    tape.record(out, [mean, stddev, out, eps = std::move(eps), n]() mutable {
      if (!out.has_grad()) return;
      const double* dy = out.grad().data();
      if (mean.requires_grad()) {
        double* dm = mean.grad().data();
        for (std::size_t i = 0; i < n; ++i) dm[i] += dy[i];
      }
      if (stddev.requires_grad()) {
        double* ds = stddev.grad().data();
        for (std::size_t i = 0; i < n; ++i) ds[i] += dy[i] * eps[i];
      }
    });
  }
  return out;
}

/// KL(N(mean_a, std_a) || N(mean_b, std_b)) for diagonal Gaussians.
/// Rank-1 inputs reduce over all dimensions to a scalar; rank-2 [B,z] inputs
/// reduce per row to [B]. Stddevs must be strictly positive.
inline Tensor gaussian_kl(Tape& tape, const Tensor& mean_a, const Tensor& std_a,
                          const Tensor& mean_b, const Tensor& std_b) {
  if (mean_a.shape() != std_a.shape() || mean_a.shape() != mean_b.shape() ||
      mean_a.shape() != std_b.shape()) {
    throw DimensionError("gaussian_kl: mismatched shapes " + shape_to_string(mean_a.shape()) + ", " +
                         shape_to_string(std_a.shape()) + ", " + shape_to_string(mean_b.shape()) +
                         ", " + shape_to_string(std_b.shape()));
  }
  const std::size_t rows = mean_a.rank() == 2 ? mean_a.dim(0) : 1;
  const std::size_t cols = mean_a.rank() == 2 ? mean_a.dim(1) : mean_a.size();
  for (double v : std_a.values()) {
    if (v <= 0.0) throw DomainError("gaussian_kl: nonpositive std_a " + std::to_string(v));
  }
  for (double v : std_b.values()) {
    if (v <= 0.0) throw DomainError("gaussian_kl: nonpositive std_b " + std::to_string(v));
  }
  Tensor out = Tensor::zeros(mean_a.rank() == 2 ? Shape{rows} : Shape{1});
  {
    const double* ma = mean_a.values().data();
    const double* sa = std_a.values().data();
    const double* mb = mean_b.values().data();
    const double* sb = std_b.values().data();
    double* y = out.values().data();
    for (std::size_t r = 0; r < rows; ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t i = r * cols + c;
        const double dm = ma[i] - mb[i];
        acc += std::log(sb[i] / sa[i]) + (sa[i] * sa[i] + dm * dm) / (2.0 * sb[i] * sb[i]) - 0.5;
      }
      y[r] = acc;
    }
  }
  const bool needs = detail::wants_grad(tape, mean_a) || detail::wants_grad(tape, std_a) ||
                     detail::wants_grad(tape, mean_b) || detail::wants_grad(tape, std_b);
  out.set_requires_grad(needs);
  if (needs) {
    tape.record(out, [mean_a, std_a, mean_b, std_b, out, rows, cols]() mutable {
      if (!out.has_grad()) return;
      const double* dy = out.grad().data();
      const double* ma = mean_a.values().data();
      const double* sa = std_a.values().data();
      const double* mb = mean_b.values().data();
      const double* sb = std_b.values().data();
      for (std::size_t r = 0; r < rows; ++r) {
        const double g = dy[r];
        if (g == 0.0) continue;
        for (std::size_t c = 0; c < cols; ++c) {
          const std::size_t i = r * cols + c;
          const double dm = ma[i] - mb[i];
          const double sb2 = sb[i] * sb[i];
          if (mean_a.requires_grad()) mean_a.grad()[i] += g * dm / sb2;
          if (mean_b.requires_grad()) mean_b.grad()[i] += g * -dm / sb2;
          if (std_a.requires_grad()) std_a.grad()[i] += g * (-1.0 / sa[i] + sa[i] / sb2);
          if (std_b.requires_grad()) {
            std_b.grad()[i] += g * (1.0 / sb[i] - (sa[i] * sa[i] + dm * dm) / (sb2 * sb[i]));
          }
        }
      }
    });
  }
  return out;
}

}  // namespace wmtl
