#pragma once

#include <any>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "adacap/linalg.hpp"

namespace adacap::autodiff {

using linalg::Matrix;

class Tape;

/// Handle to a node on a tape.
class Value {
 public:
  Value() = default;
  Value(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Matrix& data() const;
  const Matrix& grad() const;
  bool requires_grad() const;
  std::size_t node_id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }
  std::size_t rows() const { return data().rows(); }
  std::size_t cols() const { return data().cols(); }
  double item() const { return data().item(); }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Append-only record of matrix operations; insertion order is topological.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Value leaf(Matrix data, bool requires_grad = true) {
    nodes_.push_back(Node{std::move(data), Matrix{}, requires_grad, {}, {}});
    return {this, nodes_.size() - 1};
  }
  Value constant(Matrix data) { return leaf(std::move(data), false); }

  /// Records an op result; the node needs a gradient iff any parent does.
  Value record(Matrix data, std::vector<std::size_t> parents, BackwardFn backward) {
    bool needs = false;
    for (std::size_t p : parents) needs = needs || nodes_.at(p).requires_grad;
    nodes_.push_back(
        Node{std::move(data), Matrix{}, needs, std::move(parents), needs ? std::move(backward) : nullptr});
    return {this, nodes_.size() - 1};
  }

  const Matrix& data(std::size_t id) const { return nodes_.at(id).data; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Gradient of node `id`; an all-zero matrix of the data's shape until touched.
  const Matrix& grad(std::size_t id) {
    Node& n = nodes_.at(id);
    if (n.grad.size() != n.data.size() || n.grad.rows() != n.data.rows()) {
      n.grad = Matrix(n.data.rows(), n.data.cols());
    }
    return n.grad;
  }

  void accumulate(std::size_t id, const Matrix& g) {
    Node& n = nodes_.at(id);
    if (!n.requires_grad) return;
    if (g.rows() != n.data.rows() || g.cols() != n.data.cols()) {
      throw std::logic_error("tape: gradient shape " + g.shape() + " does not match node shape " +
                             n.data.shape());
    }
    if (n.grad.rows() != n.data.rows() || n.grad.cols() != n.data.cols()) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  /// Reverse pass from a 1x1 root; each node is visited exactly once.
  void backward(const Value& root) {
    if (root.tape() != this) throw std::invalid_argument("backward: root belongs to another tape");
    const Matrix& r = data(root.node_id());
    if (r.rows() != 1 || r.cols() != 1) {
      throw std::invalid_argument("backward: root must be 1x1, got " + r.shape());
    }
    accumulate(root.node_id(), Matrix::scalar(1.0));
    for (std::size_t i = root.node_id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.empty()) continue;
      n.backward(*this, i);
    }
  }

  bool parent_requires_grad(std::size_t self, std::size_t k) const {
    return nodes_[nodes_[self].parents[k]].requires_grad;
  }
  std::size_t parent(std::size_t self, std::size_t k) const { return nodes_[self].parents[k]; }
  std::size_t parent_count(std::size_t self) const { return nodes_[self].parents.size(); }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Matrix data;
    Matrix grad;
    bool requires_grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

inline const Matrix& Value::data() const { return tape_->data(id_); }
inline const Matrix& Value::grad() const { return tape_->grad(id_); }
inline bool Value::requires_grad() const { return tape_->requires_grad(id_); }

namespace detail {

inline Tape& same_tape(const Value& a, const Value& b, const char* op) {
  if (a.tape() != b.tape() || a.tape() == nullptr) {
    throw std::invalid_argument(std::string(op) + ": operands live on different tapes");
  }
  return *a.tape();
}

inline void shape_error(const char* op, const Matrix& a, const Matrix& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape() + " vs " +
                              b.shape());
}

template <class F>
Matrix map(const Matrix& x, F f) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t k = 0; k < x.size(); ++k) out[k] = f(x[k]);
  return out;
}

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace detail

inline Value matmul(const Value& a, const Value& b) {
  Tape& t = detail::same_tape(a, b, "matmul");
  if (a.cols() != b.rows()) detail::shape_error("matmul", a.data(), b.data());
  return t.record(linalg::matmul(a.data(), b.data()), {a.node_id(), b.node_id()},
                  [](Tape& tp, std::size_t self) {
                    const Matrix& g = tp.grad(self);
                    const std::size_t ia = tp.parent(self, 0);
                    const std::size_t ib = tp.parent(self, 1);
                    if (tp.requires_grad(ia)) tp.accumulate(ia, linalg::matmul_nt(g, tp.data(ib)));
                    if (tp.requires_grad(ib)) tp.accumulate(ib, linalg::matmul_tn(tp.data(ia), g));
                  });
}

inline Value add(const Value& a, const Value& b) {
  Tape& t = detail::same_tape(a, b, "add");
  if (a.rows() != b.rows() || a.cols() != b.cols()) detail::shape_error("add", a.data(), b.data());
  return t.record(a.data() + b.data(), {a.node_id(), b.node_id()}, [](Tape& tp, std::size_t self) {
    const Matrix g = tp.grad(self);
    tp.accumulate(tp.parent(self, 0), g);
    tp.accumulate(tp.parent(self, 1), g);
  });
}

inline Value sub(const Value& a, const Value& b) {
  Tape& t = detail::same_tape(a, b, "sub");
  if (a.rows() != b.rows() || a.cols() != b.cols()) detail::shape_error("sub", a.data(), b.data());
  return t.record(a.data() - b.data(), {a.node_id(), b.node_id()}, [](Tape& tp, std::size_t self) {
    const Matrix g = tp.grad(self);
    tp.accumulate(tp.parent(self, 0), g);
    tp.accumulate(tp.parent(self, 1), g * -1.0);
  });
}

inline Value hadamard(const Value& a, const Value& b) {
  Tape& t = detail::same_tape(a, b, "hadamard");
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    detail::shape_error("hadamard", a.data(), b.data());
  }
  Matrix out = a.data();
  for (std::size_t k = 0; k < out.size(); ++k) out[k] *= b.data()[k];
  return t.record(std::move(out), {a.node_id(), b.node_id()}, [](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    const std::size_t ia = tp.parent(self, 0);
    const std::size_t ib = tp.parent(self, 1);
    Matrix ga = g;
    Matrix gb = g;
    for (std::size_t k = 0; k < g.size(); ++k) {
      ga[k] *= tp.data(ib)[k];
      gb[k] *= tp.data(ia)[k];
    }
    tp.accumulate(ia, ga);
    tp.accumulate(ib, gb);
  });
}

inline Value scale(const Value& a, double s) {
  return a.tape()->record(a.data() * s, {a.node_id()}, [s](Tape& tp, std::size_t self) {
    tp.accumulate(tp.parent(self, 0), tp.grad(self) * s);
  });
}

/// x (n x c) + b (1 x c) broadcast over rows; the only broadcasting op.
inline Value add_bias_row(const Value& x, const Value& b) {
  Tape& t = detail::same_tape(x, b, "add_bias_row");
  if (b.rows() != 1 || b.cols() != x.cols()) detail::shape_error("add_bias_row", x.data(), b.data());
  Matrix out = x.data();
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += b.data()[j];
  }
  return t.record(std::move(out), {x.node_id(), b.node_id()}, [](Tape& tp, std::size_t self) {
    const Matrix g = tp.grad(self);
    tp.accumulate(tp.parent(self, 0), g);
    if (tp.parent_requires_grad(self, 1)) {
      Matrix gb(1, g.cols());
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) gb[j] += g(i, j);
      tp.accumulate(tp.parent(self, 1), gb);
    }
  });
}

/// Elementwise max(x, 0); subgradient at 0 is 0.
inline Value relu(const Value& x) {
  return x.tape()->record(detail::map(x.data(), [](double v) { return v > 0.0 ? v : 0.0; }),
                          {x.node_id()}, [](Tape& tp, std::size_t self) {
                            const std::size_t ix = tp.parent(self, 0);
                            Matrix g = tp.grad(self);
                            for (std::size_t k = 0; k < g.size(); ++k)
                              if (!(tp.data(ix)[k] > 0.0)) g[k] = 0.0;
                            tp.accumulate(ix, g);
                          });
}

inline Value leaky_relu(const Value& x, double slope) {
  return x.tape()->record(
      detail::map(x.data(), [slope](double v) { return v > 0.0 ? v : slope * v; }), {x.node_id()},
      [slope](Tape& tp, std::size_t self) {
        const std::size_t ix = tp.parent(self, 0);
        Matrix g = tp.grad(self);
        for (std::size_t k = 0; k < g.size(); ++k)
          if (!(tp.data(ix)[k] > 0.0)) g[k] *= slope;
        tp.accumulate(ix, g);
      });
}

/// Generalized ReLU: max(x, alpha * x) + beta with trainable 1x1 alpha, beta.
/// Where x == alpha * x the alpha branch is taken, so alpha = 0 matches relu.
inline Value grelu(const Value& x, const Value& alpha, const Value& beta) {
  Tape& t = detail::same_tape(x, alpha, "grelu");
  detail::same_tape(x, beta, "grelu");
  if (alpha.data().size() != 1 || beta.data().size() != 1) {
    detail::shape_error("grelu", alpha.data(), beta.data());
  }
  const double a = alpha.item();
  const double b = beta.item();
  Matrix out = detail::map(x.data(), [a, b](double v) { return (v > a * v ? v : a * v) + b; });
  return t.record(std::move(out), {x.node_id(), alpha.node_id(), beta.node_id()},
                  [](Tape& tp, std::size_t self) {
                    const Matrix& g = tp.grad(self);
                    const std::size_t ix = tp.parent(self, 0);
                    const Matrix& xv = tp.data(ix);
                    const double a = tp.data(tp.parent(self, 1)).item();
                    Matrix gx(g.rows(), g.cols());
                    double ga = 0.0;
                    double gb = 0.0;
                    for (std::size_t k = 0; k < g.size(); ++k) {
                      const double v = xv[k];
                      if (v > a * v) {
                        gx[k] = g[k];
                      } else {
                        gx[k] = a * g[k];
                        ga += v * g[k];
                      }
                      gb += g[k];
                    }
                    tp.accumulate(ix, gx);
                    tp.accumulate(tp.parent(self, 1), Matrix::scalar(ga));
                    tp.accumulate(tp.parent(self, 2), Matrix::scalar(gb));
                  });
}

inline Value sigmoid(const Value& x) {
  return x.tape()->record(detail::map(x.data(), detail::sigmoid), {x.node_id()},
                          [](Tape& tp, std::size_t self) {
                            const Matrix& y = tp.data(self);
                            Matrix g = tp.grad(self);
                            for (std::size_t k = 0; k < g.size(); ++k) g[k] *= y[k] * (1.0 - y[k]);
                            tp.accumulate(tp.parent(self, 0), g);
                          });
}

/// Gated linear unit on column halves [a | b] -> a * sigmoid(b).
inline Value glu(const Value& x) {
  if (x.cols() % 2 != 0) {
    throw std::invalid_argument("glu: needs an even column count, got " + x.data().shape());
  }
  const std::size_t h = x.cols() / 2;
  Matrix out(x.rows(), h);
  const Matrix& xv = x.data();
  for (std::size_t i = 0; i < xv.rows(); ++i)
    for (std::size_t j = 0; j < h; ++j) out(i, j) = xv(i, j) * detail::sigmoid(xv(i, j + h));
  return x.tape()->record(std::move(out), {x.node_id()}, [h](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    const std::size_t ix = tp.parent(self, 0);
    const Matrix& xv = tp.data(ix);
    Matrix gx(xv.rows(), xv.cols());
    for (std::size_t i = 0; i < xv.rows(); ++i) {
      for (std::size_t j = 0; j < h; ++j) {
        const double sg = detail::sigmoid(xv(i, j + h));
        gx(i, j) = g(i, j) * sg;
        gx(i, j + h) = g(i, j) * xv(i, j) * sg * (1.0 - sg);
      }
    }
    tp.accumulate(ix, gx);
  });
}

inline Value scalar_exp(const Value& x) {
  if (x.data().size() != 1) {
    throw std::invalid_argument("scalar_exp: expects 1x1, got " + x.data().shape());
  }
  return x.tape()->record(Matrix::scalar(std::exp(x.item())), {x.node_id()},
                          [](Tape& tp, std::size_t self) {
                            tp.accumulate(tp.parent(self, 0),
                                          Matrix::scalar(tp.grad(self).item() * tp.data(self).item()));
                          });
}

/// Euclidean (Frobenius) norm -> 1x1. The gradient at exactly zero is zero.
inline Value l2_norm(const Value& x) {
  const double n = linalg::frobenius(x.data());
  return x.tape()->record(Matrix::scalar(n), {x.node_id()}, [](Tape& tp, std::size_t self) {
    const double norm = tp.data(self).item();
    const std::size_t ix = tp.parent(self, 0);
    Matrix g(tp.data(ix).rows(), tp.data(ix).cols());
    if (norm > 0.0) {
      const double s = tp.grad(self).item() / norm;
      for (std::size_t k = 0; k < g.size(); ++k) g[k] = s * tp.data(ix)[k];
    }
    tp.accumulate(ix, g);
  });
}

inline Value sum(const Value& x) {
  double s = 0.0;
  for (double v : x.data().values()) s += v;
  return x.tape()->record(Matrix::scalar(s), {x.node_id()}, [](Tape& tp, std::size_t self) {
    const std::size_t ix = tp.parent(self, 0);
    tp.accumulate(ix, Matrix(tp.data(ix).rows(), tp.data(ix).cols(), tp.grad(self).item()));
  });
}

inline Value mean(const Value& x) {
  if (x.data().empty()) throw std::invalid_argument("mean: empty input");
  return scale(sum(x), 1.0 / static_cast<double>(x.data().size()));
}

/// Elementwise |x|; subgradient at 0 is 0.
inline Value abs(const Value& x) {
  return x.tape()->record(detail::map(x.data(), [](double v) { return std::abs(v); }),
                          {x.node_id()}, [](Tape& tp, std::size_t self) {
                            const std::size_t ix = tp.parent(self, 0);
                            Matrix g = tp.grad(self);
                            for (std::size_t k = 0; k < g.size(); ++k) {
                              const double v = tp.data(ix)[k];
                              g[k] *= v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
                            }
                            tp.accumulate(ix, g);
                          });
}

inline Value concat_cols(std::span<const Value> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  Tape& t = *parts.front().tape();
  const std::size_t n = parts.front().rows();
  std::size_t total = 0;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> offsets;
  for (const Value& p : parts) {
    if (p.tape() != &t) throw std::invalid_argument("concat_cols: operands live on different tapes");
    if (p.rows() != n) detail::shape_error("concat_cols", parts.front().data(), p.data());
    offsets.push_back(total);
    total += p.cols();
    ids.push_back(p.node_id());
  }
  Matrix out(n, total);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Matrix& m = parts[k].data();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m.cols(); ++j) out(i, offsets[k] + j) = m(i, j);
  }
  return t.record(std::move(out), std::move(ids), [offsets](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    for (std::size_t k = 0; k < offsets.size(); ++k) {
      const std::size_t id = tp.parent(self, k);
      if (!tp.requires_grad(id)) continue;
      const Matrix& m = tp.data(id);
      Matrix gk(m.rows(), m.cols());
      for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) gk(i, j) = g(i, offsets[k] + j);
      tp.accumulate(id, gk);
    }
  });
}

inline Value slice_cols(const Value& x, std::size_t begin, std::size_t count) {
  if (begin + count > x.cols()) {
    throw std::invalid_argument("slice_cols: columns [" + std::to_string(begin) + ", " +
                                std::to_string(begin + count) + ") out of range for " +
                                x.data().shape());
  }
  const Matrix& xv = x.data();
  Matrix out(xv.rows(), count);
  for (std::size_t i = 0; i < xv.rows(); ++i)
    for (std::size_t j = 0; j < count; ++j) out(i, j) = xv(i, begin + j);
  return x.tape()->record(std::move(out), {x.node_id()}, [begin](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    const std::size_t ix = tp.parent(self, 0);
    Matrix gx(tp.data(ix).rows(), tp.data(ix).cols());
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) gx(i, begin + j) = g(i, j);
    tp.accumulate(ix, gx);
  });
}

/// Gathers table rows: out(i, :) = table(indices[i], :).
inline Value embedding_lookup(const Value& table, std::span<const std::size_t> indices) {
  const Matrix& tv = table.data();
  Matrix out(indices.size(), tv.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= tv.rows()) {
      throw std::invalid_argument("embedding_lookup: index " + std::to_string(indices[i]) +
                                  " out of range for table " + tv.shape());
    }
    const auto src = tv.row(indices[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return table.tape()->record(std::move(out), {table.node_id()},
                              [idx = std::move(idx)](Tape& tp, std::size_t self) {
                                const Matrix& g = tp.grad(self);
                                const std::size_t it = tp.parent(self, 0);
                                Matrix gt(tp.data(it).rows(), tp.data(it).cols());
                                for (std::size_t i = 0; i < idx.size(); ++i) {
                                  auto dst = gt.row(idx[i]);
                                  const auto src = g.row(i);
                                  for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
                                }
                                tp.accumulate(it, gt);
                              });
}

// ---------------------------------------------------------------------------
// Custom operations

using MatrixRefs = std::vector<std::reference_wrapper<const Matrix>>;

struct CustomForwardResult {
  Matrix output;
  std::any context;
};

using CustomForward = std::function<CustomForwardResult(const MatrixRefs& inputs)>;
/// Returns one gradient per input, each shaped like that input.
using CustomBackward = std::function<std::vector<Matrix>(
    const MatrixRefs& inputs, const Matrix& output, const Matrix& upstream, const std::any& context)>;

/// A user-defined op with its own adjoint; participates in backward like built-ins.
class CustomOp {
 public:
  CustomOp(std::string name, CustomForward forward, CustomBackward backward)
      : impl_(std::make_shared<Impl>(Impl{std::move(name), std::move(forward), std::move(backward)})) {}

  const std::string& name() const noexcept { return impl_->name; }

  Value operator()(std::span<const Value> inputs) const {
    if (inputs.empty()) throw std::invalid_argument("custom op '" + name() + "': no inputs");
    Tape& t = *inputs.front().tape();
    MatrixRefs refs;
    std::vector<std::size_t> ids;
    for (const Value& v : inputs) {
      if (v.tape() != &t) {
        throw std::invalid_argument("custom op '" + name() + "': operands live on different tapes");
      }
      refs.emplace_back(v.data());
      ids.push_back(v.node_id());
    }
    CustomForwardResult res = impl_->forward(refs);
    auto ctx = std::make_shared<std::any>(std::move(res.context));
    return t.record(std::move(res.output), std::move(ids),
                    [impl = impl_, ctx](Tape& tp, std::size_t self) {
                      MatrixRefs in;
                      for (std::size_t i = 0; i < tp.parent_count(self); ++i) {
                        in.emplace_back(tp.data(tp.parent(self, i)));
                      }
                      std::vector<Matrix> grads = impl->backward(in, tp.data(self), tp.grad(self), *ctx);
                      if (grads.size() != in.size()) {
                        throw std::logic_error("custom op '" + impl->name + "': backward returned " +
                                               std::to_string(grads.size()) + " gradients for " +
                                               std::to_string(in.size()) + " inputs");
                      }
                      for (std::size_t i = 0; i < grads.size(); ++i) {
                        const Matrix& want = in[i].get();
                        if (grads[i].rows() != want.rows() || grads[i].cols() != want.cols()) {
                          throw std::logic_error("custom op '" + impl->name + "': gradient " +
                                                 std::to_string(i) + " has shape " +
                                                 grads[i].shape() + ", input is " + want.shape());
                        }
                        tp.accumulate(tp.parent(self, i), grads[i]);
                      }
                    });
  }

  Value operator()(std::initializer_list<Value> inputs) const {
    return (*this)(std::span<const Value>(inputs.begin(), inputs.size()));
  }

 private:
  struct Impl {
    std::string name;
    CustomForward forward;
    CustomBackward backward;
  };
  std::shared_ptr<const Impl> impl_;
};

inline CustomOp register_custom(std::string name, CustomForward forward, CustomBackward backward) {
  return CustomOp(std::move(name), std::move(forward), std::move(backward));
}

// ---------------------------------------------------------------------------
// Gradient checking

using ScalarFunction = std::function<Value(Tape&, std::span<const Value>)>;

struct GradientCheck {
  double max_relative_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_entry = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares reverse-mode gradients with central differences (step h).
/// Relative error uses the denominator max(|analytic|, |numeric|, 1e-8).
inline GradientCheck check_gradients(const ScalarFunction& f, const std::vector<Matrix>& inputs,
                                     double h = 1e-5) {
  std::vector<Matrix> analytic;
  {
    Tape tape;
    std::vector<Value> leaves;
    for (const Matrix& m : inputs) leaves.push_back(tape.leaf(m));
    Value out = f(tape, leaves);
    tape.backward(out);
    for (const Value& v : leaves) analytic.push_back(v.grad());
  }
  auto evaluate = [&](const std::vector<Matrix>& xs) {
    Tape tape;
    std::vector<Value> leaves;
    for (const Matrix& m : xs) leaves.push_back(tape.constant(m));
    return f(tape, leaves).item();
  };
  GradientCheck report;
  std::vector<Matrix> probe = inputs;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    for (std::size_t k = 0; k < probe[i].size(); ++k) {
      const double keep = probe[i][k];
      probe[i][k] = keep + h;
      const double fp = evaluate(probe);
      probe[i][k] = keep - h;
      const double fm = evaluate(probe);
      probe[i][k] = keep;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[i][k];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double err = std::abs(a - numeric) / denom;
      if (err > report.max_relative_error || std::isnan(err)) {
        report = {std::isnan(err) ? std::numeric_limits<double>::infinity() : err, i, k, a, numeric};
      }
    }
  }
  return report;
}

}  // namespace adacap::autodiff
