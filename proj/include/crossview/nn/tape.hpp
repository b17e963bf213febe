#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "crossview/nn/tensor.hpp"

namespace crossview::nn {

// Reverse-mode tape. Ops evaluate eagerly and, when the tape is recording,
// push a backward closure. Values are indices into the node list.
//
// A tape built with recording=false evaluates the same graph without storing
// closures; actors use that path, the learner records.
template <class T>
class Tape {
 public:
  struct Value {
    int i = -1;
    bool valid() const { return i >= 0; }
  };

  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  int size() const { return static_cast<int>(nodes_.size()); }

  // ---- node creation ----

  // Tracked input; grad is accumulated if the tape records.
  Value leaf(Tensor<T> v) { return push_node(std::move(v), recording_, "leaf", {}); }

  // Tracked input referencing external storage (no copy). The referenced
  // tensor must outlive the tape.
  Value param(const Tensor<T>* p) {
    CV_REQUIRE(p != nullptr, "param: null tensor");
    Node n;
    n.external = p;
    n.needs_grad = recording_;
    n.op = "param";
    nodes_.push_back(std::move(n));
    return Value{size() - 1};
  }

  // External reference without gradient tracking (frozen parameters).
  Value param_frozen(const Tensor<T>* p) {
    CV_REQUIRE(p != nullptr, "param_frozen: null tensor");
    Node n;
    n.external = p;
    n.needs_grad = false;
    n.op = "param";
    nodes_.push_back(std::move(n));
    return Value{size() - 1};
  }

  // Untracked input (observations, targets, recorded constants).
  Value constant(Tensor<T> v) { return push_node(std::move(v), false, "const", {}); }

  const Tensor<T>& val(Value v) const {
    const Node& n = node(v);
    return n.external ? *n.external : n.value;
  }

  // Empty tensor means "gradient is zero / never touched".
  const Tensor<T>& grad(Value v) const { return node(v).grad; }

  // ---- ops ----

  Value matmul(Value a, Value b) {
    const Tensor<T>& A = val(a);
    const Tensor<T>& B = val(b);
    CV_REQUIRE(A.rank() == 2 && B.rank() == 2 && A.cols() == B.rows(),
               "matmul: incompatible shapes " + A.shape_str() + " @ " + B.shape_str());
    Tensor<T> C({A.rows(), B.cols()});
    gemm(A, B, C);
    return push_op(std::move(C), {a, b}, "matmul", [a, b](Tape& t, int self) {
      const Tensor<T>& g = t.nodes_[self].grad;
      const Tensor<T>& A2 = t.val(a);
      const Tensor<T>& B2 = t.val(b);
      if (t.wants(a)) {
        Tensor<T>& da = t.grad_buf(a);
        // dA = g B^T
        for (int i = 0; i < A2.rows(); ++i)
          for (int p = 0; p < A2.cols(); ++p) {
            T acc = 0;
            const T* gr = g.data() + static_cast<size_t>(i) * g.cols();
            const T* br = B2.data() + static_cast<size_t>(p) * B2.cols();
            for (int j = 0; j < g.cols(); ++j) acc += gr[j] * br[j];
            da.at(i, p) += acc;
          }
      }
      if (t.wants(b)) {
        Tensor<T>& db = t.grad_buf(b);
        // dB = A^T g
        for (int i = 0; i < A2.rows(); ++i) {
          const T* gr = g.data() + static_cast<size_t>(i) * g.cols();
          for (int p = 0; p < A2.cols(); ++p) {
            T aip = A2.at(i, p);
            if (aip == T(0)) continue;
            T* dbr = db.data() + static_cast<size_t>(p) * db.cols();
            for (int j = 0; j < g.cols(); ++j) dbr[j] += aip * gr[j];
          }
        }
      }
    });
  }

  // Elementwise add; b may be a [1 x n] row broadcast over a's rows.
  Value add(Value a, Value b) {
    const Tensor<T>& A = val(a);
    const Tensor<T>& B = val(b);
    bool bcast = !A.same_shape(B);
    CV_REQUIRE(!bcast || (A.rank() == 2 && B.rank() == 2 && B.rows() == 1 &&
                          B.cols() == A.cols()),
               "add: incompatible shapes " + A.shape_str() + " + " + B.shape_str());
    Tensor<T> C = A;
    if (bcast) {
      for (int i = 0; i < A.rows(); ++i)
        for (int j = 0; j < A.cols(); ++j) C.at(i, j) += B.at(0, j);
    } else {
      for (int i = 0; i < A.numel(); ++i) C[i] += B[i];
    }
    return push_op(std::move(C), {a, b}, "add", [a, b, bcast](Tape& t, int self) {
      const Tensor<T>& g = t.nodes_[self].grad;
      if (t.wants(a)) {
        Tensor<T>& da = t.grad_buf(a);
        for (int i = 0; i < g.numel(); ++i) da[i] += g[i];
      }
      if (t.wants(b)) {
        Tensor<T>& db = t.grad_buf(b);
        if (bcast) {
          for (int i = 0; i < g.rows(); ++i)
            for (int j = 0; j < g.cols(); ++j) db.at(0, j) += g.at(i, j);
        } else {
          for (int i = 0; i < g.numel(); ++i) db[i] += g[i];
        }
      }
    });
  }

  Value sub(Value a, Value b) {
    const Tensor<T>& A = val(a);
    const Tensor<T>& B = val(b);
    CV_REQUIRE(A.same_shape(B),
               "sub: shape mismatch " + A.shape_str() + " - " + B.shape_str());
    Tensor<T> C = A;
    for (int i = 0; i < A.numel(); ++i) C[i] -= B[i];
    return push_op(std::move(C), {a, b}, "sub", [a, b](Tape& t, int self) {
      const Tensor<T>& g = t.nodes_[self].grad;
      if (t.wants(a)) {
        Tensor<T>& da = t.grad_buf(a);
        for (int i = 0; i < g.numel(); ++i) da[i] += g[i];
      }
      if (t.wants(b)) {
        Tensor<T>& db = t.grad_buf(b);
        for (int i = 0; i < g.numel(); ++i) db[i] -= g[i];
      }
    });
  }

  Value mul(Value a, Value b) {
    const Tensor<T>& A = val(a);
    const Tensor<T>& B = val(b);
    CV_REQUIRE(A.same_shape(B),
               "mul: shape mismatch " + A.shape_str() + " * " + B.shape_str());
    Tensor<T> C = A;
    for (int i = 0; i < A.numel(); ++i) C[i] *= B[i];
    return push_op(std::move(C), {a, b}, "mul", [a, b](Tape& t, int self) {
      const Tensor<T>& g = t.nodes_[self].grad;
      const Tensor<T>& A2 = t.val(a);
      const Tensor<T>& B2 = t.val(b);
      if (t.wants(a)) {
        Tensor<T>& da = t.grad_buf(a);
        for (int i = 0; i < g.numel(); ++i) da[i] += g[i] * B2[i];
      }
      if (t.wants(b)) {
        Tensor<T>& db = t.grad_buf(b);
        for (int i = 0; i < g.numel(); ++i) db[i] += g[i] * A2[i];
      }
    });
  }

  // alpha * a + beta, elementwise.
  Value affine(Value a, T alpha, T beta) {
    Tensor<T> C = val(a);
    for (int i = 0; i < C.numel(); ++i) C[i] = alpha * C[i] + beta;
    return push_op(std::move(C), {a}, "affine", [a, alpha](Tape& t, int self) {
      const Tensor<T>& g = t.nodes_[self].grad;
      if (t.wants(a)) {
        Tensor<T>& da = t.grad_buf(a);
        for (int i = 0; i < g.numel(); ++i) da[i] += alpha * g[i];
      }
    });
  }

  Value concat_cols(std::span<const Value> parts) {
    CV_REQUIRE(!parts.empty(), "concat: no inputs");
    int rows = val(parts[0]).rows();
    int cols = 0;
    for (Value p : parts) {
      CV_REQUIRE(val(p).rank() == 2 && val(p).rows() == rows,
                 "concat: row mismatch");
      cols += val(p).cols();
    }
    Tensor<T> C({rows, cols});
    int off = 0;
    for (Value p : parts) {
      const Tensor<T>& P = val(p);
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < P.cols(); ++j) C.at(i, off + j) = P.at(i, j);
      off += P.cols();
    }
    std::vector<Value> in(parts.begin(), parts.end());
    return push_op(std::move(C), in, "concat",
                   [in](Tape& t, int self) {
                     const Tensor<T>& g = t.nodes_[self].grad;
                     int off2 = 0;
                     for (Value p : in) {
                       const Tensor<T>& P = t.val(p);
                       if (t.wants(p)) {
                         Tensor<T>& dp = t.grad_buf(p);
                         for (int i = 0; i < g.rows(); ++i)
                           for (int j = 0; j < P.cols(); ++j)
                             dp.at(i, j) += g.at(i, off2 + j);
                       }
                       off2 += P.cols();
                     }
                   });
  }

  Value concat_cols(std::initializer_list<Value> parts) {
    std::vector<Value> v(parts);
    return concat_cols(std::span<const Value>(v));
  }

  Value slice_cols(Value a, int c0, int c1) {
    const Tensor<T>& A = val(a);
    CV_REQUIRE(A.rank() == 2 && 0 <= c0 && c0 < c1 && c1 <= A.cols(),
               "slice: bad column range");
    Tensor<T> C({A.rows(), c1 - c0});
    for (int i = 0; i < A.rows(); ++i)
      for (int j = c0; j < c1; ++j) C.at(i, j - c0) = A.at(i, j);
    return push_op(std::move(C), {a}, "slice", [a, c0](Tape& t, int self) {
      const Tensor<T>& g = t.nodes_[self].grad;
      if (t.wants(a)) {
        Tensor<T>& da = t.grad_buf(a);
        for (int i = 0; i < g.rows(); ++i)
          for (int j = 0; j < g.cols(); ++j) da.at(i, c0 + j) += g.at(i, j);
      }
    });
  }

  Value tanh_op(Value a) {
    Tensor<T> C = val(a);
    for (int i = 0; i < C.numel(); ++i) C[i] = std::tanh(C[i]);
    return push_op(std::move(C), {a}, "tanh", [a](Tape& t, int self) {
      const Tensor<T>& g = t.nodes_[self].grad;
      const Tensor<T>& y = t.nodes_[self].value;
      if (t.wants(a)) {
        Tensor<T>& da = t.grad_buf(a);
        for (int i = 0; i < g.numel(); ++i) da[i] += g[i] * (T(1) - y[i] * y[i]);
      }
    });
  }

  Value sigmoid_op(Value a) {
    Tensor<T> C = val(a);
    for (int i = 0; i < C.numel(); ++i) C[i] = T(1) / (T(1) + std::exp(-C[i]));
    return push_op(std::move(C), {a}, "sigmoid", [a](Tape& t, int self) {
      const Tensor<T>& g = t.nodes_[self].grad;
      const Tensor<T>& y = t.nodes_[self].value;
      if (t.wants(a)) {
        Tensor<T>& da = t.grad_buf(a);
        for (int i = 0; i < g.numel(); ++i) da[i] += g[i] * y[i] * (T(1) - y[i]);
      }
    });
  }

  Value relu_op(Value a) {
    Tensor<T> C = val(a);
    for (int i = 0; i < C.numel(); ++i) C[i] = C[i] > T(0) ? C[i] : T(0);
    return push_op(std::move(C), {a}, "relu", [a](Tape& t, int self) {
      const Tensor<T>& g = t.nodes_[self].grad;
      const Tensor<T>& x = t.val(a);
      if (t.wants(a)) {
        Tensor<T>& da = t.grad_buf(a);
        for (int i = 0; i < g.numel(); ++i)
          if (x[i] > T(0)) da[i] += g[i];
      }
    });
  }

  // Row-wise, numerically stable.
  Value softmax(Value a) {
    Tensor<T> C = rowwise_softmax(val(a), false);
    return push_op(std::move(C), {a}, "softmax", [a](Tape& t, int self) {
      const Tensor<T>& g = t.nodes_[self].grad;
      const Tensor<T>& y = t.nodes_[self].value;
      if (!t.wants(a)) return;
      Tensor<T>& da = t.grad_buf(a);
      for (int i = 0; i < y.rows(); ++i) {
        T dot = 0;
        for (int j = 0; j < y.cols(); ++j) dot += g.at(i, j) * y.at(i, j);
        for (int j = 0; j < y.cols(); ++j)
          da.at(i, j) += y.at(i, j) * (g.at(i, j) - dot);
      }
    });
  }

  Value log_softmax(Value a) {
    Tensor<T> C = rowwise_softmax(val(a), true);
    return push_op(std::move(C), {a}, "log_softmax", [a](Tape& t, int self) {
      const Tensor<T>& g = t.nodes_[self].grad;
      const Tensor<T>& l = t.nodes_[self].value;
      if (!t.wants(a)) return;
      Tensor<T>& da = t.grad_buf(a);
      for (int i = 0; i < l.rows(); ++i) {
        T gsum = 0;
        for (int j = 0; j < l.cols(); ++j) gsum += g.at(i, j);
        for (int j = 0; j < l.cols(); ++j)
          da.at(i, j) += g.at(i, j) - std::exp(l.at(i, j)) * gsum;
      }
    });
  }

  // sqrt(sum x^2); subgradient 0 at the origin.
  Value l2_norm(Value a) {
    const Tensor<T>& A = val(a);
    T acc = 0;
    for (int i = 0; i < A.numel(); ++i) acc += A[i] * A[i];
    Tensor<T> C = Tensor<T>::scalar(std::sqrt(acc));
    return push_op(std::move(C), {a}, "l2_norm", [a](Tape& t, int self) {
      T g = t.nodes_[self].grad[0];
      T norm = t.nodes_[self].value[0];
      if (!t.wants(a) || norm == T(0)) return;
      const Tensor<T>& x = t.val(a);
      Tensor<T>& da = t.grad_buf(a);
      for (int i = 0; i < x.numel(); ++i) da[i] += g * x[i] / norm;
    });
  }

  Value sum(Value a) {
    const Tensor<T>& A = val(a);
    T acc = 0;
    for (int i = 0; i < A.numel(); ++i) acc += A[i];
    return push_op(Tensor<T>::scalar(acc), {a}, "sum", [a](Tape& t, int self) {
      T g = t.nodes_[self].grad[0];
      if (!t.wants(a)) return;
      Tensor<T>& da = t.grad_buf(a);
      for (int i = 0; i < da.numel(); ++i) da[i] += g;
    });
  }

  Value mean(Value a) {
    const Tensor<T>& A = val(a);
    T acc = 0;
    for (int i = 0; i < A.numel(); ++i) acc += A[i];
    T inv = T(1) / static_cast<T>(A.numel());
    return push_op(Tensor<T>::scalar(acc * inv), {a}, "mean",
                   [a, inv](Tape& t, int self) {
                     T g = t.nodes_[self].grad[0];
                     if (!t.wants(a)) return;
                     Tensor<T>& da = t.grad_buf(a);
                     for (int i = 0; i < da.numel(); ++i) da[i] += g * inv;
                   });
  }

  Value pick(Value a, int r, int c) {
    const Tensor<T>& A = val(a);
    CV_REQUIRE(A.rank() == 2 && r < A.rows() && c < A.cols(), "pick: index out of range");
    return push_op(Tensor<T>::scalar(A.at(r, c)), {a}, "pick",
                   [a, r, c](Tape& t, int self) {
                     T g = t.nodes_[self].grad[0];
                     if (t.wants(a)) t.grad_buf(a).at(r, c) += g;
                   });
  }

  // Copies the value and cuts the gradient path.
  Value detach(Value a) { return constant(val(a)); }

  // Same elements, new shape (copying).
  Value reshape(Value a, std::vector<int> shape) {
    const Tensor<T>& A = val(a);
    CV_REQUIRE(Tensor<T>::numel_of(shape) == A.numel(),
               "reshape: element count mismatch for " + A.shape_str());
    Tensor<T> C(std::move(shape));
    for (int i = 0; i < A.numel(); ++i) C[i] = A[i];
    return push_op(std::move(C), {a}, "reshape", [a](Tape& t, int self) {
      const Tensor<T>& g = t.nodes_[self].grad;
      if (t.wants(a)) {
        Tensor<T>& da = t.grad_buf(a);
        for (int i = 0; i < g.numel(); ++i) da[i] += g[i];
      }
    });
  }

  Value flatten(Value a) { return reshape(a, {1, val(a).numel()}); }

  // Valid-padding convolution, x {H,W,C}, w {kh,kw,C,Co}, bias [1 x Co].
  Value conv2d(Value x, Value w, Value bias, int stride) {
    const Tensor<T>& X = val(x);
    const Tensor<T>& W = val(w);
    const Tensor<T>& B = val(bias);
    CV_REQUIRE(X.rank() == 3 && W.rank() == 4 && stride >= 1, "conv2d: bad ranks");
    int H = X.dim(0), Wd = X.dim(1), C = X.dim(2);
    int kh = W.dim(0), kw = W.dim(1), Cin = W.dim(2), Co = W.dim(3);
    CV_REQUIRE(C == Cin && B.numel() == Co && kh <= H && kw <= Wd,
               "conv2d: shape mismatch " + X.shape_str() + " conv " + W.shape_str());
    int Ho = (H - kh) / stride + 1, Wo = (Wd - kw) / stride + 1;
    Tensor<T> Y({Ho, Wo, Co});
    auto xi = [&](int i, int j, int c) { return (i * Wd + j) * C + c; };
    auto wi = [&](int a2, int b2, int c, int o) { return ((a2 * kw + b2) * Cin + c) * Co + o; };
    auto yi = [&](int i, int j, int o) { return (i * Wo + j) * Co + o; };
    for (int oh = 0; oh < Ho; ++oh)
      for (int ow = 0; ow < Wo; ++ow) {
        for (int o = 0; o < Co; ++o) Y[yi(oh, ow, o)] = B[o];
        for (int ki = 0; ki < kh; ++ki)
          for (int kj = 0; kj < kw; ++kj)
            for (int c = 0; c < C; ++c) {
              T xv = X[xi(oh * stride + ki, ow * stride + kj, c)];
              if (xv == T(0)) continue;
              for (int o = 0; o < Co; ++o)
                Y[yi(oh, ow, o)] += xv * W[wi(ki, kj, c, o)];
            }
      }
    return push_op(std::move(Y), {x, w, bias},
                   "conv2d", [x, w, bias, stride](Tape& t, int self) {
                     t.conv2d_backward(self, x, w, bias, stride);
                   });
  }

  // ---- backward ----

  void backward(Value loss) {
    CV_REQUIRE(recording_, "backward: tape is not recording");
    CV_REQUIRE(!backward_done_, "backward: called twice on the same tape");
    CV_REQUIRE(val(loss).numel() == 1, "backward: loss must be scalar");
    backward_done_ = true;
    grad_buf(loss).fill(T(1));
    for (int i = loss.i; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (!n.needs_grad || !n.back || n.grad.empty()) continue;
      n.back(*this, i);
    }
  }

  bool backward_done() const { return backward_done_; }

 private:
  struct Node {
    Tensor<T> value;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    bool needs_grad = false;
    const char* op = "";
    std::function<void(Tape&, int)> back;
  };

  const Node& node(Value v) const {
    CV_REQUIRE(v.valid() && v.i < size(), "invalid tape value");
    return nodes_[static_cast<size_t>(v.i)];
  }

  bool wants(Value v) const { return nodes_[static_cast<size_t>(v.i)].needs_grad; }

  Tensor<T>& grad_buf(Value v) {
    Node& n = nodes_[static_cast<size_t>(v.i)];
    if (n.grad.empty()) n.grad = Tensor<T>(val(v).shape());
    return n.grad;
  }

  Value push_node(Tensor<T> v, bool needs, const char* op,
                  std::function<void(Tape&, int)> back) {
    Node n;
    n.value = std::move(v);
    n.needs_grad = needs;
    n.op = op;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Value{size() - 1};
  }

  Value push_op(Tensor<T> v, const std::vector<Value>& inputs, const char* op,
                std::function<void(Tape&, int)> back) {
    if (!v.all_finite())
      throw numeric_error(std::string("op '") + op + "' produced non-finite values");
    bool needs = false;
    if (recording_)
      for (Value in : inputs) needs = needs || wants(in);
    return push_node(std::move(v), needs, op, needs ? std::move(back) : nullptr);
  }

  static Tensor<T> rowwise_softmax(const Tensor<T>& A, bool log_form) {
    CV_REQUIRE(A.rank() == 2, "softmax: rank-2 input required");
    Tensor<T> C(A.shape());
    for (int i = 0; i < A.rows(); ++i) {
      T mx = A.at(i, 0);
      for (int j = 1; j < A.cols(); ++j) mx = std::max(mx, A.at(i, j));
      T z = 0;
      for (int j = 0; j < A.cols(); ++j) z += std::exp(A.at(i, j) - mx);
      T logz = std::log(z);
      for (int j = 0; j < A.cols(); ++j) {
        T centered = A.at(i, j) - mx;
        C.at(i, j) = log_form ? centered - logz : std::exp(centered) / z;
      }
    }
    return C;
  }

  static void gemm(const Tensor<T>& A, const Tensor<T>& B, Tensor<T>& C) {
    const int m = A.rows(), k = A.cols(), n = B.cols();
    for (int i = 0; i < m; ++i) {
      T* cr = C.data() + static_cast<size_t>(i) * n;
      for (int p = 0; p < k; ++p) {
        T aip = A.data()[static_cast<size_t>(i) * k + p];
        if (aip == T(0)) continue;
        const T* br = B.data() + static_cast<size_t>(p) * n;
        for (int j = 0; j < n; ++j) cr[j] += aip * br[j];
      }
    }
  }

  void conv2d_backward(int self, Value x, Value w, Value bias, int stride) {
    const Tensor<T>& g = nodes_[static_cast<size_t>(self)].grad;
    const Tensor<T>& X = val(x);
    const Tensor<T>& W = val(w);
    int Wd = X.dim(1), C = X.dim(2);
    int kh = W.dim(0), kw = W.dim(1), Co = W.dim(3);
    int Ho = g.dim(0), Wo = g.dim(1);
    auto xi = [&](int i, int j, int c) { return (i * Wd + j) * C + c; };
    auto wi = [&](int a2, int b2, int c, int o) { return ((a2 * kw + b2) * C + c) * Co + o; };
    auto yi = [&](int i, int j, int o) { return (i * Wo + j) * Co + o; };
    Tensor<T>* dx = wants(x) ? &grad_buf(x) : nullptr;
    Tensor<T>* dw = wants(w) ? &grad_buf(w) : nullptr;
    Tensor<T>* db = wants(bias) ? &grad_buf(bias) : nullptr;
    for (int oh = 0; oh < Ho; ++oh)
      for (int ow = 0; ow < Wo; ++ow)
        for (int o = 0; o < Co; ++o) {
          T go = g[yi(oh, ow, o)];
          if (go == T(0)) continue;
          if (db) (*db)[o] += go;
          for (int ki = 0; ki < kh; ++ki)
            for (int kj = 0; kj < kw; ++kj)
              for (int c = 0; c < C; ++c) {
                int xid = xi(oh * stride + ki, ow * stride + kj, c);
                if (dw) (*dw)[wi(ki, kj, c, o)] += go * X[xid];
                if (dx) (*dx)[xid] += go * W[wi(ki, kj, c, o)];
              }
        }
  }

  std::vector<Node> nodes_;
  bool recording_;
  bool backward_done_ = false;
};

}  // namespace crossview::nn
