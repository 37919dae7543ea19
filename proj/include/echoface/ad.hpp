#pragma once

// Minimal reverse-mode automatic differentiation over Eigen::MatrixXd.
//
// A Tape owns a growing list of nodes; each op appends a node holding its
// value and a closure that scatters the node's gradient to its parents.
// Gradients are materialized on demand by backward() from a 1x1 loss node.
// The op set is exactly what the models in this repo need; every primitive
// is covered by a finite-difference test.

#include <functional>
#include <string>
#include <vector>

#include "echoface/common.hpp"

namespace echoface::ad {

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf node: inputs and parameters enter the graph here.
  Var leaf(const Mat& value);

  const Mat& val(Var v) const;
  const Mat& grad(Var v) const;

  // Backpropagates from a 1x1 loss node. May be called once per tape.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

  // Extension point for composite ops with hand-written backward passes.
  // The closure receives the tape and the id of the node being differentiated
  // and must accumulate into parent gradients via grad_ref().
  Var push(Mat value, std::function<void(Tape&, int)> backprop);

  Mat& grad_ref(Var v);
  Mat& grad_ref(int id);

 private:
  struct Node {
    Mat value;
    Mat grad;
    std::function<void(Tape&, int)> backprop;
  };
  std::vector<Node> nodes_;
  bool ran_backward_ = false;
};

// --- arithmetic ---
Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double c);
Var add_scaled(Var a, double ca, Var b, double cb);
Var cmul(Var a, Var b);
// x (T x C) plus a 1 x C row broadcast to every row.
Var add_rowvec(Var x, Var row);
// y = x .* rep(s) + rep(m), per-column affine with constant coefficients.
Var affine_cols(Var x, const RowVec& s, const RowVec& m);
Var add_const(Var x, const Mat& c);

// --- nonlinearities / normalization ---
Var tanh(Var x);
// Row-wise layer norm; gain and bias are 1 x C variables.
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
// Row-wise softmax of (x + bias) with optional boolean mask; disallowed
// entries get probability zero. bias/mask may be null. Each row must keep at
// least one allowed entry.
Var softmax_rows(Var x, const Mat* bias,
                 const Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>* allowed);

// --- shape ---
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_cols(Var x, int begin, int len);
Var slice_rows(Var x, int begin, int len);
Var gather_cols(Var x, const std::vector<int>& idx);
// Each row duplicated twice: out row 2t and 2t+1 equal in row t.
Var upsample_rows2(Var x);
// Forward difference along rows: out[t] = x[t+1] - x[t]; (T-1) x C.
Var rows_diff(Var x);

// --- convolutions over time (rows = frames) ---
// x: T x Cin. w: (k*Cin) x Cout laid out as k stacked Cin x Cout blocks,
// block j applying to frame offset j - pad. b: 1 x Cout. Zero padding.
Var conv1d(Var x, Var w, Var b, int k, int stride, int pad);
// Depthwise: kern is k x C, channel c convolved with kern.col(c). Stride 1.
Var depthwise_conv1d(Var x, Var kern, int pad);

// --- losses (all return 1x1) ---
Var mean_abs(Var x, const Mat& target);
Var mse(Var x, const Mat& target);
Var mean_sq(Var x);
// Mean over rows of softmax cross-entropy against integer class ids.
Var softmax_xent_mean(Var logits, const std::vector<int>& ids);
Var wsum(const std::vector<std::pair<double, Var>>& terms);

}  // namespace echoface::ad
