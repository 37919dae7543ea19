#include "echoface/ad.hpp"

#include <cmath>
#include <limits>

namespace echoface::ad {

namespace {

void require_same_tape(Var a, Var b) {
  check_arg(a.valid() && b.valid() && a.tape == b.tape,
            "ad: operands must live on the same tape");
}

}  // namespace

Var Tape::leaf(const Mat& value) {
  nodes_.push_back(Node{value, Mat(), nullptr});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::push(Mat value, std::function<void(Tape&, int)> backprop) {
  nodes_.push_back(Node{std::move(value), Mat(), std::move(backprop)});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

const Mat& Tape::val(Var v) const {
  check_arg(v.tape == this && v.id >= 0 && v.id < static_cast<int>(nodes_.size()),
            "ad: variable does not belong to this tape");
  return nodes_[static_cast<std::size_t>(v.id)].value;
}

const Mat& Tape::grad(Var v) const {
  check_arg(v.tape == this && v.id >= 0 && v.id < static_cast<int>(nodes_.size()),
            "ad: variable does not belong to this tape");
  check_arg(ran_backward_, "ad: grad() requires backward() first");
  return nodes_[static_cast<std::size_t>(v.id)].grad;
}

Mat& Tape::grad_ref(int id) { return nodes_[static_cast<std::size_t>(id)].grad; }
Mat& Tape::grad_ref(Var v) { return grad_ref(v.id); }

void Tape::backward(Var loss) {
  check_arg(loss.tape == this, "ad: loss does not belong to this tape");
  check_arg(!ran_backward_, "ad: backward() may run once per tape");
  const Mat& lv = val(loss);
  check_arg(lv.rows() == 1 && lv.cols() == 1, "ad: loss must be 1x1");
  for (auto& n : nodes_) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  nodes_[static_cast<std::size_t>(loss.id)].grad(0, 0) = 1.0;
  ran_backward_ = true;
  for (int i = loss.id; i >= 0; --i) {
    auto& n = nodes_[static_cast<std::size_t>(i)];
    if (n.backprop) n.backprop(*this, i);
  }
}

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  Tape& t = *a.tape;
  check_arg(t.val(a).cols() == t.val(b).rows(), "ad: matmul shape mismatch");
  Mat y = t.val(a) * t.val(b);
  int ai = a.id, bi = b.id;
  return t.push(std::move(y), [ai, bi](Tape& tp, int self) {
    const Mat& g = tp.grad_ref(self);
    tp.grad_ref(ai).noalias() += g * tp.val(Var{&tp, bi}).transpose();
    tp.grad_ref(bi).noalias() += tp.val(Var{&tp, ai}).transpose() * g;
  });
}

Var transpose(Var a) {
  Tape& t = *a.tape;
  int ai = a.id;
  return t.push(t.val(a).transpose(), [ai](Tape& tp, int self) {
    tp.grad_ref(ai) += tp.grad_ref(self).transpose();
  });
}

Var add(Var a, Var b) { return add_scaled(a, 1.0, b, 1.0); }
Var sub(Var a, Var b) { return add_scaled(a, 1.0, b, -1.0); }

Var scale(Var a, double c) {
  Tape& t = *a.tape;
  int ai = a.id;
  return t.push(c * t.val(a), [ai, c](Tape& tp, int self) {
    tp.grad_ref(ai) += c * tp.grad_ref(self);
  });
}

Var add_scaled(Var a, double ca, Var b, double cb) {
  require_same_tape(a, b);
  Tape& t = *a.tape;
  check_arg(t.val(a).rows() == t.val(b).rows() && t.val(a).cols() == t.val(b).cols(),
            "ad: add shape mismatch");
  Mat y = ca * t.val(a) + cb * t.val(b);
  int ai = a.id, bi = b.id;
  return t.push(std::move(y), [ai, bi, ca, cb](Tape& tp, int self) {
    const Mat& g = tp.grad_ref(self);
    tp.grad_ref(ai) += ca * g;
    tp.grad_ref(bi) += cb * g;
  });
}

Var cmul(Var a, Var b) {
  require_same_tape(a, b);
  Tape& t = *a.tape;
  Mat y = t.val(a).cwiseProduct(t.val(b));
  int ai = a.id, bi = b.id;
  return t.push(std::move(y), [ai, bi](Tape& tp, int self) {
    const Mat& g = tp.grad_ref(self);
    tp.grad_ref(ai) += g.cwiseProduct(tp.val(Var{&tp, bi}));
    tp.grad_ref(bi) += g.cwiseProduct(tp.val(Var{&tp, ai}));
  });
}

Var add_rowvec(Var x, Var row) {
  require_same_tape(x, row);
  Tape& t = *x.tape;
  check_arg(t.val(row).rows() == 1 && t.val(row).cols() == t.val(x).cols(),
            "ad: add_rowvec expects a 1 x C row");
  Mat y = t.val(x).rowwise() + t.val(row).row(0);
  int xi = x.id, ri = row.id;
  return t.push(std::move(y), [xi, ri](Tape& tp, int self) {
    const Mat& g = tp.grad_ref(self);
    tp.grad_ref(xi) += g;
    tp.grad_ref(ri) += g.colwise().sum();
  });
}

Var affine_cols(Var x, const RowVec& s, const RowVec& m) {
  Tape& t = *x.tape;
  check_arg(s.cols() == t.val(x).cols() && m.cols() == t.val(x).cols(),
            "ad: affine_cols coefficient width mismatch");
  Mat y = (t.val(x).array().rowwise() * s.array()).rowwise() + m.array();
  int xi = x.id;
  RowVec sc = s;
  return t.push(std::move(y), [xi, sc](Tape& tp, int self) {
    tp.grad_ref(xi).array() += tp.grad_ref(self).array().rowwise() * sc.array();
  });
}

Var add_const(Var x, const Mat& c) {
  Tape& t = *x.tape;
  check_arg(c.rows() == t.val(x).rows() && c.cols() == t.val(x).cols(),
            "ad: add_const shape mismatch");
  int xi = x.id;
  return t.push(t.val(x) + c, [xi](Tape& tp, int self) {
    tp.grad_ref(xi) += tp.grad_ref(self);
  });
}

Var tanh(Var x) {
  Tape& t = *x.tape;
  Mat y = t.val(x).array().tanh();
  int xi = x.id;
  return t.push(std::move(y), [xi](Tape& tp, int self) {
    const Mat& y2 = tp.val(Var{&tp, self});
    tp.grad_ref(xi).array() +=
        tp.grad_ref(self).array() * (1.0 - y2.array().square());
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  require_same_tape(x, gain);
  require_same_tape(x, bias);
  Tape& t = *x.tape;
  const Mat& xv = t.val(x);
  const Eigen::Index n = xv.cols();
  check_arg(t.val(gain).rows() == 1 && t.val(gain).cols() == n &&
                t.val(bias).rows() == 1 && t.val(bias).cols() == n,
            "ad: layer_norm gain/bias must be 1 x C");
  Mat y(xv.rows(), n);
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    double mu = xv.row(r).mean();
    double var = (xv.row(r).array() - mu).square().mean();
    y.row(r) = ((xv.row(r).array() - mu) / std::sqrt(var + eps)) *
                   t.val(gain).row(0).array() +
               t.val(bias).row(0).array();
  }
  int xi = x.id, gi = gain.id, bi = bias.id;
  return t.push(std::move(y), [xi, gi, bi, eps](Tape& tp, int self) {
    const Mat& xv2 = tp.val(Var{&tp, xi});
    const Mat& gv = tp.val(Var{&tp, gi});
    const Mat& g = tp.grad_ref(self);
    const double n = static_cast<double>(xv2.cols());
    for (Eigen::Index r = 0; r < xv2.rows(); ++r) {
      double mu = xv2.row(r).mean();
      Eigen::ArrayXXd xc = xv2.row(r).array() - mu;
      double var = xc.square().mean();
      double inv = 1.0 / std::sqrt(var + eps);
      Eigen::ArrayXXd xhat = xc * inv;
      Eigen::ArrayXXd dxhat = g.row(r).array() * gv.row(0).array();
      double dvar = (dxhat * xc).sum() * (-0.5) * inv * inv * inv;
      double dmu = -inv * dxhat.sum() + dvar * (-2.0 / n) * xc.sum();
      tp.grad_ref(xi).row(r).array() +=
          dxhat * inv + dvar * (2.0 / n) * xc + dmu / n;
      tp.grad_ref(gi).row(0).array() += g.row(r).array() * xhat;
      tp.grad_ref(bi).row(0).array() += g.row(r).array();
    }
  });
}

Var softmax_rows(Var x, const Mat* bias,
                 const Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>* allowed) {
  Tape& t = *x.tape;
  const Mat& xv = t.val(x);
  if (bias != nullptr)
    check_arg(bias->rows() == xv.rows() && bias->cols() == xv.cols(),
              "ad: softmax bias shape mismatch");
  if (allowed != nullptr)
    check_arg(allowed->rows() == xv.rows() && allowed->cols() == xv.cols(),
              "ad: softmax mask shape mismatch");
  Mat z = bias ? Mat(xv + *bias) : xv;
  Mat y(z.rows(), z.cols());
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < z.cols(); ++c)
      if (!allowed || (*allowed)(r, c)) mx = std::max(mx, z(r, c));
    check_arg(std::isfinite(mx), "ad: softmax row with no allowed entries");
    double denom = 0.0;
    for (Eigen::Index c = 0; c < z.cols(); ++c) {
      double e = (!allowed || (*allowed)(r, c)) ? std::exp(z(r, c) - mx) : 0.0;
      y(r, c) = e;
      denom += e;
    }
    y.row(r) /= denom;
  }
  int xi = x.id;
  return t.push(std::move(y), [xi](Tape& tp, int self) {
    const Mat& y2 = tp.val(Var{&tp, self});
    const Mat& g = tp.grad_ref(self);
    for (Eigen::Index r = 0; r < y2.rows(); ++r) {
      double dot = g.row(r).cwiseProduct(y2.row(r)).sum();
      tp.grad_ref(xi).row(r).array() +=
          y2.row(r).array() * (g.row(r).array() - dot);
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  check_arg(!parts.empty(), "ad: concat_cols needs at least one part");
  Tape& t = *parts[0].tape;
  Eigen::Index rows = t.val(parts[0]).rows(), total = 0;
  std::vector<int> ids;
  std::vector<Eigen::Index> widths;
  for (Var p : parts) {
    require_same_tape(parts[0], p);
    check_arg(t.val(p).rows() == rows, "ad: concat_cols row mismatch");
    ids.push_back(p.id);
    widths.push_back(t.val(p).cols());
    total += t.val(p).cols();
  }
  Mat y(rows, total);
  Eigen::Index off = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    y.middleCols(off, widths[i]) = t.val(Var{&t, ids[i]});
    off += widths[i];
  }
  return t.push(std::move(y), [ids, widths](Tape& tp, int self) {
    const Mat& g = tp.grad_ref(self);
    Eigen::Index o = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      tp.grad_ref(ids[i]) += g.middleCols(o, widths[i]);
      o += widths[i];
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  check_arg(!parts.empty(), "ad: concat_rows needs at least one part");
  Tape& t = *parts[0].tape;
  Eigen::Index cols = t.val(parts[0]).cols(), total = 0;
  std::vector<int> ids;
  std::vector<Eigen::Index> heights;
  for (Var p : parts) {
    require_same_tape(parts[0], p);
    check_arg(t.val(p).cols() == cols, "ad: concat_rows column mismatch");
    ids.push_back(p.id);
    heights.push_back(t.val(p).rows());
    total += t.val(p).rows();
  }
  Mat y(total, cols);
  Eigen::Index off = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    y.middleRows(off, heights[i]) = t.val(Var{&t, ids[i]});
    off += heights[i];
  }
  return t.push(std::move(y), [ids, heights](Tape& tp, int self) {
    const Mat& g = tp.grad_ref(self);
    Eigen::Index o = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      tp.grad_ref(ids[i]) += g.middleRows(o, heights[i]);
      o += heights[i];
    }
  });
}

Var slice_cols(Var x, int begin, int len) {
  Tape& t = *x.tape;
  check_arg(begin >= 0 && len >= 0 && begin + len <= t.val(x).cols(),
            "ad: slice_cols out of range");
  int xi = x.id;
  return t.push(t.val(x).middleCols(begin, len), [xi, begin, len](Tape& tp, int self) {
    tp.grad_ref(xi).middleCols(begin, len) += tp.grad_ref(self);
  });
}

Var slice_rows(Var x, int begin, int len) {
  Tape& t = *x.tape;
  check_arg(begin >= 0 && len >= 0 && begin + len <= t.val(x).rows(),
            "ad: slice_rows out of range");
  int xi = x.id;
  return t.push(t.val(x).middleRows(begin, len), [xi, begin, len](Tape& tp, int self) {
    tp.grad_ref(xi).middleRows(begin, len) += tp.grad_ref(self);
  });
}

Var gather_cols(Var x, const std::vector<int>& idx) {
  Tape& t = *x.tape;
  const Mat& xv = t.val(x);
  for (int c : idx)
    check_arg(c >= 0 && c < xv.cols(), "ad: gather_cols index out of range");
  Mat y(xv.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) y.col(static_cast<Eigen::Index>(i)) = xv.col(idx[i]);
  int xi = x.id;
  std::vector<int> ix = idx;
  return t.push(std::move(y), [xi, ix](Tape& tp, int self) {
    const Mat& g = tp.grad_ref(self);
    for (std::size_t i = 0; i < ix.size(); ++i)
      tp.grad_ref(xi).col(ix[i]) += g.col(static_cast<Eigen::Index>(i));
  });
}

Var upsample_rows2(Var x) {
  Tape& t = *x.tape;
  const Mat& xv = t.val(x);
  Mat y(2 * xv.rows(), xv.cols());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    y.row(2 * r) = xv.row(r);
    y.row(2 * r + 1) = xv.row(r);
  }
  int xi = x.id;
  return t.push(std::move(y), [xi](Tape& tp, int self) {
    const Mat& g = tp.grad_ref(self);
    Mat& gx = tp.grad_ref(xi);
    for (Eigen::Index r = 0; r < gx.rows(); ++r)
      gx.row(r) += g.row(2 * r) + g.row(2 * r + 1);
  });
}

Var rows_diff(Var x) {
  Tape& t = *x.tape;
  const Mat& xv = t.val(x);
  Eigen::Index tt = std::max<Eigen::Index>(xv.rows() - 1, 0);
  Mat y = xv.bottomRows(tt) - xv.topRows(tt);
  int xi = x.id;
  return t.push(std::move(y), [xi](Tape& tp, int self) {
    const Mat& g = tp.grad_ref(self);
    Mat& gx = tp.grad_ref(xi);
    if (g.rows() == 0) return;
    gx.bottomRows(g.rows()) += g;
    gx.topRows(g.rows()) -= g;
  });
}

namespace {

Eigen::Index conv_out_len(Eigen::Index t, int k, int stride, int pad) {
  Eigen::Index span = t + 2 * pad - k;
  check_arg(span >= 0, "ad: conv1d input shorter than kernel span");
  return span / stride + 1;
}

// Rows of x shifted so that out row t equals x row t*stride + j - pad
// (zero when out of range).
Mat shifted_rows(const Mat& x, Eigen::Index t_out, int j, int stride, int pad) {
  Mat s = Mat::Zero(t_out, x.cols());
  for (Eigen::Index r = 0; r < t_out; ++r) {
    Eigen::Index src = r * stride + j - pad;
    if (src >= 0 && src < x.rows()) s.row(r) = x.row(src);
  }
  return s;
}

}  // namespace

Var conv1d(Var x, Var w, Var b, int k, int stride, int pad) {
  require_same_tape(x, w);
  require_same_tape(x, b);
  Tape& t = *x.tape;
  const Mat& xv = t.val(x);
  const Mat& wv = t.val(w);
  const Eigen::Index cin = xv.cols();
  check_arg(k >= 1 && stride >= 1 && pad >= 0, "ad: conv1d bad geometry");
  check_arg(wv.rows() == static_cast<Eigen::Index>(k) * cin,
            "ad: conv1d weight rows must be k * Cin");
  const Eigen::Index cout = wv.cols();
  check_arg(t.val(b).rows() == 1 && t.val(b).cols() == cout,
            "ad: conv1d bias must be 1 x Cout");
  const Eigen::Index t_out = conv_out_len(xv.rows(), k, stride, pad);
  Mat y = Mat::Zero(t_out, cout);
  for (int j = 0; j < k; ++j)
    y.noalias() += shifted_rows(xv, t_out, j, stride, pad) * wv.middleRows(j * cin, cin);
  y.rowwise() += t.val(b).row(0);
  int xi = x.id, wi = w.id, bi = b.id;
  return t.push(std::move(y), [xi, wi, bi, k, stride, pad, cin](Tape& tp, int self) {
    const Mat& g = tp.grad_ref(self);
    const Mat& xv2 = tp.val(Var{&tp, xi});
    const Mat& wv2 = tp.val(Var{&tp, wi});
    tp.grad_ref(bi) += g.colwise().sum();
    for (int j = 0; j < k; ++j) {
      Mat xs = shifted_rows(xv2, g.rows(), j, stride, pad);
      tp.grad_ref(wi).middleRows(j * cin, cin).noalias() += xs.transpose() * g;
      Mat gx = g * wv2.middleRows(j * cin, cin).transpose();
      Mat& dst = tp.grad_ref(xi);
      for (Eigen::Index r = 0; r < gx.rows(); ++r) {
        Eigen::Index src = r * stride + j - pad;
        if (src >= 0 && src < dst.rows()) dst.row(src) += gx.row(r);
      }
    }
  });
}

Var depthwise_conv1d(Var x, Var kern, int pad) {
  require_same_tape(x, kern);
  Tape& t = *x.tape;
  const Mat& xv = t.val(x);
  const Mat& kv = t.val(kern);
  check_arg(kv.cols() == xv.cols(), "ad: depthwise kernel channel mismatch");
  const int k = static_cast<int>(kv.rows());
  const Eigen::Index t_out = conv_out_len(xv.rows(), k, 1, pad);
  Mat y = Mat::Zero(t_out, xv.cols());
  for (int j = 0; j < k; ++j)
    y.array() += shifted_rows(xv, t_out, j, 1, pad).array().rowwise() * kv.row(j).array();
  int xi = x.id, ki = kern.id;
  return t.push(std::move(y), [xi, ki, k, pad](Tape& tp, int self) {
    const Mat& g = tp.grad_ref(self);
    const Mat& xv2 = tp.val(Var{&tp, xi});
    const Mat& kv2 = tp.val(Var{&tp, ki});
    for (int j = 0; j < k; ++j) {
      Mat xs = shifted_rows(xv2, g.rows(), j, 1, pad);
      tp.grad_ref(ki).row(j) += xs.cwiseProduct(g).colwise().sum();
      Mat gx = g.array().rowwise() * kv2.row(j).array();
      Mat& dst = tp.grad_ref(xi);
      for (Eigen::Index r = 0; r < gx.rows(); ++r) {
        Eigen::Index src = r + j - pad;
        if (src >= 0 && src < dst.rows()) dst.row(src) += gx.row(r);
      }
    }
  });
}

Var mean_abs(Var x, const Mat& target) {
  Tape& t = *x.tape;
  const Mat& xv = t.val(x);
  check_arg(xv.rows() == target.rows() && xv.cols() == target.cols(),
            "ad: mean_abs shape mismatch");
  check_arg(xv.size() > 0, "ad: mean_abs of empty matrix");
  double inv_n = 1.0 / static_cast<double>(xv.size());
  Mat y(1, 1);
  y(0, 0) = (xv - target).array().abs().sum() * inv_n;
  int xi = x.id;
  Mat tgt = target;
  return t.push(std::move(y), [xi, tgt, inv_n](Tape& tp, int self) {
    double g = tp.grad_ref(self)(0, 0);
    const Mat& xv2 = tp.val(Var{&tp, xi});
    tp.grad_ref(xi).array() +=
        g * inv_n * (xv2 - tgt).array().sign();
  });
}

Var mse(Var x, const Mat& target) {
  Tape& t = *x.tape;
  const Mat& xv = t.val(x);
  check_arg(xv.rows() == target.rows() && xv.cols() == target.cols(),
            "ad: mse shape mismatch");
  Mat y(1, 1);
  if (xv.size() == 0) {
    y(0, 0) = 0.0;
    return t.push(std::move(y), [](Tape&, int) {});
  }
  double inv_n = 1.0 / static_cast<double>(xv.size());
  y(0, 0) = (xv - target).array().square().sum() * inv_n;
  int xi = x.id;
  Mat tgt = target;
  return t.push(std::move(y), [xi, tgt, inv_n](Tape& tp, int self) {
    double g = tp.grad_ref(self)(0, 0);
    const Mat& xv2 = tp.val(Var{&tp, xi});
    tp.grad_ref(xi) += (2.0 * g * inv_n) * (xv2 - tgt);
  });
}

Var mean_sq(Var x) {
  Tape& t = *x.tape;
  const Mat& xv = t.val(x);
  Mat y(1, 1);
  if (xv.size() == 0) {
    y(0, 0) = 0.0;
    return t.push(std::move(y), [](Tape&, int) {});
  }
  double inv_n = 1.0 / static_cast<double>(xv.size());
  y(0, 0) = xv.array().square().sum() * inv_n;
  int xi = x.id;
  return t.push(std::move(y), [xi, inv_n](Tape& tp, int self) {
    double g = tp.grad_ref(self)(0, 0);
    tp.grad_ref(xi) += (2.0 * g * inv_n) * tp.val(Var{&tp, xi});
  });
}

Var softmax_xent_mean(Var logits, const std::vector<int>& ids) {
  Tape& t = *logits.tape;
  const Mat& z = t.val(logits);
  check_arg(static_cast<Eigen::Index>(ids.size()) == z.rows(),
            "ad: one class id per logits row required");
  check_arg(z.rows() > 0, "ad: cross-entropy of empty logits");
  for (int c : ids) check_arg(c >= 0 && c < z.cols(), "ad: class id out of range");
  double total = 0.0;
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    double mx = z.row(r).maxCoeff();
    double lse = mx + std::log((z.row(r).array() - mx).exp().sum());
    total += lse - z(r, ids[static_cast<std::size_t>(r)]);
  }
  Mat y(1, 1);
  y(0, 0) = total / static_cast<double>(z.rows());
  int zi = logits.id;
  std::vector<int> cls = ids;
  return t.push(std::move(y), [zi, cls](Tape& tp, int self) {
    double g = tp.grad_ref(self)(0, 0);
    const Mat& z2 = tp.val(Var{&tp, zi});
    double inv_t = 1.0 / static_cast<double>(z2.rows());
    for (Eigen::Index r = 0; r < z2.rows(); ++r) {
      double mx = z2.row(r).maxCoeff();
      Eigen::ArrayXXd e = (z2.row(r).array() - mx).exp();
      Eigen::ArrayXXd p = e / e.sum();
      p(0, cls[static_cast<std::size_t>(r)]) -= 1.0;
      tp.grad_ref(zi).row(r).array() += g * inv_t * p;
    }
  });
}

Var wsum(const std::vector<std::pair<double, Var>>& terms) {
  check_arg(!terms.empty(), "ad: wsum needs at least one term");
  Tape& t = *terms[0].second.tape;
  double total = 0.0;
  std::vector<std::pair<double, int>> ws;
  for (const auto& [w, v] : terms) {
    require_same_tape(terms[0].second, v);
    check_arg(t.val(v).rows() == 1 && t.val(v).cols() == 1, "ad: wsum terms must be 1x1");
    total += w * t.val(v)(0, 0);
    ws.emplace_back(w, v.id);
  }
  Mat y(1, 1);
  y(0, 0) = total;
  return t.push(std::move(y), [ws](Tape& tp, int self) {
    double g = tp.grad_ref(self)(0, 0);
    for (const auto& [w, id] : ws) tp.grad_ref(id)(0, 0) += w * g;
  });
}

}  // namespace echoface::ad
