#pragma once

// Adam optimizer over a fixed list of parameter matrices.

#include <vector>

#include "echoface/common.hpp"

namespace echoface {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(const AdamOptions& opt, std::vector<Mat*> params)
      : opt_(opt), params_(std::move(params)) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const Mat* p : params_) {
      m_.push_back(Mat::Zero(p->rows(), p->cols()));
      v_.push_back(Mat::Zero(p->rows(), p->cols()));
    }
  }

  // grads must align with the params list; applies the update in place.
  void step(const std::vector<Mat>& grads) {
    check_arg(grads.size() == params_.size(), "adam: gradient list mismatch");
    ++t_;
    double bc1 = 1.0 - std::pow(opt_.beta1, t_);
    double bc2 = 1.0 - std::pow(opt_.beta2, t_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const Mat& g = grads[i];
      check_arg(g.rows() == params_[i]->rows() && g.cols() == params_[i]->cols(),
                "adam: gradient shape mismatch");
      m_[i] = opt_.beta1 * m_[i] + (1.0 - opt_.beta1) * g;
      v_[i] = opt_.beta2 * v_[i].array().matrix() +
              (1.0 - opt_.beta2) * g.array().square().matrix();
      Mat mhat = m_[i] / bc1;
      Mat vhat = v_[i] / bc2;
      params_[i]->array() -=
          opt_.lr * mhat.array() / (vhat.array().sqrt() + opt_.eps);
    }
  }

  int steps_taken() const { return t_; }

 private:
  AdamOptions opt_;
  std::vector<Mat*> params_;
  std::vector<Mat> m_, v_;
  int t_ = 0;
};

}  // namespace echoface
