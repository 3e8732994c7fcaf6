#pragma once

// Central finite-difference oracle for gradient checks. The loss builder is
// re-invoked per probe, so it must be deterministic given the parameter
// values (no dropout, no fresh rng draws).

#include <cmath>
#include <functional>
#include <string>

#include "medkg/tensor.hpp"

namespace fd {

struct Report {
  double max_rel = 0.0;
  std::string where;
  int checked = 0;
};

inline double rel_err(double ad, double fdv, double floor_) {
  return std::abs(ad - fdv) / std::max({std::abs(ad), std::abs(fdv), floor_});
}

inline Report check(medkg::ag::ParamStore& params,
                    const std::function<medkg::ag::Tensor()>& build_loss,
                    double eps = 1e-5, double floor_ = 1e-5) {
  using medkg::ag::Matrix;
  params.zero_grad();
  medkg::ag::Tensor loss = build_loss();
  medkg::ag::backward(loss);
  std::vector<Matrix> grads;
  for (const auto& [name, t] : params.items())
    grads.push_back(t.has_grad() ? t.grad() : Matrix::Zero(t.rows(), t.cols()));

  Report rep;
  size_t pi = 0;
  for (const auto& [name, t] : params.items()) {
    Matrix& v = const_cast<medkg::ag::Tensor&>(t).mutable_value();
    for (Eigen::Index r = 0; r < v.rows(); ++r) {
      for (Eigen::Index c = 0; c < v.cols(); ++c) {
        double keep = v(r, c);
        v(r, c) = keep + eps;
        double lp = build_loss().value()(0, 0);
        v(r, c) = keep - eps;
        double lm = build_loss().value()(0, 0);
        v(r, c) = keep;
        double fdv = (lp - lm) / (2.0 * eps);
        double err = rel_err(grads[pi](r, c), fdv, floor_);
        ++rep.checked;
        if (err > rep.max_rel) {
          rep.max_rel = err;
          rep.where = name + "(" + std::to_string(r) + "," + std::to_string(c) + ")";
        }
      }
    }
    ++pi;
  }
  params.zero_grad();
  return rep;
}

}  // namespace fd
