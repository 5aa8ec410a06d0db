#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "lords/error.hpp"
#include "lords/matrix.hpp"

namespace lords {

struct AdamWHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
};

/// Moment buffers for a fixed list of parameter matrices. Buffers are
/// created zero-filled on the first step.
struct AdamWState {
  AdamWHyper hyper;
  std::size_t step = 0;
  std::vector<DenseMatrix> first_moment;
  std::vector<DenseMatrix> second_moment;
};

/// One decoupled-weight-decay Adam update with bias correction:
///   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
///   theta <- theta (1 - lr wd) - lr m_hat / (sqrt(v_hat) + eps)
inline void adamw_step(AdamWState& state, std::span<DenseMatrix* const> params,
                       std::span<const DenseMatrix* const> grads, double lr) {
  const auto& h = state.hyper;
  if (!(h.beta1 >= 0.0 && h.beta1 < 1.0 && h.beta2 >= 0.0 && h.beta2 < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "AdamW betas must lie in [0, 1)");
  }
  if (params.size() != grads.size()) throw Error(ErrorCode::kShapeMismatch, "AdamW params/grads count mismatch");
  if (state.first_moment.empty()) {
    for (const DenseMatrix* p : params) {
      state.first_moment.emplace_back(p->rows(), p->cols());
      state.second_moment.emplace_back(p->rows(), p->cols());
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw Error(ErrorCode::kShapeMismatch, "AdamW state was built for a different parameter list");
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(h.beta1, t);
  const double correction2 = 1.0 - std::pow(h.beta2, t);
  const double decay = 1.0 - lr * h.weight_decay;

  for (std::size_t k = 0; k < params.size(); ++k) {
    DenseMatrix& p = *params[k];
    const DenseMatrix& g = *grads[k];
    require_same_shape(p, g, "AdamW param/grad");
    require_same_shape(p, state.first_moment[k], "AdamW param/moment");
    auto pd = p.data();
    auto gd = g.data();
    auto md = state.first_moment[k].data();
    auto vd = state.second_moment[k].data();
    for (std::size_t i = 0; i < pd.size(); ++i) {
      md[i] = h.beta1 * md[i] + (1.0 - h.beta1) * gd[i];
      vd[i] = h.beta2 * vd[i] + (1.0 - h.beta2) * gd[i] * gd[i];
      const double m_hat = md[i] / correction1;
      const double v_hat = vd[i] / correction2;
      pd[i] = pd[i] * decay - lr * m_hat / (std::sqrt(v_hat) + h.epsilon);
    }
  }
}

}  // namespace lords
