#pragma once

#include <cstdint>
#include <vector>

#include "packdit/tape.hpp"

namespace packdit {

// Adam with a fixed global-norm gradient clip. A per-parameter update mask
// implements the frozen-side rule: masked-out parameters (and their moments)
// are left untouched so a frozen stack stays bit-identical.
struct Adam {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip = 1.0;

  std::vector<Mat<float>> m, v;
  int64_t t = 0;

  void init(const ParamStore<float>& ps) {
    m = ps.zero_grads();
    v = ps.zero_grads();
    t = 0;
  }

  void step(ParamStore<float>& ps, std::vector<Mat<float>>& grads,
            const std::vector<uint8_t>* update_mask = nullptr) {
    double norm_sq = 0;
    for (size_t i = 0; i < grads.size(); ++i) {
      if (update_mask && !(*update_mask)[i]) continue;
      norm_sq += grads[i].cast<double>().squaredNorm();
    }
    float scale = 1.0f;
    if (clip > 0 && norm_sq > clip * clip)
      scale = static_cast<float>(clip / std::sqrt(norm_sq));

    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    const float b1 = static_cast<float>(beta1), b2 = static_cast<float>(beta2);
    for (size_t i = 0; i < grads.size(); ++i) {
      if (update_mask && !(*update_mask)[i]) continue;
      Mat<float> g = grads[i] * scale;
      m[i] = b1 * m[i] + (1.0f - b1) * g;
      v[i] = b2 * v[i].array() + (1.0f - b2) * g.array().square();
      Mat<float> mhat = m[i] / static_cast<float>(bc1);
      Mat<float> vhat = v[i] / static_cast<float>(bc2);
      ps.values[i] -=
          static_cast<float>(lr) *
          (mhat.array() / (vhat.array().sqrt() + static_cast<float>(eps)))
              .matrix();
    }
  }
};

}  // namespace packdit
