#pragma once

#include <cmath>
#include <vector>

#include "spst/tensor.hpp"

namespace spst {

// ADAM with bias correction. One state tracks one parameter tensor.
struct AdamState {
  int64_t step = 0;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<double> m, v;
};

inline void adam_step(Tensor& param, const std::vector<double>& grad,
                      AdamState& st) {
  SPST_CHECK(grad.size() == param.data.size(), "adam grad/param size mismatch");
  if (st.m.size() != param.data.size()) {
    st.m.assign(param.data.size(), 0.0);
    st.v.assign(param.data.size(), 0.0);
  }
  st.step += 1;
  const double bc1 = 1.0 - std::pow(st.beta1, (double)st.step);
  const double bc2 = 1.0 - std::pow(st.beta2, (double)st.step);
  for (size_t i = 0; i < grad.size(); ++i) {
    const double g = grad[i];
    st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * g;
    st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * g * g;
    const double mhat = st.m[i] / bc1;
    const double vhat = st.v[i] / bc2;
    param.data[i] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
  }
}

}  // namespace spst
