#pragma once
#include <cmath>
#include <vector>

#include "onedm/core/errors.hpp"
#include "onedm/core/tensor.hpp"

namespace onedm {

// Variance schedule plus every closed-form the samplers and the loss need.
// Tables are kept in double; the templated ops cast per use so the identity
// tests can run the whole chain in double.
struct DiffusionSchedule {
  int T = 0;
  std::vector<double> beta, alpha, alpha_bar;

  // alpha_bar with the t=0 convention baked in
  double abar(int t) const {
    if (t == 0) return 1.0;
    check_t(t);
    return alpha_bar[size_t(t - 1)];
  }
  double get_beta(int t) const {
    check_t(t);
    return beta[size_t(t - 1)];
  }
  double get_alpha(int t) const {
    check_t(t);
    return alpha[size_t(t - 1)];
  }
  void check_t(int t) const {
    if (t < 1 || t > T) throw UsageError("timestep out of range");
  }
};

inline DiffusionSchedule linear_schedule(int T, double beta1, double betaT) {
  if (T < 2) throw UsageError("linear_schedule: T must be >= 2");
  if (!(0.0 < beta1 && beta1 < betaT && betaT < 1.0))
    throw UsageError("linear_schedule: need 0 < beta1 < betaT < 1");
  DiffusionSchedule s;
  s.T = T;
  s.beta.resize(size_t(T));
  s.alpha.resize(size_t(T));
  s.alpha_bar.resize(size_t(T));
  double prod = 1.0;
  for (int t = 1; t <= T; ++t) {
    double b = beta1 + double(t - 1) / double(T - 1) * (betaT - beta1);
    s.beta[size_t(t - 1)] = b;
    s.alpha[size_t(t - 1)] = 1.0 - b;
    prod *= 1.0 - b;
    s.alpha_bar[size_t(t - 1)] = prod;
  }
  return s;
}

// x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) eps
template <class T>
Tensor<T> q_sample(const Tensor<T>& x0, int t, const Tensor<T>& eps,
                   const DiffusionSchedule& s) {
  s.check_t(t);
  double ab = s.abar(t);
  T c0 = T(std::sqrt(ab)), ce = T(std::sqrt(1.0 - ab));
  Tensor<T> out(x0.shape);
  for (size_t i = 0; i < x0.numel(); ++i) out[i] = c0 * x0[i] + ce * eps[i];
  return out;
}

// mu_t = [sqrt(a_t)(1-abar_{t-1}) x_t + sqrt(abar_{t-1})(1-a_t) x0] / (1-abar_t)
template <class T>
Tensor<T> posterior_mean(const Tensor<T>& x_t, const Tensor<T>& x0, int t,
                         const DiffusionSchedule& s) {
  s.check_t(t);
  double a = s.get_alpha(t), ab = s.abar(t), abp = s.abar(t - 1);
  double denom = 1.0 - ab;
  T cx = T(std::sqrt(a) * (1.0 - abp) / denom);
  T c0 = T(std::sqrt(abp) * (1.0 - a) / denom);
  Tensor<T> out(x_t.shape);
  for (size_t i = 0; i < x_t.numel(); ++i) out[i] = cx * x_t[i] + c0 * x0[i];
  return out;
}

// same coefficients, x0 replaced by the network estimate
template <class T>
Tensor<T> model_mean(const Tensor<T>& x_t, const Tensor<T>& x0_hat, int t,
                     const DiffusionSchedule& s) {
  return posterior_mean(x_t, x0_hat, t, s);
}

template <class T>
double reconstruction_loss(const Tensor<T>& x0, const Tensor<T>& x0_hat) {
  if (x0.shape != x0_hat.shape)
    throw UsageError("reconstruction_loss: shape mismatch");
  double s = 0.0;
  for (size_t i = 0; i < x0.numel(); ++i) {
    double d = double(x0[i]) - double(x0_hat[i]);
    s += d * d;
  }
  return s / double(x0.numel());
}

// x_{t-1} = mu_theta + sqrt(beta_t) eps; the t=1 step returns the mean
template <class T>
Tensor<T> ddpm_step(const Tensor<T>& x_t, const Tensor<T>& x0_hat, int t,
                    const Tensor<T>& eps, const DiffusionSchedule& s) {
  s.check_t(t);
  Tensor<T> mu = model_mean(x_t, x0_hat, t, s);
  if (t == 1) return mu;
  T sd = T(std::sqrt(s.get_beta(t)));
  for (size_t i = 0; i < mu.numel(); ++i) mu[i] += sd * eps[i];
  return mu;
}

// deterministic DDIM step in x0 form; t_prev = 0 lands on x0_hat exactly
template <class T>
Tensor<T> ddim_step(const Tensor<T>& x_t, const Tensor<T>& x0_hat, int t,
                    int t_prev, const DiffusionSchedule& s) {
  s.check_t(t);
  if (t_prev >= t || t_prev < 0)
    throw UsageError("ddim_step: need 0 <= t_prev < t");
  double ab = s.abar(t), abp = s.abar(t_prev);
  T c_eps = T(1.0 / std::sqrt(1.0 - ab));
  T c_ab = T(std::sqrt(ab));
  T c0 = T(std::sqrt(abp)), ce = T(std::sqrt(1.0 - abp));
  Tensor<T> out(x_t.shape);
  for (size_t i = 0; i < x_t.numel(); ++i) {
    T eps_hat = (x_t[i] - c_ab * x0_hat[i]) * c_eps;
    out[i] = c0 * x0_hat[i] + ce * eps_hat;
  }
  return out;
}

template <class T>
Tensor<T> cfg_mix(const Tensor<T>& cond, const Tensor<T>& uncond, double w) {
  if (cond.shape != uncond.shape) throw UsageError("cfg_mix: shape mismatch");
  Tensor<T> out(cond.shape);
  T a = T(1.0 + w), b = T(w);
  for (size_t i = 0; i < cond.numel(); ++i) out[i] = a * cond[i] - b * uncond[i];
  return out;
}

// uniform DDIM subsequence: n_steps values descending from T, paired with the
// previous entry (last pair lands on 0)
inline std::vector<int> ddim_timesteps(int T, int n_steps) {
  if (n_steps < 1 || n_steps > T)
    throw UsageError("ddim_timesteps: need 1 <= steps <= T");
  std::vector<int> ts(static_cast<size_t>(n_steps));
  for (int i = 0; i < n_steps; ++i)
    ts[size_t(i)] = int(std::lround(double(T) * double(n_steps - i) /
                                    double(n_steps)));
  // rounding can collide at small T; enforce strict descent ending >= 1
  for (int i = 1; i < n_steps; ++i)
    if (ts[size_t(i)] >= ts[size_t(i - 1)]) ts[size_t(i)] = ts[size_t(i - 1)] - 1;
  if (ts.back() < 1) throw NumericError("ddim_timesteps: schedule collapsed");
  return ts;
}

}  // namespace onedm
