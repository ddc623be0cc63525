#include "emoe/diffusion.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace emoe {

double NoiseSchedule::beta(int t) const {
    if (t < 1 || t > steps) throw std::invalid_argument("NoiseSchedule::beta: t out of [1, T]");
    return betas[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar(int t) const {
    if (t < 0 || t > steps)
        throw std::invalid_argument("NoiseSchedule::alpha_bar: t out of [0, T]");
    if (t == 0) return 1.0;
    return alpha_bars[static_cast<std::size_t>(t - 1)];
}

NoiseSchedule build_schedule(int steps, double beta_min, double beta_max) {
    if (steps < 2) throw std::invalid_argument("build_schedule: T must be >= 2");
    if (!(0.0 < beta_min && beta_min < beta_max && beta_max < 1.0))
        throw std::invalid_argument("build_schedule: need 0 < beta_min < beta_max < 1");
    NoiseSchedule s;
    s.steps = steps;
    s.betas.resize(static_cast<std::size_t>(steps));
    s.alpha_bars.resize(static_cast<std::size_t>(steps));
    double prod = 1.0;
    for (int i = 0; i < steps; ++i) {
        double beta = beta_min + (beta_max - beta_min) * static_cast<double>(i) /
                                     static_cast<double>(steps - 1);
        s.betas[static_cast<std::size_t>(i)] = beta;
        prod *= 1.0 - beta;
        s.alpha_bars[static_cast<std::size_t>(i)] = prod;
    }
    return s;
}

LatentState forward_step(const LatentState& z_prev, const NoiseSchedule& schedule,
                         RngStream& stream) {
    if (z_prev.t >= schedule.steps) throw std::runtime_error("forward_step: chain exhausted");
    int t = z_prev.t + 1;
    double beta = schedule.beta(t);
    double keep = std::sqrt(1.0 - beta);
    double noise = std::sqrt(beta);
    Tensor eps = gaussian(stream, z_prev.z.shape());
    Tensor z(z_prev.z.shape());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = keep * z_prev.z[i] + noise * eps[i];
    return {std::move(z), t};
}

std::pair<LatentState, Tensor> forward_marginal(const LatentState& z0, int t,
                                                const NoiseSchedule& schedule, RngStream& stream) {
    if (t < 1 || t > schedule.steps)
        throw std::invalid_argument("forward_marginal: t out of [1, T]");
    double abar = schedule.alpha_bar(t);
    double signal = std::sqrt(abar);
    double noise = std::sqrt(1.0 - abar);
    Tensor eps = gaussian(stream, z0.z.shape());
    Tensor z(z0.z.shape());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = signal * z0.z[i] + noise * eps[i];
    return {LatentState{std::move(z), t}, std::move(eps)};
}

LatentState ddim_step(const LatentState& z_t, const Tensor& eps_pred,
                      const NoiseSchedule& schedule) {
    if (z_t.t < 1 || z_t.t > schedule.steps)
        throw std::invalid_argument("ddim_step: t out of [1, T]");
    if (!z_t.z.same_shape(eps_pred))
        throw std::invalid_argument("ddim_step: eps_pred shape " + shape_string(eps_pred.shape()) +
                                    " does not match latent " + shape_string(z_t.z.shape()));
    double abar_t = schedule.alpha_bar(z_t.t);
    double abar_prev = schedule.alpha_bar(z_t.t - 1);
    double inv_signal = 1.0 / std::sqrt(abar_t);
    double noise_t = std::sqrt(1.0 - abar_t);
    double signal_prev = std::sqrt(abar_prev);
    double noise_prev = std::sqrt(1.0 - abar_prev);
    Tensor z(z_t.z.shape());
    for (std::size_t i = 0; i < z.size(); ++i) {
        double z0_hat = (z_t.z[i] - noise_t * eps_pred[i]) * inv_signal;
        z[i] = signal_prev * z0_hat + noise_prev * eps_pred[i];
    }
    return {std::move(z), z_t.t - 1};
}

double ldm_loss(const Tensor& eps, const Tensor& eps_pred) {
    if (!eps.same_shape(eps_pred))
        throw std::invalid_argument("ldm_loss: shape mismatch " + shape_string(eps.shape()) +
                                    " vs " + shape_string(eps_pred.shape()));
    double s = 0.0;
    for (std::size_t i = 0; i < eps.size(); ++i) {
        double d = eps[i] - eps_pred[i];
        s += d * d;
    }
    return s / static_cast<double>(eps.size());
}

Tensor ldm_loss_grad(const Tensor& eps, const Tensor& eps_pred) {
    if (!eps.same_shape(eps_pred)) throw std::invalid_argument("ldm_loss_grad: shape mismatch");
    Tensor g(eps.shape());
    double scale = 2.0 / static_cast<double>(eps.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = scale * (eps_pred[i] - eps[i]);
    return g;
}

}  // namespace emoe
