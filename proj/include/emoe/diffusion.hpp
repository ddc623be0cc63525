#pragma once

#include <utility>
#include <vector>

#include "emoe/rng.hpp"
#include "emoe/tensor.hpp"

namespace emoe {

// Variance schedule for the forward corruption chain. betas[i] holds
// beta_{i+1} for timesteps t = 1..T; alpha_bar(t) is the cumulative product
// prod_{s<=t} (1 - beta_s) with alpha_bar(0) == 1.
struct NoiseSchedule {
    int steps = 0;
    std::vector<double> betas;
    std::vector<double> alpha_bars;

    double beta(int t) const;       // t in 1..T
    double alpha_bar(int t) const;  // t in 0..T
};

// Latent tensor z_t together with its position in the chain, t in [0, T].
struct LatentState {
    Tensor z;
    int t = 0;
};

// Linearly spaced betas in [beta_min, beta_max]; requires
// 0 < beta_min < beta_max < 1 and T >= 2.
NoiseSchedule build_schedule(int steps, double beta_min, double beta_max);

// One forward corruption step:
//   z_t = sqrt(1 - beta_t) z_{t-1} + sqrt(beta_t) eps,  eps ~ N(0, I).
LatentState forward_step(const LatentState& z_prev, const NoiseSchedule& schedule,
                         RngStream& stream);

// Closed-form marginal q(z_t | z_0):
//   z_t = sqrt(abar_t) z_0 + sqrt(1 - abar_t) eps.
// Returns the corrupted latent and the exact eps drawn (needed by the loss).
std::pair<LatentState, Tensor> forward_marginal(const LatentState& z0, int t,
                                                const NoiseSchedule& schedule, RngStream& stream);

// Deterministic DDIM update under the eps-prediction parameterization:
//   z0_hat  = (z_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t)
//   z_{t-1} = sqrt(abar_{t-1}) z0_hat + sqrt(1 - abar_{t-1}) eps_hat
LatentState ddim_step(const LatentState& z_t, const Tensor& eps_pred,
                      const NoiseSchedule& schedule);

// Mean squared error over all elements (mean, not sum).
double ldm_loss(const Tensor& eps, const Tensor& eps_pred);

// d loss / d eps_pred = 2 (eps_pred - eps) / numel.
Tensor ldm_loss_grad(const Tensor& eps, const Tensor& eps_pred);

}  // namespace emoe
