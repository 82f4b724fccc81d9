#pragma once

#include <cstddef>
#include <vector>

#include "vidguide/tensor.hpp"

namespace vidguide {

// Noisy latent z_t. timestep_index counts down: the state awaiting sampler
// step k (1 = noisiest) has index steps - k, and a fully denoised state has -1.
struct LatentState {
    Tensor z;
    int timestep_index = 0;
};

struct ScheduleConfig {
    std::size_t steps = 50;
    std::size_t train_steps = 1000;
    double beta_start = 1e-4;
    double beta_end = 2e-2;
};

// Deterministic (eta = 0) DDIM over a linear-beta training schedule,
// subsampled with stride train_steps / steps ("leading" spacing).
class DdimSchedule {
   public:
    explicit DdimSchedule(ScheduleConfig config = {});

    std::size_t steps() const { return config_.steps; }
    const ScheduleConfig& config() const { return config_; }

    // Sampler step k in [1, steps].
    std::size_t train_timestep(std::size_t step) const;
    double alpha_bar(std::size_t step) const;
    // Cumulative alpha after the step; 1 after the final step.
    double alpha_bar_next(std::size_t step) const;

    // Index form used by LatentState: index = steps - step.
    std::size_t step_for_index(int timestep_index) const;

   private:
    void check_step(std::size_t step) const;

    ScheduleConfig config_;
    std::vector<double> alphas_cumprod_;
};

Tensor predict_x0(const Tensor& z, const Tensor& noise_pred, double alpha_bar);

// One DDIM update for sampler step k; the state's index must equal steps - k.
LatentState ddim_step(const LatentState& state, const Tensor& noise_pred, std::size_t step,
                      const DdimSchedule& schedule);

LatentState initial_latent(const Shape& shape, std::size_t steps, unsigned long long seed);

}  // namespace vidguide
