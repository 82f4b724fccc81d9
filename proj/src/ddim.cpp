#include "vidguide/ddim.hpp"

#include <cmath>
#include <random>
#include <string>

#include "vidguide/errors.hpp"

namespace vidguide {

DdimSchedule::DdimSchedule(ScheduleConfig config) : config_(config) {
    if (config_.steps == 0 || config_.train_steps < config_.steps) {
        throw ContractError("schedule needs 1 <= steps <= train_steps");
    }
    alphas_cumprod_.resize(config_.train_steps);
    double prod = 1.0;
    const double n = static_cast<double>(config_.train_steps);
    for (std::size_t i = 0; i < config_.train_steps; ++i) {
        const double beta =
            config_.train_steps == 1
                ? config_.beta_start
                : config_.beta_start + (config_.beta_end - config_.beta_start) * static_cast<double>(i) / (n - 1.0);
        prod *= 1.0 - beta;
        alphas_cumprod_[i] = prod;
    }
}

void DdimSchedule::check_step(std::size_t step) const {
    if (step < 1 || step > config_.steps) {
        throw ContractError("sampler step " + std::to_string(step) + " outside [1, " + std::to_string(config_.steps) +
                            "]");
    }
}

std::size_t DdimSchedule::train_timestep(std::size_t step) const {
    check_step(step);
    const std::size_t stride = config_.train_steps / config_.steps;
    return (config_.steps - step) * stride;
}

double DdimSchedule::alpha_bar(std::size_t step) const { return alphas_cumprod_[train_timestep(step)]; }

double DdimSchedule::alpha_bar_next(std::size_t step) const {
    check_step(step);
    return step == config_.steps ? 1.0 : alpha_bar(step + 1);
}

std::size_t DdimSchedule::step_for_index(int timestep_index) const {
    if (timestep_index < 0 || timestep_index >= static_cast<int>(config_.steps)) {
        throw ContractError("timestep index " + std::to_string(timestep_index) + " outside [0, " +
                            std::to_string(config_.steps) + ")");
    }
    return config_.steps - static_cast<std::size_t>(timestep_index);
}

Tensor predict_x0(const Tensor& z, const Tensor& noise_pred, double alpha_bar) {
    if (z.shape() != noise_pred.shape()) {
        throw DimensionError("noise prediction " + shape_str(noise_pred.shape()) + " does not match latent " +
                             shape_str(z.shape()));
    }
    const double sa = std::sqrt(alpha_bar), sb = std::sqrt(1.0 - alpha_bar);
    std::vector<double> out(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) out[i] = (z[i] - sb * noise_pred[i]) / sa;
    return Tensor(z.shape(), std::move(out));
}

LatentState ddim_step(const LatentState& state, const Tensor& noise_pred, std::size_t step,
                      const DdimSchedule& schedule) {
    if (step < 1 || step > schedule.steps()) {
        throw ContractError("ddim_step: step " + std::to_string(step) + " out of range");
    }
    if (state.timestep_index != static_cast<int>(schedule.steps() - step)) {
        throw ContractError("ddim_step: latent is at index " + std::to_string(state.timestep_index) +
                            " but step " + std::to_string(step) + " was requested");
    }
    const Tensor x0 = predict_x0(state.z, noise_pred, schedule.alpha_bar(step));
    const double next = schedule.alpha_bar_next(step);
    const double sa = std::sqrt(next), sb = std::sqrt(1.0 - next);
    std::vector<double> out(x0.size());
    for (std::size_t i = 0; i < x0.size(); ++i) out[i] = sa * x0[i] + sb * noise_pred[i];
    return LatentState{Tensor(state.z.shape(), std::move(out)), state.timestep_index - 1};
}

LatentState initial_latent(const Shape& shape, std::size_t steps, unsigned long long seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> data(shape_numel(shape));
    for (double& v : data) v = normal(rng);
    return LatentState{Tensor(shape, std::move(data)), static_cast<int>(steps) - 1};
}

}  // namespace vidguide
