#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

#include "vidguide/autograd.hpp"

namespace vidguide {

// Scalar objective recorded on a fresh graph rooted at the given leaf.
using GraphObjective = std::function<Var(const Var& input)>;

struct FiniteDiffReport {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t coordinates_checked = 0;
};

// Central differences (f(z + h e_k) - f(z - h e_k)) / 2h against the reverse-mode
// gradient. Relative error per coordinate uses max(|analytic|, |numeric|, 1e-8)
// as the denominator. `coordinates` restricts the check to a subset.
FiniteDiffReport finite_diff_check(const GraphObjective& f, const Tensor& z, double step,
                                   const std::optional<std::vector<std::size_t>>& coordinates = std::nullopt);

}  // namespace vidguide
