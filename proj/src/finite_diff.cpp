#include "vidguide/finite_diff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vidguide/errors.hpp"

namespace vidguide {
namespace {

double evaluate(const GraphObjective& f, const Tensor& z) {
    const double v = f(constant(z)).value().item();
    if (!std::isfinite(v)) throw NumericError("objective is non-finite during finite differencing");
    return v;
}

}  // namespace

FiniteDiffReport finite_diff_check(const GraphObjective& f, const Tensor& z, double step,
                                   const std::optional<std::vector<std::size_t>>& coordinates) {
    if (!(step > 0.0)) throw ContractError("finite_diff_check step must be positive");
    const Var input = leaf(z);
    const Var loss = f(input);
    if (!std::isfinite(loss.value().item())) throw NumericError("objective is non-finite at the base point");
    const Tensor analytic = backward(loss, input);

    std::vector<std::size_t> coords;
    if (coordinates) {
        coords = *coordinates;
    } else {
        coords.resize(z.size());
        std::iota(coords.begin(), coords.end(), std::size_t{0});
    }

    FiniteDiffReport report;
    std::vector<double> buf(z.vec());
    for (std::size_t k : coords) {
        if (k >= z.size()) throw ContractError("finite_diff_check coordinate out of range");
        const double orig = buf[k];
        buf[k] = orig + step;
        const double up = evaluate(f, Tensor(z.shape(), buf));
        buf[k] = orig - step;
        const double down = evaluate(f, Tensor(z.shape(), buf));
        buf[k] = orig;
        const double numeric = (up - down) / (2.0 * step);
        const double a = analytic[k];
        const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
        const double rel = std::abs(a - numeric) / denom;
        if (report.coordinates_checked == 0 || rel > report.max_rel_error) {
            report.max_rel_error = rel;
            report.worst_index = k;
            report.worst_analytic = a;
            report.worst_numeric = numeric;
        }
        ++report.coordinates_checked;
    }
    return report;
}

}  // namespace vidguide
