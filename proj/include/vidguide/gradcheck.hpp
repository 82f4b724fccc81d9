#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "vidguide/finite_diff.hpp"

namespace vidguide {

// stub: losses over the affine attention stub w.r.t. z.
// model: losses over a reduced toy denoiser w.r.t. z, on a coordinate subset.
// losses: losses w.r.t. the attention logits directly.
enum class GradcheckComponent { Stub, Model, Losses };

std::string_view gradcheck_component_name(GradcheckComponent component);
GradcheckComponent parse_gradcheck_component(std::string_view name);

struct GradcheckEntry {
    std::string loss;
    FiniteDiffReport report;
};

struct GradcheckSuite {
    GradcheckComponent component = GradcheckComponent::Stub;
    unsigned long long seed = 0;
    std::vector<GradcheckEntry> entries;  // L_fg, L_bg, L_sp, L_pos, L_neg, L_syt

    double worst() const;
    bool passed(double tolerance) const { return worst() <= tolerance; }
};

GradcheckSuite run_gradcheck(GradcheckComponent component, unsigned long long seed);

}  // namespace vidguide
