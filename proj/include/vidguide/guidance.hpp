#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "vidguide/autograd.hpp"
#include "vidguide/ddim.hpp"
#include "vidguide/prompt.hpp"
#include "vidguide/spatial_prior.hpp"
#include "vidguide/toy_model.hpp"

namespace vidguide {

enum class DistanceKind { KlSym, KlFwd, Cosine };
enum class ContrastiveForm { Ratio, Sum };

std::string_view distance_name(DistanceKind kind);
DistanceKind parse_distance(std::string_view name);
std::string_view contrastive_name(ContrastiveForm form);
ContrastiveForm parse_contrastive(std::string_view name);

struct GuidanceConfig {
    std::size_t total_steps = 50;
    std::size_t t1 = 5;   // spatial guidance on steps 1..t1
    std::size_t t2 = 25;  // syntax guidance on steps t1+1..t2
    std::size_t iters_spatial = 10;
    std::size_t iters_syntax = 1;
    double lambda_fg = 1.0;
    double lambda_bg = 1.0;
    double lambda_sp = 30.0;
    double lambda_syt = 20.0;
    double alpha = 1.0;
    DistanceKind distance = DistanceKind::KlSym;
    ContrastiveForm contrastive = ContrastiveForm::Ratio;
    double epsilon = 1e-8;
    bool apply_spatial_to_verbs = true;
    bool neg_includes_verb = false;
    NegativeMode negative_mode = NegativeMode::Literal;

    void validate() const;
    bool unguided() const { return (lambda_sp == 0.0 || t1 == 0) && (lambda_syt == 0.0 || t2 <= t1); }
};

// Foreground term: per tracked token and frame, (1 - inside/total)^2, summed
// and divided by F. Tracked tokens are the pair nouns, plus verbs (with their
// noun's mask) when include_verbs is set.
Var loss_fg(const CAMapStack& ca, const MaskSet& masks, const SyntaxPairs& pairs, bool include_verbs,
            double epsilon = 1e-8);
// Background term: (outside/total)^2 with the same summation.
Var loss_bg(const CAMapStack& ca, const MaskSet& masks, const SyntaxPairs& pairs, bool include_verbs,
            double epsilon = 1e-8);
Var loss_sp(const CAMapStack& ca, const MaskSet& masks, const SyntaxPairs& pairs, const GuidanceConfig& config);

// Distance between maps along the last axis ([..., N] -> [...]). KL variants
// normalize (map + eps) over pixels first; cosine works on the raw maps.
Var dist(const Var& p_map, const Var& q_map, DistanceKind kind, double epsilon = 1e-8);

Var loss_pos(const CAMapStack& ca, const NounVerbPair& pair, DistanceKind kind, double epsilon = 1e-8);
// Sum over negatives of the frame-mean distance from the noun map. With
// include_verb the verb map is repelled from the same negatives.
Var loss_neg(const CAMapStack& ca, const NounVerbPair& pair, const std::vector<std::size_t>& negatives,
             DistanceKind kind, double epsilon = 1e-8, bool include_verb = false,
             std::vector<std::string>* warnings = nullptr);
Var loss_syt(const CAMapStack& ca, const SyntaxPairs& pairs, const GuidanceConfig& config);

// Fraction of token's attention mass inside its mask in one frame.
double in_box_ratio(const Tensor& ca, const MaskSet& masks, std::size_t token, std::size_t frame);

struct TraceRecord {
    std::size_t step = 0;
    std::size_t iteration = 0;
    std::string loss_name;
    double loss_value = 0.0;  // unweighted, before the update
    double weight = 0.0;
    double grad_norm = 0.0;
    std::map<std::size_t, double> in_box;  // noun index -> frame-mean in-box ratio

    friend bool operator==(const TraceRecord&, const TraceRecord&) = default;
};

using GuidanceTrace = std::vector<TraceRecord>;

std::string trace_to_jsonl(const GuidanceTrace& trace);
GuidanceTrace trace_from_jsonl(std::string_view text);

struct GuidanceUpdate {
    LatentState state;
    TraceRecord record;
};

// z' = z - alpha * weight * d(loss)/dz for the leaf z the loss was recorded on.
GuidanceUpdate guide_latent(const LatentState& state, const Var& z_leaf, const Var& loss, double weight,
                            double alpha, std::string_view loss_name, std::size_t step, std::size_t iteration);

struct CaRecord {
    std::size_t step = 0;
    std::size_t grid_h = 0;
    std::size_t grid_w = 0;
    Tensor attn;  // [F, N, L] from the evaluation that drove the sampler step
};

struct SamplingResult {
    TokenSequence tokens;
    SyntaxPairs pairs;
    MaskSet masks;
    std::vector<Tensor> trajectory;  // initial latent, then the latent after every step
    GuidanceTrace trace;
    std::vector<CaRecord> ca_records;  // one per step
    std::vector<std::string> warnings;

    const CaRecord& ca_at(std::size_t step) const;
};

// Priors are clipped, resampled to the model's frame count, rasterized at the
// capture grid and bound to the prompt's nouns before sampling starts.
SamplingResult run_guided_sampling(std::string_view prompt, const SpatialPriorSet& priors,
                                   const GuidanceConfig& config, const ToyDenoiser& model, unsigned long long seed);

}  // namespace vidguide
