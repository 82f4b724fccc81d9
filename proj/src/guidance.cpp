#include "vidguide/guidance.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "json.hpp"

#include "vidguide/errors.hpp"
#include "vidguide/ops.hpp"

namespace vidguide {

std::string_view distance_name(DistanceKind kind) {
    switch (kind) {
        case DistanceKind::KlSym:
            return "kl_sym";
        case DistanceKind::KlFwd:
            return "kl_fwd";
        case DistanceKind::Cosine:
            return "cosine";
    }
    return "kl_sym";
}

DistanceKind parse_distance(std::string_view name) {
    if (name == "kl_sym" || name == "KL_SYM") return DistanceKind::KlSym;
    if (name == "kl_fwd" || name == "KL_FWD") return DistanceKind::KlFwd;
    if (name == "cosine" || name == "COSINE") return DistanceKind::Cosine;
    throw InputError("unknown distance '" + std::string(name) + "'");
}

std::string_view contrastive_name(ContrastiveForm form) {
    return form == ContrastiveForm::Ratio ? "ratio" : "sum";
}

ContrastiveForm parse_contrastive(std::string_view name) {
    if (name == "ratio" || name == "RATIO") return ContrastiveForm::Ratio;
    if (name == "sum" || name == "SUM") return ContrastiveForm::Sum;
    throw InputError("unknown contrastive form '" + std::string(name) + "'");
}

void GuidanceConfig::validate() const {
    if (t1 > t2 || t2 > total_steps) throw InputError("need 0 <= t1 <= t2 <= total_steps");
    if (lambda_fg < 0 || lambda_bg < 0 || lambda_sp < 0 || lambda_syt < 0) {
        throw InputError("loss weights must be nonnegative");
    }
    if (!(alpha > 0)) throw InputError("alpha must be positive");
    if (!(epsilon > 0)) throw InputError("epsilon must be positive");
}

namespace {

void check_masks(const CAMapStack& ca, const MaskSet& masks) {
    if (masks.grid_h != ca.grid_h || masks.grid_w != ca.grid_w || masks.frames != ca.frames()) {
        throw DimensionError("masks are " + std::to_string(masks.frames) + "x" + std::to_string(masks.grid_h) + "x" +
                             std::to_string(masks.grid_w) + " but attention is " + std::to_string(ca.frames()) +
                             "x" + std::to_string(ca.grid_h) + "x" + std::to_string(ca.grid_w));
    }
}

std::vector<std::size_t> tracked_tokens(const SyntaxPairs& pairs, bool include_verbs) {
    std::vector<std::size_t> out;
    for (const NounVerbPair& p : pairs.pairs) {
        out.push_back(p.noun);
        if (include_verbs) out.push_back(p.verb);
    }
    return out;
}

Var token_map(const CAMapStack& ca, std::size_t token) { return ops::select_last(ca.attn, token); }

// Shared body of the two spatial terms; `outside` selects the background ratio.
Var spatial_term(const CAMapStack& ca, const MaskSet& masks, const SyntaxPairs& pairs, bool include_verbs,
                 double epsilon, bool outside) {
    check_masks(ca, masks);
    Var total_loss = constant(Tensor::scalar(0.0));
    for (std::size_t token : tracked_tokens(pairs, include_verbs)) {
        const Var a = token_map(ca, token);
        const Var total = ops::sum_lastdim(a);
        for (std::size_t f = 0; f < total.value().size(); ++f) {
            if (!(total.value()[f] > epsilon)) {
                throw DegenerateError("attention mass of token " + std::to_string(token) + " in frame " +
                                      std::to_string(f) + " is below epsilon");
            }
        }
        const Tensor& m = masks.at(token);
        Tensor weight = m;
        if (outside) {
            std::vector<double> inv(m.size());
            for (std::size_t i = 0; i < m.size(); ++i) inv[i] = 1.0 - m[i];
            weight = Tensor(m.shape(), std::move(inv));
        }
        const Var part = ops::sum_lastdim(ops::mul(a, constant(weight)));
        const Var ratio = ops::div(part, total);
        const Var term = outside ? ops::square(ratio) : ops::square(ops::add_scalar(ops::neg(ratio), 1.0));
        total_loss = ops::add(total_loss, ops::sum(term));
    }
    return ops::scale(total_loss, 1.0 / static_cast<double>(ca.frames()));
}

}  // namespace

Var loss_fg(const CAMapStack& ca, const MaskSet& masks, const SyntaxPairs& pairs, bool include_verbs,
            double epsilon) {
    return spatial_term(ca, masks, pairs, include_verbs, epsilon, false);
}

Var loss_bg(const CAMapStack& ca, const MaskSet& masks, const SyntaxPairs& pairs, bool include_verbs,
            double epsilon) {
    return spatial_term(ca, masks, pairs, include_verbs, epsilon, true);
}

Var loss_sp(const CAMapStack& ca, const MaskSet& masks, const SyntaxPairs& pairs, const GuidanceConfig& config) {
    const Var fg = loss_fg(ca, masks, pairs, config.apply_spatial_to_verbs, config.epsilon);
    const Var bg = loss_bg(ca, masks, pairs, config.apply_spatial_to_verbs, config.epsilon);
    return ops::add(ops::scale(fg, config.lambda_fg), ops::scale(bg, config.lambda_bg));
}

namespace {

Var normalize(const Var& x, double epsilon) {
    const Var shifted = ops::add_scalar(x, epsilon);
    return ops::div(shifted, ops::expand_last(ops::sum_lastdim(shifted), x.shape().back()));
}

Var kl(const Var& p, const Var& q) { return ops::sum_lastdim(ops::mul(p, ops::sub(ops::log(p), ops::log(q)))); }

void check_map(const Var& m, const char* which) {
    const std::size_t n = m.shape().back();
    const Tensor& v = m.value();
    for (std::size_t r = 0; r < v.size() / n; ++r) {
        bool any = false;
        for (std::size_t c = 0; c < n; ++c) {
            if (v[r * n + c] < 0.0) throw DegenerateError(std::string(which) + " map has negative entries");
            any = any || v[r * n + c] > 0.0;
        }
        if (!any) throw DegenerateError(std::string(which) + " map is all zeros");
    }
}

}  // namespace

Var dist(const Var& p_map, const Var& q_map, DistanceKind kind, double epsilon) {
    if (p_map.shape() != q_map.shape() || p_map.shape().empty()) {
        throw DimensionError("dist: shapes " + shape_str(p_map.shape()) + " and " + shape_str(q_map.shape()));
    }
    check_map(p_map, "first");
    check_map(q_map, "second");
    switch (kind) {
        case DistanceKind::KlFwd:
            return kl(normalize(p_map, epsilon), normalize(q_map, epsilon));
        case DistanceKind::KlSym: {
            const Var p = normalize(p_map, epsilon), q = normalize(q_map, epsilon);
            return ops::scale(ops::add(kl(p, q), kl(q, p)), 0.5);
        }
        case DistanceKind::Cosine: {
            const Var dot = ops::sum_lastdim(ops::mul(p_map, q_map));
            const Var np = ops::sqrt(ops::sum_lastdim(ops::square(p_map)));
            const Var nq = ops::sqrt(ops::sum_lastdim(ops::square(q_map)));
            return ops::add_scalar(ops::neg(ops::div(dot, ops::mul(np, nq))), 1.0);
        }
    }
    throw ContractError("unhandled distance kind");
}

Var loss_pos(const CAMapStack& ca, const NounVerbPair& pair, DistanceKind kind, double epsilon) {
    return ops::mean(dist(token_map(ca, pair.noun), token_map(ca, pair.verb), kind, epsilon));
}

Var loss_neg(const CAMapStack& ca, const NounVerbPair& pair, const std::vector<std::size_t>& negatives,
             DistanceKind kind, double epsilon, bool include_verb, std::vector<std::string>* warnings) {
    Var total = constant(Tensor::scalar(0.0));
    if (negatives.empty()) {
        if (warnings) warnings->push_back("pair (" + std::to_string(pair.noun) + ", " + std::to_string(pair.verb) +
                                          ") has no negatives");
        return total;
    }
    const Var noun = token_map(ca, pair.noun);
    const Var verb = include_verb ? token_map(ca, pair.verb) : Var();
    for (std::size_t u : negatives) {
        const Var neg = token_map(ca, u);
        total = ops::add(total, ops::mean(dist(noun, neg, kind, epsilon)));
        if (include_verb) total = ops::add(total, ops::mean(dist(verb, neg, kind, epsilon)));
    }
    return total;
}

Var loss_syt(const CAMapStack& ca, const SyntaxPairs& pairs, const GuidanceConfig& config) {
    if (pairs.pairs.empty()) throw ContractError("loss_syt needs at least one pair");
    Var total = constant(Tensor::scalar(0.0));
    for (std::size_t k = 0; k < pairs.pairs.size(); ++k) {
        const NounVerbPair& p = pairs.pairs[k];
        const Var pos = loss_pos(ca, p, config.distance, config.epsilon);
        const Var neg = loss_neg(ca, p, pairs.negatives.at(k), config.distance, config.epsilon,
                                 config.neg_includes_verb);
        const Var denom = ops::add(pos, neg);
        if (!(denom.value().item() > config.epsilon)) {
            throw DegenerateError("pair (" + std::to_string(p.noun) + ", " + std::to_string(p.verb) +
                                  ") has L_pos + L_neg below epsilon");
        }
        const Var term =
            config.contrastive == ContrastiveForm::Ratio ? ops::clamp(ops::div(pos, denom), 0.0, 1.0) : denom;
        total = ops::add(total, term);
    }
    return total;
}

double in_box_ratio(const Tensor& ca, const MaskSet& masks, std::size_t token, std::size_t frame) {
    if (ca.rank() != 3) throw DimensionError("in_box_ratio expects [F, N, L], got " + shape_str(ca.shape()));
    const std::size_t n = ca.dim(1), l = ca.dim(2);
    if (frame >= ca.dim(0) || token >= l) throw ContractError("in_box_ratio index out of range");
    const Tensor& m = masks.at(token);
    if (m.shape() != Shape{ca.dim(0), n}) throw DimensionError("mask grid does not match attention grid");
    double inside = 0.0, total = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
        const double a = ca[(frame * n + p) * l + token];
        inside += a * m[frame * n + p];
        total += a;
    }
    if (!(total > 0.0)) {
        throw DegenerateError("token " + std::to_string(token) + " has no attention mass in frame " +
                              std::to_string(frame));
    }
    return inside / total;
}

std::string trace_to_jsonl(const GuidanceTrace& trace) {
    std::string out;
    for (const TraceRecord& r : trace) {
        nlohmann::json j;
        j["step"] = r.step;
        j["iteration"] = r.iteration;
        j["loss"] = r.loss_name;
        j["value"] = r.loss_value;
        j["weight"] = r.weight;
        j["grad_norm"] = r.grad_norm;
        nlohmann::json boxes = nlohmann::json::object();
        for (const auto& [token, ratio] : r.in_box) boxes[std::to_string(token)] = ratio;
        j["in_box"] = std::move(boxes);
        out += j.dump() + "\n";
    }
    return out;
}

GuidanceTrace trace_from_jsonl(std::string_view text) {
    GuidanceTrace trace;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            TraceRecord r;
            r.step = j.at("step").get<std::size_t>();
            r.iteration = j.at("iteration").get<std::size_t>();
            r.loss_name = j.at("loss").get<std::string>();
            r.loss_value = j.at("value").get<double>();
            r.weight = j.at("weight").get<double>();
            r.grad_norm = j.at("grad_norm").get<double>();
            for (const auto& [k, v] : j.at("in_box").items()) r.in_box[std::stoul(k)] = v.get<double>();
            trace.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(lineno, std::string("bad trace record: ") + e.what());
        }
    }
    return trace;
}

GuidanceUpdate guide_latent(const LatentState& state, const Var& z_leaf, const Var& loss, double weight,
                            double alpha, std::string_view loss_name, std::size_t step, std::size_t iteration) {
    const std::string where = std::string(loss_name) + " at step " + std::to_string(step);
    Tensor grad;
    try {
        grad = backward(loss, z_leaf);
    } catch (const NumericError& e) {
        throw NumericError("gradient of " + where + ": " + e.what());
    }
    if (!grad.all_finite() || !std::isfinite(loss.value().item())) {
        throw NumericError("non-finite gradient of " + where);
    }
    const double rate = alpha * weight;
    std::vector<double> next(state.z.size());
    for (std::size_t i = 0; i < next.size(); ++i) next[i] = state.z[i] - rate * grad[i];
    GuidanceUpdate out;
    out.state = LatentState{Tensor(state.z.shape(), std::move(next)), state.timestep_index};
    out.record.step = step;
    out.record.iteration = iteration;
    out.record.loss_name = std::string(loss_name);
    out.record.loss_value = loss.value().item();
    out.record.weight = weight;
    out.record.grad_norm = grad.l2_norm();
    return out;
}

const CaRecord& SamplingResult::ca_at(std::size_t step) const {
    for (const CaRecord& r : ca_records) {
        if (r.step == step) return r;
    }
    throw ContractError("no attention record for step " + std::to_string(step));
}

namespace {

std::map<std::size_t, double> noun_in_box(const Tensor& ca, const MaskSet& masks, const SyntaxPairs& pairs) {
    std::map<std::size_t, double> out;
    for (const NounVerbPair& p : pairs.pairs) {
        double s = 0.0;
        for (std::size_t f = 0; f < ca.dim(0); ++f) s += in_box_ratio(ca, masks, p.noun, f);
        out[p.noun] = s / static_cast<double>(ca.dim(0));
    }
    return out;
}

}  // namespace

SamplingResult run_guided_sampling(std::string_view prompt, const SpatialPriorSet& priors,
                                   const GuidanceConfig& config, const ToyDenoiser& model, unsigned long long seed) {
    config.validate();
    const ToyModelConfig& mc = model.config();
    const DdimSchedule& schedule = model.schedule();
    if (config.total_steps != schedule.steps()) {
        throw InputError("guidance expects " + std::to_string(config.total_steps) + " steps but the sampler has " +
                         std::to_string(schedule.steps()));
    }

    SamplingResult result;
    result.tokens = parse_prompt(prompt);
    result.pairs = extract_pairs(result.tokens, config.negative_mode);
    const Tensor emb = model.encode_text(result.tokens);

    SpatialPriorSet set = clip_to_frame(priors);
    if (set.frame_count != mc.frames) set = resample_frames(set, mc.frames);
    const SubjectMasks subject_masks =
        rasterize_masks(set, model.capture_grid_h(mc.capture), model.capture_grid_w(mc.capture));
    result.warnings = set.warnings;
    result.warnings.insert(result.warnings.end(), subject_masks.warnings.begin(), subject_masks.warnings.end());
    result.masks = bind_masks(subject_masks, set, result.tokens, result.pairs);

    LatentState state = initial_latent(mc.latent_shape(), schedule.steps(), seed);
    result.trajectory.push_back(state.z);

    for (std::size_t step = 1; step <= schedule.steps(); ++step) {
        const bool spatial = step <= config.t1 && config.lambda_sp > 0.0;
        const bool syntax = step > config.t1 && step <= config.t2 && config.lambda_syt > 0.0;
        const std::size_t iters = spatial ? config.iters_spatial : (syntax ? config.iters_syntax : 0);
        for (std::size_t it = 1; it <= iters; ++it) {
            try {
                const Var z = leaf(state.z);
                const DenoiseResult out = model.denoise_step(z, state.timestep_index, emb);
                const Var loss = spatial ? loss_sp(out.ca, result.masks, result.pairs, config)
                                         : loss_syt(out.ca, result.pairs, config);
                GuidanceUpdate upd = guide_latent(state, z, loss, spatial ? config.lambda_sp : config.lambda_syt,
                                                  config.alpha, spatial ? "L_sp" : "L_syt", step, it);
                upd.record.in_box = noun_in_box(out.ca.attn.value(), result.masks, result.pairs);
                state = std::move(upd.state);
                result.trace.push_back(std::move(upd.record));
            } catch (const Error& e) {
                throw Error(e.kind(), "step " + std::to_string(step) + " iteration " + std::to_string(it) + ": " +
                                          e.what());
            }
        }
        const DenoiseResult out = model.denoise_step(constant(state.z), state.timestep_index, emb);
        result.ca_records.push_back(CaRecord{step, out.ca.grid_h, out.ca.grid_w, out.ca.attn.value()});
        state = ddim_step(state, out.noise_pred.value(), step, schedule);
        result.trajectory.push_back(state.z);
    }
    return result;
}

}  // namespace vidguide
