#include "vidguide/gradcheck.hpp"

#include <algorithm>
#include <functional>
#include <random>

#include "vidguide/errors.hpp"
#include "vidguide/guidance.hpp"
#include "vidguide/ops.hpp"

namespace vidguide {

namespace {

constexpr std::string_view kPrompt = "a man is walking and a dog is running";

Tensor normal_tensor(const Shape& shape, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, stddev);
    std::vector<double> data(shape_numel(shape));
    for (double& v : data) v = normal(rng);
    return Tensor(shape, std::move(data));
}

// One random mask per pair, shared by noun and verb, never all-in or all-out.
MaskSet random_masks(const SyntaxPairs& pairs, std::size_t frames, std::size_t gh, std::size_t gw,
                     std::mt19937_64& rng) {
    MaskSet masks{gh, gw, frames, {}};
    std::bernoulli_distribution coin(0.5);
    for (const NounVerbPair& p : pairs.pairs) {
        std::vector<double> cells(frames * gh * gw);
        for (std::size_t f = 0; f < frames; ++f) {
            for (std::size_t i = 0; i < gh * gw; ++i) cells[f * gh * gw + i] = coin(rng) ? 1.0 : 0.0;
            cells[f * gh * gw] = 1.0;
            cells[f * gh * gw + 1] = 0.0;
        }
        const Tensor m({frames, gh * gw}, std::move(cells));
        masks.by_token[p.noun] = m;
        masks.by_token[p.verb] = m;
    }
    return masks;
}

using MapBuilder = std::function<CAMapStack(const Var&)>;

std::vector<GradcheckEntry> check_losses(const MapBuilder& build, const Tensor& input, const MaskSet& masks,
                                         const SyntaxPairs& pairs, double step,
                                         const std::optional<std::vector<std::size_t>>& coords) {
    GuidanceConfig cfg;
    const NounVerbPair& first = pairs.pairs.front();
    const std::vector<std::size_t>& negatives = pairs.negatives.front();
    const std::vector<std::pair<std::string, std::function<Var(const CAMapStack&)>>> losses{
        {"L_fg", [&](const CAMapStack& ca) { return loss_fg(ca, masks, pairs, true, cfg.epsilon); }},
        {"L_bg", [&](const CAMapStack& ca) { return loss_bg(ca, masks, pairs, true, cfg.epsilon); }},
        {"L_sp", [&](const CAMapStack& ca) { return loss_sp(ca, masks, pairs, cfg); }},
        {"L_pos", [&](const CAMapStack& ca) { return loss_pos(ca, first, cfg.distance, cfg.epsilon); }},
        {"L_neg", [&](const CAMapStack& ca) { return loss_neg(ca, first, negatives, cfg.distance, cfg.epsilon); }},
        {"L_syt", [&](const CAMapStack& ca) { return loss_syt(ca, pairs, cfg); }},
    };
    std::vector<GradcheckEntry> out;
    for (const auto& [name, loss] : losses) {
        const GraphObjective objective = [&](const Var& x) { return loss(build(x)); };
        out.push_back({name, finite_diff_check(objective, input, step, coords)});
    }
    return out;
}

}  // namespace

std::string_view gradcheck_component_name(GradcheckComponent component) {
    switch (component) {
        case GradcheckComponent::Stub: return "stub";
        case GradcheckComponent::Model: return "model";
        case GradcheckComponent::Losses: return "losses";
    }
    return "stub";
}

GradcheckComponent parse_gradcheck_component(std::string_view name) {
    if (name == "stub") return GradcheckComponent::Stub;
    if (name == "model") return GradcheckComponent::Model;
    if (name == "losses") return GradcheckComponent::Losses;
    throw InputError("unknown gradcheck component '" + std::string(name) + "' (stub, model, losses)");
}

double GradcheckSuite::worst() const {
    double w = 0.0;
    for (const GradcheckEntry& e : entries) w = std::max(w, e.report.max_rel_error);
    return w;
}

GradcheckSuite run_gradcheck(GradcheckComponent component, unsigned long long seed) {
    std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ull + 17);
    const TokenSequence tokens = with_specials(parse_prompt(kPrompt), 12);
    const SyntaxPairs pairs = extract_pairs(tokens);
    const std::size_t L = tokens.size();

    GradcheckSuite suite{component, seed, {}};
    switch (component) {
        case GradcheckComponent::Stub: {
            const std::size_t F = 2, C = 2, H = 4, W = 4;
            const StubParams params = StubParams::random(C, L, 1.0, seed);
            const Tensor z = normal_tensor({F, C, H, W}, 1.0, rng);
            const MaskSet masks = random_masks(pairs, F, H, W, rng);
            // Smaller steps let cancellation noise dominate on near-zero gradient entries.
            suite.entries = check_losses([&](const Var& x) { return linear_attention_stub(x, params); }, z, masks,
                                         pairs, 3e-5, std::nullopt);
            break;
        }
        case GradcheckComponent::Losses: {
            const std::size_t F = 1, H = 2, W = 2;
            const Tensor logits = normal_tensor({F, H * W, L}, 1.0, rng);
            const MaskSet masks = random_masks(pairs, F, H, W, rng);
            suite.entries = check_losses(
                [&](const Var& x) { return CAMapStack{ops::softmax_lastdim(x), H, W, "logits"}; }, logits, masks,
                pairs, 3e-5, std::nullopt);
            break;
        }
        case GradcheckComponent::Model: {
            ToyModelConfig mc;
            mc.frames = 2;
            mc.latent_h = 8;
            mc.latent_w = 8;
            mc.hidden = 16;
            mc.embed_dim = 16;
            mc.head_dim = 8;
            mc.max_tokens = L;
            mc.seed = seed;
            const ToyDenoiser model(mc);
            const Tensor emb = model.encode_text(tokens);
            const Tensor z = normal_tensor(mc.latent_shape(), 1.0, rng);
            const int index = static_cast<int>(model.schedule().steps()) - 3;
            const std::size_t gh = model.capture_grid_h(mc.capture), gw = model.capture_grid_w(mc.capture);
            const MaskSet masks = random_masks(pairs, mc.frames, gh, gw, rng);
            std::vector<std::size_t> coords(z.size());
            for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(24);
            std::sort(coords.begin(), coords.end());
            suite.entries = check_losses(
                [&](const Var& x) { return model.denoise_step(x, index, emb).ca; }, z, masks, pairs, 1e-5, coords);
            break;
        }
    }
    return suite;
}

}  // namespace vidguide
