#include "vidguide/toy_model.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

#include "vidguide/errors.hpp"
#include "vidguide/ops.hpp"

namespace vidguide {

std::string_view capture_layer_name(CaptureLayer layer) {
    switch (layer) {
        case CaptureLayer::Down:
            return "down";
        case CaptureLayer::Mid:
            return "mid";
        case CaptureLayer::Up:
            return "up";
        case CaptureLayer::DownUp:
            return "down+up";
    }
    return "down+up";
}

CaptureLayer parse_capture_layer(std::string_view name) {
    if (name == "down") return CaptureLayer::Down;
    if (name == "mid") return CaptureLayer::Mid;
    if (name == "up") return CaptureLayer::Up;
    if (name == "down+up" || name == "downup") return CaptureLayer::DownUp;
    throw InputError("unknown capture layer '" + std::string(name) + "'");
}

void ToyModelConfig::validate() const {
    if (frames < 1 || latent_channels < 1 || hidden < 1 || embed_dim < 1 || head_dim < 1 || heads < 1) {
        throw InputError("model dimensions must be positive");
    }
    if (latent_h < 4 || latent_w < 4 || latent_h % 4 || latent_w % 4) {
        throw InputError("latent grid must be divisible by 4 to host the down/mid/up levels");
    }
    if (max_tokens < 3) throw InputError("max_tokens must leave room for <bos> and <eos>");
    if (hidden % 2) throw InputError("hidden width must be even for the time embedding");
    if (!(attn_gain > 0.0) || !(position_gain >= 0.0) || !(residual_scale >= 0.0)) {
        throw InputError("attn_gain must be positive and position_gain, residual_scale non-negative");
    }
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

Tensor random_normal(Shape shape, double stddev, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, stddev);
    std::vector<double> data(shape_numel(shape));
    for (double& v : data) v = normal(rng);
    return Tensor(std::move(shape), std::move(data));
}

}  // namespace

ToyDenoiser::ToyDenoiser(ToyModelConfig config) : config_(std::move(config)), schedule_(config_.schedule) {
    config_.validate();
    const std::uint64_t base = splitmix64(config_.seed);
    const double c = static_cast<double>(config_.latent_channels);
    const double hid = static_cast<double>(config_.hidden);
    w_in_ = constant(random_normal({config_.latent_channels, config_.hidden}, 1.0 / std::sqrt(c), base ^ 1));
    b_in_ = constant(random_normal({config_.hidden}, 0.1, base ^ 2));
    w_time_ = constant(random_normal({config_.hidden, config_.hidden}, 0.2 / std::sqrt(hid), base ^ 3));
    w_out_ = constant(random_normal({config_.hidden, config_.latent_channels}, 1.0 / std::sqrt(hid), base ^ 4));
    position_ = constant(position_field(base ^ 5));
    ca_down_ = make_cross_attention(base ^ 0x100);
    ca_mid_ = make_cross_attention(base ^ 0x200);
    ca_up_ = make_cross_attention(base ^ 0x300);
    ta_.wq = constant(random_normal({config_.hidden, config_.head_dim}, 1.0 / std::sqrt(hid), base ^ 0x401));
    ta_.wk = constant(random_normal({config_.hidden, config_.head_dim}, 1.0 / std::sqrt(hid), base ^ 0x402));
    ta_.wv = constant(random_normal({config_.hidden, config_.hidden}, 0.5 / std::sqrt(hid), base ^ 0x403));
}

// Random Fourier features with a few cycles across the latent, one per channel.
Tensor ToyDenoiser::position_field(std::uint64_t stream) const {
    const std::size_t H = config_.latent_h, W = config_.latent_w, C = config_.hidden;
    std::mt19937_64 rng(stream);
    std::normal_distribution<double> freq(0.0, 1.5);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    std::vector<double> data(H * W * C);
    for (std::size_t c = 0; c < C; ++c) {
        const double fy = 2.0 * std::numbers::pi * freq(rng) / static_cast<double>(H);
        const double fx = 2.0 * std::numbers::pi * freq(rng) / static_cast<double>(W);
        const double ph = phase(rng);
        for (std::size_t y = 0; y < H; ++y) {
            for (std::size_t x = 0; x < W; ++x) {
                data[(y * W + x) * C + c] = config_.position_gain * std::sqrt(2.0) *
                                            std::cos(fy * static_cast<double>(y) + fx * static_cast<double>(x) + ph);
            }
        }
    }
    return Tensor({H * W, C}, std::move(data));
}

ToyDenoiser::CrossAttention ToyDenoiser::make_cross_attention(unsigned long long stream) {
    CrossAttention block;
    const double hid = static_cast<double>(config_.hidden);
    const double emb = static_cast<double>(config_.embed_dim);
    for (std::size_t h = 0; h < config_.heads; ++h) {
        const std::uint64_t s = splitmix64(stream * 131 + h);
        block.wq.push_back(constant(random_normal({config_.hidden, config_.head_dim}, 1.0 / std::sqrt(hid), s ^ 1)));
        block.wk.push_back(constant(random_normal({config_.embed_dim, config_.head_dim}, 1.0 / std::sqrt(emb), s ^ 2)));
        block.wv.push_back(constant(random_normal({config_.embed_dim, config_.hidden}, 0.5 / std::sqrt(emb), s ^ 3)));
    }
    return block;
}

Tensor ToyDenoiser::encode_text(const TokenSequence& words) const {
    TokenSequence seq;
    for (const Token& t : words) {
        if (t.tag != Tag::Special) seq.push_back(t);
    }
    seq = with_specials(std::move(seq), config_.max_tokens);
    const std::size_t d = config_.embed_dim;
    std::vector<double> data;
    data.reserve(seq.size() * d);
    for (const Token& t : seq) {
        const Tensor row = random_normal({d}, 1.0, splitmix64(fnv1a(t.text) ^ splitmix64(config_.seed ^ 0xE11Bull)));
        double norm2 = 0.0;
        for (std::size_t i = 0; i < d; ++i) norm2 += row[i] * row[i];
        const double rescale = std::sqrt(static_cast<double>(d) / norm2);
        for (std::size_t i = 0; i < d; ++i) data.push_back(row[i] * rescale);
    }
    return Tensor({seq.size(), d}, std::move(data));
}

Tensor ToyDenoiser::time_embedding(std::size_t train_timestep) const {
    const std::size_t half = config_.hidden / 2;
    std::vector<double> feats(config_.hidden);
    for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
        feats[i] = std::sin(static_cast<double>(train_timestep) * freq);
        feats[half + i] = std::cos(static_cast<double>(train_timestep) * freq);
    }
    const Var row = constant(Tensor({1, config_.hidden}, std::move(feats)));
    return ops::matmul(row, w_time_).value().reshaped({config_.hidden});
}

Var ToyDenoiser::cross_attend(const CrossAttention& block, const Var& x, const Var& emb, Var& ca_out) const {
    const double logit_scale = config_.attn_gain / std::sqrt(static_cast<double>(config_.head_dim));
    Var out, ca;
    for (std::size_t h = 0; h < config_.heads; ++h) {
        const Var q = ops::matmul(x, block.wq[h]);
        const Var k = ops::matmul(emb, block.wk[h]);
        const Var attn = ops::softmax_lastdim(ops::scale(ops::matmul(q, ops::transpose_last2(k)), logit_scale));
        const Var v = ops::matmul(emb, block.wv[h]);
        const Var head_out = ops::matmul(attn, v);
        out = out ? ops::add(out, head_out) : head_out;
        ca = ca ? ops::add(ca, attn) : attn;
    }
    const double inv = 1.0 / static_cast<double>(config_.heads);
    ca_out = config_.heads == 1 ? ca : ops::scale(ca, inv);
    return config_.heads == 1 ? out : ops::scale(out, inv);
}

Var ToyDenoiser::temporal_attend(const Var& x, Var& ta_out) const {
    const double logit_scale = 1.0 / std::sqrt(static_cast<double>(config_.head_dim));
    const Var xt = ops::swap_leading(x);  // [N, F, hidden]
    const Var q = ops::matmul(xt, ta_.wq);
    const Var k = ops::matmul(xt, ta_.wk);
    ta_out = ops::softmax_lastdim(ops::scale(ops::matmul(q, ops::transpose_last2(k)), logit_scale));
    const Var v = ops::matmul(xt, ta_.wv);
    return ops::swap_leading(ops::matmul(ta_out, v));
}

DenoiseResult ToyDenoiser::denoise_step(const Var& z, int timestep_index, const Tensor& text_emb) const {
    if (z.shape() != config_.latent_shape()) {
        throw DimensionError("latent shape " + shape_str(z.shape()) + " does not match model " +
                             shape_str(config_.latent_shape()));
    }
    if (text_emb.shape() != Shape{config_.max_tokens, config_.embed_dim}) {
        throw DimensionError("text embedding shape " + shape_str(text_emb.shape()) + " does not match model");
    }
    const std::size_t step = schedule_.step_for_index(timestep_index);
    const std::size_t H = config_.latent_h, W = config_.latent_w;
    const Var emb = constant(text_emb);
    const Var temb = constant(time_embedding(schedule_.train_timestep(step)));

    DenoiseResult res;
    Var ca_down, ca_mid, ca_up, ta;
    const Var x = ops::to_pixels(z);
    auto smooth = [&](Var v, std::size_t h, std::size_t w) {
        for (std::size_t i = 0; i < config_.smoothing; ++i) v = ops::smooth3(v, h, w);
        return v;
    };
    const Var h0 = smooth(ops::silu(ops::add(ops::add(ops::add(ops::matmul(x, w_in_), position_), b_in_), temb)), H, W);
    Var d = smooth(ops::avgpool2(h0, H, W), H / 2, W / 2);
    d = ops::add(d, cross_attend(ca_down_, d, emb, ca_down));
    Var m = ops::avgpool2(d, H / 2, W / 2);
    m = ops::add(m, cross_attend(ca_mid_, m, emb, ca_mid));
    m = ops::add(m, temporal_attend(m, ta));
    Var u = ops::add(ops::upsample2(m, H / 4, W / 4), d);
    u = ops::add(u, cross_attend(ca_up_, u, emb, ca_up));
    const Var o = ops::add(ops::upsample2(u, H / 2, W / 2), h0);
    const Var r = ops::from_pixels(ops::matmul(ops::silu(o), w_out_), H, W);

    // x0 = sqrt(ab) z + scale * tanh(r): the exact denoiser for a unit Gaussian
    // latent prior plus a bounded network correction, written as eps.
    const double ab = schedule_.alpha_bar(step);
    const double correction = -config_.residual_scale * std::sqrt(ab / (1.0 - ab));
    res.noise_pred = ops::add(ops::scale(z, std::sqrt(1.0 - ab)), ops::scale(ops::tanh(r), correction));
    res.ca_down = CAMapStack{ca_down, H / 2, W / 2, "down"};
    res.ca_mid = CAMapStack{ca_mid, H / 4, W / 4, "mid"};
    res.ca_up = CAMapStack{ca_up, H / 2, W / 2, "up"};
    res.ta = TAMap{ta};
    switch (config_.capture) {
        case CaptureLayer::Down:
            res.ca = res.ca_down;
            break;
        case CaptureLayer::Mid:
            res.ca = res.ca_mid;
            break;
        case CaptureLayer::Up:
            res.ca = res.ca_up;
            break;
        case CaptureLayer::DownUp:
            res.ca = CAMapStack{ops::scale(ops::add(ca_down, ca_up), 0.5), H / 2, W / 2, "down+up"};
            break;
    }
    return res;
}

std::size_t ToyDenoiser::capture_grid_h(CaptureLayer layer) const {
    return layer == CaptureLayer::Mid ? config_.latent_h / 4 : config_.latent_h / 2;
}

std::size_t ToyDenoiser::capture_grid_w(CaptureLayer layer) const {
    return layer == CaptureLayer::Mid ? config_.latent_w / 4 : config_.latent_w / 2;
}

StubParams StubParams::random(std::size_t channels, std::size_t tokens, double scale, unsigned long long seed) {
    const std::uint64_t s = splitmix64(seed ^ 0x57ABull);
    return StubParams{random_normal({channels, tokens}, scale, s ^ 1), random_normal({tokens}, scale, s ^ 2)};
}

Var stub_logits(const Var& z, const StubParams& params) {
    return ops::add(ops::matmul(ops::to_pixels(z), constant(params.weight)), constant(params.bias));
}

CAMapStack linear_attention_stub(const Var& z, const StubParams& params) {
    if (z.shape().size() != 4) throw DimensionError("stub expects [F, C, H, W], got " + shape_str(z.shape()));
    if (params.weight.shape() != Shape{z.shape()[1], params.bias.size()}) {
        throw DimensionError("stub weight " + shape_str(params.weight.shape()) + " does not match latent channels");
    }
    return CAMapStack{ops::softmax_lastdim(stub_logits(z, params)), z.shape()[2], z.shape()[3], "stub"};
}

}  // namespace vidguide
