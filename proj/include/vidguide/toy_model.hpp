#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "vidguide/autograd.hpp"
#include "vidguide/ddim.hpp"
#include "vidguide/prompt.hpp"

namespace vidguide {

// Which cross-attention block(s) feed the guidance losses.
enum class CaptureLayer { Down, Mid, Up, DownUp };

std::string_view capture_layer_name(CaptureLayer layer);
CaptureLayer parse_capture_layer(std::string_view name);

// Cross-attention maps A[F, N, L], N = grid_h * grid_w, softmax over L.
struct CAMapStack {
    Var attn;
    std::size_t grid_h = 0;
    std::size_t grid_w = 0;
    std::string layer_tag;

    std::size_t frames() const { return attn.shape()[0]; }
    std::size_t pixels() const { return attn.shape()[1]; }
    std::size_t tokens() const { return attn.shape()[2]; }
};

// Temporal attention [N, F, F], softmax over the last axis.
struct TAMap {
    Var attn;
};

// Spatial resolutions: the down and up cross-attention blocks run at half the
// latent grid, the mid block at a quarter.
struct ToyModelConfig {
    std::size_t frames = 8;
    std::size_t latent_channels = 4;
    std::size_t latent_h = 16;
    std::size_t latent_w = 16;
    std::size_t hidden = 32;
    std::size_t embed_dim = 32;
    std::size_t head_dim = 16;
    std::size_t heads = 2;
    std::size_t max_tokens = 16;
    double attn_gain = 6.0;       // scales cross-attention logits
    double residual_scale = 0.5;  // weight of the bounded network term in the x0 estimate
    double position_gain = 2.0;   // amplitude of the fixed smooth positional field
    std::size_t smoothing = 2;    // 3x3 mean-filter passes on the full and down-block features
    unsigned long long seed = 0;
    CaptureLayer capture = CaptureLayer::DownUp;
    ScheduleConfig schedule;

    void validate() const;
    Shape latent_shape() const { return {frames, latent_channels, latent_h, latent_w}; }
};

struct DenoiseResult {
    Var noise_pred;  // [F, C, H, W]
    CAMapStack ca;   // the configured capture
    CAMapStack ca_down;
    CAMapStack ca_mid;
    CAMapStack ca_up;
    TAMap ta;
};

// Randomly initialized (seeded) encoder-bottleneck-decoder with per-frame
// cross-attention at each level and one temporal attention block at the
// bottleneck. Weights are immutable after construction.
class ToyDenoiser {
   public:
    explicit ToyDenoiser(ToyModelConfig config);

    const ToyModelConfig& config() const { return config_; }
    const DdimSchedule& schedule() const { return schedule_; }

    // [max_tokens, embed_dim]; word rows are a seeded lookup keyed by token text.
    Tensor encode_text(const TokenSequence& words) const;

    DenoiseResult denoise_step(const Var& z, int timestep_index, const Tensor& text_emb) const;

    std::size_t capture_grid_h(CaptureLayer layer) const;
    std::size_t capture_grid_w(CaptureLayer layer) const;

   private:
    struct CrossAttention {
        std::vector<Var> wq;  // per head [hidden, head_dim]
        std::vector<Var> wk;  // per head [embed_dim, head_dim]
        std::vector<Var> wv;  // per head [embed_dim, hidden]
    };
    struct TemporalAttention {
        Var wq, wk, wv;
    };

    CrossAttention make_cross_attention(unsigned long long stream);
    Var cross_attend(const CrossAttention& block, const Var& x, const Var& emb, Var& ca_out) const;
    Var temporal_attend(const Var& x, Var& ta_out) const;
    Tensor time_embedding(std::size_t train_timestep) const;
    Tensor position_field(std::uint64_t stream) const;

    ToyModelConfig config_;
    DdimSchedule schedule_;
    Var w_in_, b_in_, w_time_, w_out_, position_;
    CrossAttention ca_down_, ca_mid_, ca_up_;
    TemporalAttention ta_;
};

// Affine attention A = softmax_L(to_pixels(z) W + b); gradients have a closed form.
struct StubParams {
    Tensor weight;  // [C, L]
    Tensor bias;    // [L]

    static StubParams random(std::size_t channels, std::size_t tokens, double scale, unsigned long long seed);
};

Var stub_logits(const Var& z, const StubParams& params);
CAMapStack linear_attention_stub(const Var& z, const StubParams& params);

}  // namespace vidguide
