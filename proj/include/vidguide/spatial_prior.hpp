#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "vidguide/prompt.hpp"
#include "vidguide/tensor.hpp"

namespace vidguide {

inline constexpr int kDefaultFrameWidthPx = 576;
inline constexpr int kDefaultFrameHeightPx = 320;

// Top-left x/y plus width/height in pixels; y grows downward.
struct Box {
    int x = 0;
    int y = 0;
    int w = 0;
    int h = 0;

    int right() const { return x + w; }
    int bottom() const { return y + h; }
    friend bool operator==(const Box&, const Box&) = default;
};

struct BoxTrajectory {
    int subject_id = 0;
    std::string name;
    std::vector<Box> boxes;  // one per frame

    friend bool operator==(const BoxTrajectory&, const BoxTrajectory&) = default;
};

struct SpatialPriorSet {
    int frame_width_px = kDefaultFrameWidthPx;
    int frame_height_px = kDefaultFrameHeightPx;
    std::size_t frame_count = 0;
    std::vector<BoxTrajectory> trajectories;
    std::string background_keyword;
    std::string caption;
    std::vector<std::string> warnings;  // not part of equality

    friend bool operator==(const SpatialPriorSet& a, const SpatialPriorSet& b) {
        return a.frame_width_px == b.frame_width_px && a.frame_height_px == b.frame_height_px &&
               a.frame_count == b.frame_count && a.trajectories == b.trajectories &&
               a.background_keyword == b.background_keyword && a.caption == b.caption;
    }
};

// One LLM layout block: optional "Caption:" / "Reasoning:" lines, "Frame k: [...]"
// lines with k = 1, 2, ..., and a closing "Background keyword:" line.
SpatialPriorSet parse_llm_boxes(std::string_view text);
// Several blocks separated by their "Background keyword:" lines.
std::vector<SpatialPriorSet> parse_llm_examples(std::string_view text);
std::string serialize_llm_boxes(const SpatialPriorSet& set);

// Structured form: {"frame_size": [W, H], "frames": [[{"id", "name", "box"}]], "background"}.
SpatialPriorSet parse_structured_boxes(std::string_view json_text);
std::string serialize_structured_boxes(const SpatialPriorSet& set);

// Dispatches on the first non-space character ('{' means structured).
SpatialPriorSet parse_box_text(std::string_view text);
SpatialPriorSet load_box_file(const std::string& path);

enum class ViolationKind { OutOfFrame, Velocity, Degenerate };
std::string_view violation_name(ViolationKind kind);

struct Violation {
    ViolationKind kind;
    int subject_id = 0;
    std::size_t frame = 0;  // 1-based
    std::string detail;
};

struct ValidationLimits {
    double max_step_px = 60.0;
    bool allow_offscreen = false;
    int offscreen_tolerance_px = 0;
};

std::vector<Violation> validate_trajectories(const SpatialPriorSet& set, const ValidationLimits& limits);

// Clamp every box to the frame; each change is appended to `warnings`.
SpatialPriorSet clip_to_frame(SpatialPriorSet set);

// Per-corner linear interpolation onto target_frames samples, rounded to the
// nearest pixel. Endpoints are reproduced exactly.
SpatialPriorSet resample_frames(const SpatialPriorSet& set, std::size_t target_frames);

struct SubjectMasks {
    std::size_t grid_h = 0;
    std::size_t grid_w = 0;
    std::size_t frames = 0;
    std::map<int, std::vector<std::vector<std::uint8_t>>> masks;  // subject -> frame -> cells
    std::vector<std::string> warnings;
};

// Cell (r, c) is set iff its center lies in the half-open box [x, x+w) x [y, y+h).
SubjectMasks rasterize_masks(const SpatialPriorSet& set, std::size_t grid_h, std::size_t grid_w);
std::vector<std::uint8_t> rasterize_box(const Box& box, int frame_w, int frame_h, std::size_t grid_h,
                                        std::size_t grid_w);

// Binary masks per prompt token at attention resolution. Each tensor is
// [F, grid_h * grid_w] with entries in {0, 1}.
struct MaskSet {
    std::size_t grid_h = 0;
    std::size_t grid_w = 0;
    std::size_t frames = 0;
    std::map<std::size_t, Tensor> by_token;

    const Tensor& at(std::size_t token) const;
};

// Nouns take the trajectory whose name mentions them (singular/plural), else
// the trajectory at the pair's position. Verbs reuse their noun's masks.
MaskSet bind_masks(const SubjectMasks& masks, const SpatialPriorSet& set, const TokenSequence& tokens,
                   const SyntaxPairs& pairs);

}  // namespace vidguide
