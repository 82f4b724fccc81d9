#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "vidguide/guidance.hpp"
#include "vidguide/settings.hpp"

namespace vidguide {

// Cells at or above rel_threshold * max (and above zero) are foreground;
// returns the number of 4-connected foreground regions.
std::size_t count_components(const Tensor& ca, std::size_t grid_h, std::size_t grid_w, std::size_t token,
                             std::size_t frame, double rel_threshold = 0.5);

// Frame-mean distance between a pair's noun and verb maps. Lower is better.
double verb_noun_alignment(const Tensor& ca, const NounVerbPair& pair, DistanceKind kind = DistanceKind::KlSym,
                           double epsilon = 1e-8);

// Binary PGM (P5, maxval 255), min-max normalized; a constant map is all 0.
std::string heatmap_pgm(const Tensor& ca, std::size_t grid_h, std::size_t grid_w, std::size_t token,
                        std::size_t frame, std::size_t upscale);
void render_heatmap(const Tensor& ca, std::size_t grid_h, std::size_t grid_w, std::size_t token, std::size_t frame,
                    const std::string& out_path, std::size_t upscale);

struct InBoxEntry {
    std::size_t token = 0;
    std::string word;
    std::size_t frame = 0;
    double ratio = 0.0;
    friend bool operator==(const InBoxEntry&, const InBoxEntry&) = default;
};

struct AlignmentEntry {
    std::size_t noun = 0;
    std::size_t verb = 0;
    std::string pair;  // "noun/verb"
    double score = 0.0;
    friend bool operator==(const AlignmentEntry&, const AlignmentEntry&) = default;
};

struct ComponentEntry {
    std::size_t noun = 0;
    std::string word;
    std::vector<std::size_t> per_frame;
    friend bool operator==(const ComponentEntry&, const ComponentEntry&) = default;
};

// Attention-level measurements of one run at one denoising step.
struct MetricsReport {
    std::string run;
    unsigned long long seed = 0;
    std::size_t step = 0;
    std::vector<std::pair<std::string, std::string>> config;
    std::vector<InBoxEntry> in_box;  // pair nouns and verbs, every frame
    std::vector<AlignmentEntry> alignment;
    std::vector<ComponentEntry> components;
    double mean_in_box = 0.0;  // over nouns and frames
    double mean_alignment = 0.0;
    double mean_components = 0.0;

    friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

MetricsReport measure_step(const SamplingResult& result, std::size_t step, std::string run = {},
                           unsigned long long seed = 0, double epsilon = 1e-8);

std::string report_to_jsonl(const std::vector<MetricsReport>& reports);
std::vector<MetricsReport> report_from_jsonl(std::string_view text);
std::string report_table(const std::vector<MetricsReport>& reports);

struct AblationAxis {
    std::string key;  // a settings key; "layer" is accepted for model.capture
    std::vector<std::string> values;
};

enum class SweepMode { OneAtATime, Cartesian };

// "key = v1, v2, ..." lines; '#' comments.
std::vector<AblationAxis> parse_ablation_grid(std::string_view text);
std::vector<AblationAxis> default_ablation_grid();

struct AblationRow {
    std::size_t config_index = 0;  // position in sweep order
    std::string label;             // "base" or "key=value[,key=value]"
    unsigned long long seed = 0;
    bool skipped = false;
    std::string reason;
    // Measured at the base schedule's t1 and t2 steps and at the final step so
    // rows that move t1 or t2 stay comparable.
    double in_box_t1 = 0.0;
    double loss_sp_first = 0.0;  // first spatial trace record, 0 when there is none
    double loss_sp_last = 0.0;
    double alignment_t2 = 0.0;  // KL_SYM regardless of the row's guidance distance
    double alignment_final = 0.0;
    double components_final = 0.0;
    std::size_t trace_records = 0;

    friend bool operator==(const AblationRow&, const AblationRow&) = default;
};

struct AblationJob {
    std::size_t config_index = 0;
    std::string label;
    RunSettings settings;
    std::string invalid;  // why the combination cannot run, empty when valid
};

std::vector<AblationJob> expand_ablation(const std::vector<AblationAxis>& axes, const RunSettings& base,
                                         SweepMode mode);

struct AblationOptions {
    SweepMode mode = SweepMode::OneAtATime;
    std::size_t threads = 1;
    // Called once per finished row, in completion order, under a lock.
    std::function<void(const AblationRow&)> on_row;
};

// Rows sorted by sweep order then seed. Each run seeds both the model weights
// and the initial latent with its row seed.
std::vector<AblationRow> run_ablation(const std::vector<AblationAxis>& axes, const RunSettings& base,
                                      const std::vector<unsigned long long>& seeds, std::string_view prompt,
                                      const SpatialPriorSet& priors, const AblationOptions& options = {});

std::string ablation_row_json(const AblationRow& row);
AblationRow ablation_row_from_json(std::string_view line);
std::string ablation_table(const std::vector<AblationRow>& rows);

}  // namespace vidguide
