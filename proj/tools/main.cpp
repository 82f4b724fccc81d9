#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cli_support.hpp"
#include "default_scene.hpp"
#include "json.hpp"
#include "vidguide/errors.hpp"
#include "vidguide/gradcheck.hpp"
#include "vidguide/metrics.hpp"
#include "vidguide/ops.hpp"
#include "vidguide/settings.hpp"

namespace fs = std::filesystem;
using namespace vidguide;
using namespace vidguide::cli;

namespace {

constexpr double kGradcheckTolerance = 1e-4;

struct GradcheckFailure : Error {
    explicit GradcheckFailure(const std::string& what) : Error("gradcheck", what) {}
};

// Settings precedence: defaults < --config file < per-key flags < --set.
struct SettingsFlags {
    std::string config_path;
    std::map<std::string, std::string> by_key;
    std::vector<std::string> assignments;

    void attach(CLI::App& cmd) {
        cmd.add_option("--config", config_path, "key = value settings file");
        for (const std::string& key : setting_keys()) {
            cmd.add_option("--" + key, by_key[key], "override " + key)->group("Settings");
        }
        cmd.add_option("--set", assignments, "override a setting as key=value (repeatable)")->group("Settings");
    }

    RunSettings resolve(std::vector<ManifestFile>* inputs) const {
        RunSettings s;
        if (!config_path.empty()) {
            const std::string text = read_file(config_path);
            s = parse_settings(text, s);
            if (inputs) inputs->push_back({config_path, sha256_hex(text)});
        }
        for (const std::string& key : setting_keys()) {
            const auto it = by_key.find(key);
            if (it != by_key.end() && !it->second.empty()) apply_setting(s, key, it->second);
        }
        for (const std::string& a : assignments) {
            const auto eq = a.find('=');
            if (eq == std::string::npos) throw InputError("--set expects key=value, got '" + a + "'");
            apply_setting(s, a.substr(0, eq), a.substr(eq + 1));
        }
        s.guidance.validate();
        s.model.validate();
        return s;
    }
};

struct BoxInput {
    SpatialPriorSet set;
    ManifestFile digest;
};

BoxInput load_boxes(const std::string& path) {
    if (path.empty()) {
        return {parse_box_text(kDefaultScene), {"<builtin two-subject scene>", sha256_hex(kDefaultScene)}};
    }
    const std::string text = read_file(path);
    return {parse_box_text(text), {path, sha256_hex(text)}};
}

void report_violations(const std::vector<Violation>& violations, std::ostream& out) {
    for (const Violation& v : violations) {
        out << violation_name(v.kind) << " subject=" << v.subject_id << " frame=" << v.frame << " " << v.detail
            << "\n";
    }
}

std::string step_tag(std::size_t step) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "step%02zu", step);
    return buf;
}

std::string ca_to_json(const CaRecord& rec, const TokenSequence& tokens) {
    nlohmann::ordered_json j;
    j["step"] = rec.step;
    j["grid_h"] = rec.grid_h;
    j["grid_w"] = rec.grid_w;
    j["shape"] = rec.attn.shape();
    std::vector<std::string> words;
    for (const Token& t : tokens) words.push_back(t.text);
    j["tokens"] = words;
    j["attn"] = rec.attn.vec();
    return j.dump() + "\n";
}

struct LoadedCa {
    CaRecord rec;
    std::vector<std::string> tokens;
};

LoadedCa ca_from_json(const std::string& text) {
    try {
        const auto j = nlohmann::json::parse(text);
        LoadedCa out;
        out.rec.step = j.at("step").get<std::size_t>();
        out.rec.grid_h = j.at("grid_h").get<std::size_t>();
        out.rec.grid_w = j.at("grid_w").get<std::size_t>();
        out.rec.attn = Tensor(j.at("shape").get<Shape>(), j.at("attn").get<std::vector<double>>());
        out.tokens = j.at("tokens").get<std::vector<std::string>>();
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(1, std::string("bad attention file: ") + e.what());
    }
}

std::string latent_summary(const std::vector<Tensor>& trajectory) {
    std::string out;
    for (std::size_t k = 0; k < trajectory.size(); ++k) {
        const Tensor& z = trajectory[k];
        double sum = 0.0, sq = 0.0;
        for (double v : z.data()) {
            sum += v;
            sq += v * v;
        }
        const double n = static_cast<double>(z.size());
        const double mean = sum / n;
        nlohmann::ordered_json j;
        j["after_step"] = k;
        j["mean"] = mean;
        j["std"] = std::sqrt(std::max(0.0, sq / n - mean * mean));
        j["l2_norm"] = z.l2_norm();
        j["max_abs"] = z.max_abs();
        out += j.dump() + "\n";
    }
    return out;
}

std::vector<std::string> arguments_of(int argc, char** argv) {
    std::vector<std::string> out;
    for (int i = 1; i < argc; ++i) out.emplace_back(argv[i]);
    return out;
}

void finish_manifest(RunManifest& manifest, const fs::path& out_dir, const std::vector<std::string>& outputs) {
    for (const std::string& rel : outputs) manifest.outputs.push_back(digest_file(out_dir / rel, rel));
    manifest.finished_at = utc_timestamp();
    write_file(out_dir / "manifest.json", manifest.to_json());
}

// ---- generate ---------------------------------------------------------------

struct GenerateArgs {
    std::string prompt;
    std::string boxes;
    std::string out;
    unsigned long long seed = 0;
    bool force = false;
    std::size_t upscale = 8;
    double max_step_px = 60.0;
    SettingsFlags settings;
};

int run_generate(const GenerateArgs& args, const std::vector<std::string>& argv) {
    RunManifest manifest;
    manifest.command = "generate";
    manifest.arguments = argv;
    manifest.started_at = utc_timestamp();
    manifest.seed = args.seed;

    const RunSettings settings = args.settings.resolve(&manifest.inputs);
    BoxInput boxes = load_boxes(args.boxes);
    manifest.inputs.insert(manifest.inputs.begin(), boxes.digest);
    const std::string prompt = args.prompt.empty() ? boxes.set.caption : args.prompt;
    if (prompt.empty()) throw InputError("no --prompt given and the box file has no caption");

    ValidationLimits limits;
    limits.max_step_px = args.max_step_px;
    const std::vector<Violation> violations = validate_trajectories(boxes.set, limits);
    if (!violations.empty()) {
        report_violations(violations, std::cerr);
        if (!args.force) {
            throw InputError(std::to_string(violations.size()) + " box violation(s); rerun with --force to accept");
        }
    }

    ToyModelConfig mc = settings.model;
    mc.seed = args.seed;
    const ToyDenoiser model(mc);
    const GuidanceConfig& g = settings.guidance;
    const SamplingResult result = run_guided_sampling(prompt, boxes.set, g, model, args.seed);

    const fs::path out_dir = args.out;
    ensure_directory(out_dir / "heatmaps");
    ensure_directory(out_dir / "ca");
    std::vector<std::string> outputs;
    auto emit = [&](const std::string& rel, std::string_view bytes) {
        write_file(out_dir / rel, bytes);
        outputs.push_back(rel);
    };

    manifest.settings = settings_entries(settings);
    manifest.unguided = g.unguided();
    emit("config.txt", serialize_settings(settings));
    emit("trace.jsonl", trace_to_jsonl(result.trace));
    emit("latents.jsonl", latent_summary(result.trajectory));

    std::set<std::size_t> steps{1, g.t1, g.t2, g.total_steps};
    steps.erase(0);
    std::vector<MetricsReport> reports;
    for (std::size_t step : steps) {
        MetricsReport rep = measure_step(result, step, "generate", args.seed, g.epsilon);
        rep.config = manifest.settings;
        reports.push_back(std::move(rep));
        const CaRecord& rec = result.ca_at(step);
        emit("ca/" + step_tag(step) + ".json", ca_to_json(rec, with_specials(result.tokens, mc.max_tokens)));
        for (const NounVerbPair& p : result.pairs.pairs) {
            for (std::size_t token : {p.noun, p.verb}) {
                for (std::size_t f = 0; f < rec.attn.dim(0); ++f) {
                    const std::string rel = "heatmaps/" + step_tag(step) + "_t" + std::to_string(token) + "_" +
                                            result.tokens[token].text + "_f" + std::to_string(f) + ".pgm";
                    emit(rel, heatmap_pgm(rec.attn, rec.grid_h, rec.grid_w, token, f, args.upscale));
                }
            }
        }
    }
    emit("metrics.jsonl", report_to_jsonl(reports));
    const std::string table = report_table(reports);
    emit("metrics.txt", table);
    std::string warnings;
    for (const std::string& w : result.warnings) warnings += w + "\n";
    emit("warnings.txt", warnings);

    manifest.complete = true;
    finish_manifest(manifest, out_dir, outputs);

    std::cout << "prompt: " << prompt << "\n";
    std::cout << "guidance records: " << result.trace.size() << (manifest.unguided ? " (unguided)" : "") << "\n";
    std::cout << table;
    std::cout << "wrote " << outputs.size() + 1 << " files to " << out_dir.string() << "\n";
    return kExitOk;
}

// ---- parse-prompt -----------------------------------------------------------

int run_parse_prompt(const std::string& prompt, const std::string& negative_mode) {
    NegativeMode mode = NegativeMode::Literal;
    if (negative_mode == "exclude_other_pairs") {
        mode = NegativeMode::ExcludeOtherPairs;
    } else if (negative_mode != "literal") {
        throw InputError("negative mode must be literal or exclude_other_pairs");
    }
    const TokenSequence tokens = parse_prompt(prompt);
    const SyntaxPairs pairs = extract_pairs(tokens, mode);
    nlohmann::ordered_json j;
    j["prompt"] = to_prompt(tokens);
    nlohmann::ordered_json toks = nlohmann::ordered_json::array();
    for (const Token& t : tokens) toks.push_back({{"index", t.index}, {"text", t.text}, {"tag", tag_name(t.tag)}});
    j["tokens"] = std::move(toks);
    nlohmann::ordered_json ps = nlohmann::ordered_json::array();
    for (std::size_t k = 0; k < pairs.pairs.size(); ++k) {
        const NounVerbPair& p = pairs.pairs[k];
        ps.push_back({{"noun", p.noun},
                      {"verb", p.verb},
                      {"noun_text", tokens[p.noun].text},
                      {"verb_text", tokens[p.verb].text},
                      {"negatives", pairs.negatives[k]}});
    }
    j["pairs"] = std::move(ps);
    std::cout << j.dump(2) << "\n";
    return kExitOk;
}

// ---- parse-boxes / validate-boxes / rasterize -------------------------------

int run_parse_boxes(const std::string& path, const std::string& format, const std::string& out) {
    const SpatialPriorSet set = load_boxes(path).set;
    std::string text;
    if (format == "structured") {
        text = serialize_structured_boxes(set);
    } else if (format == "llm") {
        text = serialize_llm_boxes(set);
    } else {
        throw InputError("format must be structured or llm");
    }
    if (!text.empty() && text.back() != '\n') text += "\n";
    if (out.empty()) {
        std::cout << text;
    } else {
        write_file(out, text);
    }
    for (const std::string& w : set.warnings) std::cerr << "warning: " << w << "\n";
    return kExitOk;
}

int run_validate_boxes(const std::string& path, const ValidationLimits& limits) {
    const SpatialPriorSet set = load_boxes(path).set;
    const std::vector<Violation> violations = validate_trajectories(set, limits);
    report_violations(violations, std::cout);
    if (!violations.empty()) {
        throw InputError(std::to_string(violations.size()) + " box violation(s)");
    }
    std::cout << "ok: " << set.trajectories.size() << " subject(s), " << set.frame_count << " frame(s)\n";
    return kExitOk;
}

std::pair<std::size_t, std::size_t> parse_grid(const std::string& grid) {
    const auto x = grid.find('x');
    try {
        if (x == std::string::npos) throw std::invalid_argument("missing x");
        std::size_t used_h = 0, used_w = 0;
        const std::size_t h = std::stoul(grid.substr(0, x), &used_h);
        const std::size_t w = std::stoul(grid.substr(x + 1), &used_w);
        if (used_h != x || used_w != grid.size() - x - 1 || h == 0 || w == 0) throw std::invalid_argument("bad");
        return {h, w};
    } catch (const std::logic_error&) {
        throw InputError("grid must look like HxW, got '" + grid + "'");
    }
}

int run_rasterize(const std::string& path, const std::string& grid, std::size_t frames, const std::string& out) {
    const auto [gh, gw] = parse_grid(grid);
    SpatialPriorSet set = clip_to_frame(load_boxes(path).set);
    if (frames != 0 && frames != set.frame_count) set = resample_frames(set, frames);
    const SubjectMasks masks = rasterize_masks(set, gh, gw);
    nlohmann::ordered_json j;
    j["grid"] = {gh, gw};
    j["frames"] = masks.frames;
    nlohmann::ordered_json subjects = nlohmann::ordered_json::array();
    for (const auto& [id, per_frame] : masks.masks) {
        std::string name;
        for (const BoxTrajectory& t : set.trajectories) {
            if (t.subject_id == id) name = t.name;
        }
        subjects.push_back({{"id", id}, {"name", name}, {"masks", per_frame}});
        for (std::size_t f = 0; f < per_frame.size(); ++f) {
            std::cout << "subject " << id << " (" << name << ") frame " << f + 1 << "\n";
            for (std::size_t r = 0; r < gh; ++r) {
                for (std::size_t c = 0; c < gw; ++c) std::cout << (per_frame[f][r * gw + c] ? '#' : '.');
                std::cout << "\n";
            }
        }
    }
    j["subjects"] = std::move(subjects);
    for (const std::string& w : set.warnings) std::cerr << "warning: " << w << "\n";
    for (const std::string& w : masks.warnings) std::cerr << "warning: " << w << "\n";
    if (!out.empty()) write_file(out, j.dump() + "\n");
    return kExitOk;
}

// ---- gradcheck --------------------------------------------------------------

int run_gradcheck_cmd(const std::string& component, unsigned long long seed, bool corrupt) {
    testing::set_gradient_fault(corrupt);
    std::vector<GradcheckComponent> components;
    if (component == "all") {
        components = {GradcheckComponent::Stub, GradcheckComponent::Losses, GradcheckComponent::Model};
    } else {
        components = {parse_gradcheck_component(component)};
    }
    const GradcheckEntry* worst_entry = nullptr;
    std::string worst_component;
    std::vector<GradcheckSuite> suites;
    for (GradcheckComponent c : components) suites.push_back(run_gradcheck(c, seed));
    for (const GradcheckSuite& suite : suites) {
        for (const GradcheckEntry& e : suite.entries) {
            std::printf("%-6s %-5s max_rel_error=%.3e coordinate=%zu analytic=%.6e numeric=%.6e\n",
                        std::string(gradcheck_component_name(suite.component)).c_str(), e.loss.c_str(),
                        e.report.max_rel_error, e.report.worst_index, e.report.worst_analytic,
                        e.report.worst_numeric);
            if (!worst_entry || e.report.max_rel_error > worst_entry->report.max_rel_error) {
                worst_entry = &e;
                worst_component = gradcheck_component_name(suite.component);
            }
        }
    }
    std::fflush(stdout);
    if (worst_entry && worst_entry->report.max_rel_error > kGradcheckTolerance) {
        char buf[256];
        std::snprintf(buf, sizeof buf, "%s %s coordinate=%zu max_rel_error=%.3e exceeds %.0e",
                      worst_component.c_str(), worst_entry->loss.c_str(), worst_entry->report.worst_index,
                      worst_entry->report.max_rel_error, kGradcheckTolerance);
        throw GradcheckFailure(buf);
    }
    std::cout << "ok: all losses within " << kGradcheckTolerance << "\n";
    return kExitOk;
}

// ---- ablate -----------------------------------------------------------------

struct AblateArgs {
    std::string grid;
    std::string seeds = "0,1";
    std::string mode = "one";
    std::string out;
    std::string boxes;
    std::string prompt;
    std::size_t threads = 1;
    SettingsFlags settings;
};

std::vector<unsigned long long> parse_seeds(const std::string& text) {
    std::vector<unsigned long long> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stoull(item, &used));
            if (used != item.size()) throw std::invalid_argument("trailing");
        } catch (const std::logic_error&) {
            throw InputError("seeds must be a comma-separated list of integers, got '" + text + "'");
        }
    }
    if (out.empty()) throw InputError("no seeds given");
    return out;
}

int run_ablate(const AblateArgs& args, const std::vector<std::string>& argv) {
    RunManifest manifest;
    manifest.command = "ablate";
    manifest.arguments = argv;
    manifest.started_at = utc_timestamp();

    std::vector<AblationAxis> axes;
    if (args.grid.empty() || args.grid == "default") {
        axes = default_ablation_grid();
    } else {
        const std::string text = read_file(args.grid);
        axes = parse_ablation_grid(text);
        manifest.inputs.push_back({args.grid, sha256_hex(text)});
    }
    const RunSettings base = args.settings.resolve(&manifest.inputs);
    BoxInput boxes = load_boxes(args.boxes);
    manifest.inputs.insert(manifest.inputs.begin(), boxes.digest);
    const std::string prompt = args.prompt.empty() ? boxes.set.caption : args.prompt;
    if (prompt.empty()) throw InputError("no --prompt given and the box file has no caption");
    manifest.seeds = parse_seeds(args.seeds);
    manifest.seed = manifest.seeds.front();
    manifest.settings = settings_entries(base);
    manifest.unguided = base.guidance.unguided();

    AblationOptions options;
    if (args.mode == "one") {
        options.mode = SweepMode::OneAtATime;
    } else if (args.mode == "cartesian") {
        options.mode = SweepMode::Cartesian;
    } else {
        throw InputError("mode must be one or cartesian");
    }
    options.threads = std::max<std::size_t>(args.threads, 1);

    const fs::path out_dir = args.out;
    ensure_directory(out_dir);
    write_file(out_dir / "manifest.json", manifest.to_json());
    const fs::path partial = out_dir / "rows.partial.jsonl";
    write_file(partial, "");
    std::ofstream partial_out(partial, std::ios::app);
    options.on_row = [&](const AblationRow& row) {
        partial_out << ablation_row_json(row) << "\n";
        partial_out.flush();
        if (row.skipped) std::cerr << "skipped " << row.label << " seed " << row.seed << ": " << row.reason << "\n";
    };

    const std::vector<AblationRow> rows =
        run_ablation(axes, base, manifest.seeds, prompt, boxes.set, options);
    partial_out.close();

    std::string jsonl;
    for (const AblationRow& r : rows) jsonl += ablation_row_json(r) + "\n";
    const std::string table = ablation_table(rows);
    write_file(out_dir / "ablation.jsonl", jsonl);
    write_file(out_dir / "ablation.txt", table);
    fs::remove(partial);
    manifest.complete = true;
    finish_manifest(manifest, out_dir, {"ablation.jsonl", "ablation.txt"});

    std::cout << table;
    std::cout << rows.size() << " row(s) written to " << out_dir.string() << "\n";
    return kExitOk;
}

// ---- render -----------------------------------------------------------------

struct RenderArgs {
    std::string ca;
    std::string out;
    std::string word;
    long token = -1;
    std::size_t frame = 0;
    std::size_t upscale = 8;
};

int run_render(const RenderArgs& args) {
    const LoadedCa loaded = ca_from_json(read_file(args.ca));
    std::size_t token = 0;
    if (args.token >= 0) {
        token = static_cast<std::size_t>(args.token);
    } else if (!args.word.empty()) {
        const auto it = std::ranges::find(loaded.tokens, args.word);
        if (it == loaded.tokens.end()) throw InputError("word '" + args.word + "' is not in the attention file");
        token = static_cast<std::size_t>(it - loaded.tokens.begin());
    } else {
        throw InputError("give --token or --word");
    }
    render_heatmap(loaded.rec.attn, loaded.rec.grid_h, loaded.rec.grid_w, token, args.frame, args.out,
                   args.upscale);
    std::cout << "wrote " << args.out << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Attention-guided sampling with a toy latent video denoiser"};
    app.set_version_flag("--version", std::string(VIDGUIDE_VERSION));
    app.require_subcommand(1);
    const std::vector<std::string> arguments = arguments_of(argc, argv);

    GenerateArgs gen;
    auto* generate = app.add_subcommand("generate", "run guided sampling and write trace, metrics and heatmaps");
    generate->add_option("--prompt", gen.prompt, "prompt (defaults to the box file caption)");
    generate->add_option("--boxes", gen.boxes, "box layout file (LLM text or structured JSON)")->required();
    generate->add_option("--out", gen.out, "output directory")->required();
    generate->add_option("--seed", gen.seed, "seed for the model weights and the initial latent");
    generate->add_flag("--force", gen.force, "continue despite box violations");
    generate->add_option("--upscale", gen.upscale, "heatmap upscale factor")->check(CLI::PositiveNumber);
    generate->add_option("--max-step", gen.max_step_px, "largest allowed per-frame box movement in pixels");
    gen.settings.attach(*generate);

    std::string prompt_text, negative_mode = "literal";
    auto* parse_prompt_cmd = app.add_subcommand("parse-prompt", "tag a prompt and list noun-verb pairs");
    parse_prompt_cmd->add_option("prompt", prompt_text, "prompt text")->required();
    parse_prompt_cmd->add_option("--negative-mode", negative_mode, "literal or exclude_other_pairs");

    std::string boxes_path, format = "structured", out_path;
    auto* parse_boxes_cmd = app.add_subcommand("parse-boxes", "parse a box layout and print it canonically");
    parse_boxes_cmd->add_option("boxes", boxes_path, "box layout file")->required();
    parse_boxes_cmd->add_option("--format", format, "structured or llm");
    parse_boxes_cmd->add_option("--out", out_path, "write to a file instead of stdout");

    ValidationLimits limits;
    auto* validate_cmd = app.add_subcommand("validate-boxes", "check box layouts for frame and velocity violations");
    validate_cmd->add_option("boxes", boxes_path, "box layout file")->required();
    validate_cmd->add_option("--max-step", limits.max_step_px, "largest allowed per-frame center movement");
    validate_cmd->add_flag("--allow-offscreen", limits.allow_offscreen, "accept boxes leaving the frame");
    validate_cmd->add_option("--tolerance", limits.offscreen_tolerance_px, "pixels a box may leave the frame");

    std::string grid = "8x8";
    std::size_t frames = 0;
    auto* rasterize_cmd = app.add_subcommand("rasterize", "rasterize box layouts onto an attention grid");
    rasterize_cmd->add_option("boxes", boxes_path, "box layout file")->required();
    rasterize_cmd->add_option("--grid", grid, "grid as HxW");
    rasterize_cmd->add_option("--frames", frames, "resample to this many frames");
    rasterize_cmd->add_option("--out", out_path, "also write masks as JSON");

    std::string component = "all";
    unsigned long long gc_seed = 0;
    bool corrupt = false;
    auto* gradcheck_cmd = app.add_subcommand("gradcheck", "compare analytic gradients with finite differences");
    gradcheck_cmd->add_option("--component", component, "stub, model, losses or all");
    gradcheck_cmd->add_option("--seed", gc_seed, "fixture seed");
    gradcheck_cmd->add_flag("--corrupt-gradient", corrupt, "scale the softmax backward rule (negative control)")
        ->group("");

    AblateArgs abl;
    auto* ablate_cmd = app.add_subcommand("ablate", "sweep guidance settings over seeds");
    ablate_cmd->add_option("--grid", abl.grid, "axis file ('key = v1, v2' lines) or 'default'");
    ablate_cmd->add_option("--seeds", abl.seeds, "comma-separated seeds");
    ablate_cmd->add_option("--mode", abl.mode, "one (one axis at a time) or cartesian");
    ablate_cmd->add_option("--out", abl.out, "output directory")->required();
    ablate_cmd->add_option("--boxes", abl.boxes, "box layout file (defaults to the built-in two-subject scene)");
    ablate_cmd->add_option("--prompt", abl.prompt, "prompt (defaults to the box file caption)");
    ablate_cmd->add_option("--threads", abl.threads, "worker threads");
    abl.settings.attach(*ablate_cmd);

    RenderArgs ren;
    auto* render_cmd = app.add_subcommand("render", "render one attention map as a PGM heatmap");
    render_cmd->add_option("--ca", ren.ca, "attention JSON written by generate")->required();
    render_cmd->add_option("--out", ren.out, "output .pgm path")->required();
    render_cmd->add_option("--token", ren.token, "token column");
    render_cmd->add_option("--word", ren.word, "token text");
    render_cmd->add_option("--frame", ren.frame, "frame index (0-based)");
    render_cmd->add_option("--upscale", ren.upscale, "nearest-neighbour upscale")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        if (rc == 0) return 0;
        std::cerr << failure_line("usage", kExitInput, e.what()) << "\n";
        return kExitInput;
    }

    try {
        if (*generate) return run_generate(gen, arguments);
        if (*parse_prompt_cmd) return run_parse_prompt(prompt_text, negative_mode);
        if (*parse_boxes_cmd) return run_parse_boxes(boxes_path, format, out_path);
        if (*validate_cmd) return run_validate_boxes(boxes_path, limits);
        if (*rasterize_cmd) return run_rasterize(boxes_path, grid, frames, out_path);
        if (*gradcheck_cmd) return run_gradcheck_cmd(component, gc_seed, corrupt);
        if (*ablate_cmd) return run_ablate(abl, arguments);
        if (*render_cmd) return run_render(ren);
    } catch (const Error& e) {
        std::cout.flush();
        const int code = exit_code_for(e.kind());
        std::cerr << failure_line(e.kind(), code, e.what()) << "\n";
        return code;
    } catch (const std::exception& e) {
        std::cout.flush();
        std::cerr << failure_line("internal", 1, e.what()) << "\n";
        return 1;
    }
    return kExitInput;
}
