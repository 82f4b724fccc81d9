#include "vidguide/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "vidguide/errors.hpp"

namespace vidguide {

namespace {

using nlohmann::json;

void check_map(const Tensor& ca, std::size_t grid_h, std::size_t grid_w, std::size_t token, std::size_t frame) {
    if (ca.rank() != 3) throw DimensionError("attention must be [F, N, L], got " + shape_str(ca.shape()));
    if (ca.dim(1) != grid_h * grid_w) {
        throw DimensionError("attention has " + std::to_string(ca.dim(1)) + " pixels, grid is " +
                             std::to_string(grid_h) + "x" + std::to_string(grid_w));
    }
    if (frame >= ca.dim(0)) throw ContractError("frame " + std::to_string(frame) + " out of range");
    if (token >= ca.dim(2)) throw ContractError("token " + std::to_string(token) + " out of range");
}

std::vector<double> token_cells(const Tensor& ca, std::size_t token, std::size_t frame) {
    const std::size_t n = ca.dim(1), l = ca.dim(2);
    std::vector<double> out(n);
    for (std::size_t p = 0; p < n; ++p) out[p] = ca[(frame * n + p) * l + token];
    return out;
}

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

}  // namespace

std::size_t count_components(const Tensor& ca, std::size_t grid_h, std::size_t grid_w, std::size_t token,
                             std::size_t frame, double rel_threshold) {
    if (!(rel_threshold > 0.0 && rel_threshold < 1.0)) throw ContractError("rel_threshold must lie in (0, 1)");
    check_map(ca, grid_h, grid_w, token, frame);
    const std::vector<double> cells = token_cells(ca, token, frame);
    const double peak = *std::ranges::max_element(cells);
    if (!(peak > 0.0)) return 0;
    const double cut = rel_threshold * peak;
    std::vector<char> on(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) on[i] = cells[i] >= cut;

    std::size_t count = 0;
    std::vector<std::size_t> stack;
    for (std::size_t start = 0; start < cells.size(); ++start) {
        if (!on[start]) continue;
        ++count;
        on[start] = 0;
        stack.push_back(start);
        while (!stack.empty()) {
            const std::size_t p = stack.back();
            stack.pop_back();
            const std::size_t r = p / grid_w, c = p % grid_w;
            auto visit = [&](std::size_t q) {
                if (on[q]) {
                    on[q] = 0;
                    stack.push_back(q);
                }
            };
            if (r > 0) visit(p - grid_w);
            if (r + 1 < grid_h) visit(p + grid_w);
            if (c > 0) visit(p - 1);
            if (c + 1 < grid_w) visit(p + 1);
        }
    }
    return count;
}

double verb_noun_alignment(const Tensor& ca, const NounVerbPair& pair, DistanceKind kind, double epsilon) {
    if (ca.rank() != 3) throw DimensionError("attention must be [F, N, L], got " + shape_str(ca.shape()));
    const CAMapStack stack{constant(ca), 0, 0, ""};
    return loss_pos(stack, pair, kind, epsilon).value().item();
}

std::string heatmap_pgm(const Tensor& ca, std::size_t grid_h, std::size_t grid_w, std::size_t token,
                        std::size_t frame, std::size_t upscale) {
    if (upscale < 1) throw ContractError("upscale must be at least 1");
    check_map(ca, grid_h, grid_w, token, frame);
    const std::vector<double> cells = token_cells(ca, token, frame);
    const auto [lo, hi] = std::ranges::minmax_element(cells);
    const double lo_v = *lo, range = *hi - *lo;
    const std::size_t width = grid_w * upscale, height = grid_h * upscale;
    std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
    out.reserve(out.size() + width * height);
    for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
            const double v = cells[(y / upscale) * grid_w + x / upscale];
            const long level = range > 0.0 ? std::lround(255.0 * (v - lo_v) / range) : 0;
            out.push_back(static_cast<char>(static_cast<unsigned char>(std::clamp(level, 0L, 255L))));
        }
    }
    return out;
}

void render_heatmap(const Tensor& ca, std::size_t grid_h, std::size_t grid_w, std::size_t token, std::size_t frame,
                    const std::string& out_path, std::size_t upscale) {
    const std::string bytes = heatmap_pgm(ca, grid_h, grid_w, token, frame, upscale);
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw IoError("cannot write " + out_path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + out_path);
}

MetricsReport measure_step(const SamplingResult& result, std::size_t step, std::string run, unsigned long long seed,
                           double epsilon) {
    const CaRecord& rec = result.ca_at(step);
    MetricsReport rep;
    rep.run = std::move(run);
    rep.seed = seed;
    rep.step = step;
    const std::size_t frames = rec.attn.dim(0);
    std::vector<double> noun_ratios, scores, counts;
    for (const NounVerbPair& p : result.pairs.pairs) {
        for (std::size_t token : {p.noun, p.verb}) {
            for (std::size_t f = 0; f < frames; ++f) {
                const double r = in_box_ratio(rec.attn, result.masks, token, f);
                rep.in_box.push_back({token, result.tokens.at(token).text, f, r});
                if (token == p.noun) noun_ratios.push_back(r);
            }
        }
        const double score = verb_noun_alignment(rec.attn, p, DistanceKind::KlSym, epsilon);
        rep.alignment.push_back(
            {p.noun, p.verb, result.tokens.at(p.noun).text + "/" + result.tokens.at(p.verb).text, score});
        scores.push_back(score);
        ComponentEntry comp{p.noun, result.tokens.at(p.noun).text, {}};
        for (std::size_t f = 0; f < frames; ++f) {
            comp.per_frame.push_back(count_components(rec.attn, rec.grid_h, rec.grid_w, p.noun, f));
            counts.push_back(static_cast<double>(comp.per_frame.back()));
        }
        rep.components.push_back(std::move(comp));
    }
    rep.mean_in_box = mean_of(noun_ratios);
    rep.mean_alignment = mean_of(scores);
    rep.mean_components = mean_of(counts);
    return rep;
}

std::string report_to_jsonl(const std::vector<MetricsReport>& reports) {
    std::string out;
    for (const MetricsReport& r : reports) {
        json j;
        j["run"] = r.run;
        j["seed"] = r.seed;
        j["step"] = r.step;
        json cfg = json::array();
        for (const auto& [k, v] : r.config) cfg.push_back({k, v});
        j["config"] = std::move(cfg);
        json boxes = json::array();
        for (const InBoxEntry& e : r.in_box) {
            boxes.push_back({{"token", e.token}, {"word", e.word}, {"frame", e.frame}, {"ratio", e.ratio}});
        }
        j["in_box"] = std::move(boxes);
        json align = json::array();
        for (const AlignmentEntry& e : r.alignment) {
            align.push_back({{"noun", e.noun}, {"verb", e.verb}, {"pair", e.pair}, {"score", e.score}});
        }
        j["alignment"] = std::move(align);
        json comps = json::array();
        for (const ComponentEntry& e : r.components) {
            comps.push_back({{"noun", e.noun}, {"word", e.word}, {"per_frame", e.per_frame}});
        }
        j["components"] = std::move(comps);
        j["mean_in_box"] = r.mean_in_box;
        j["mean_alignment"] = r.mean_alignment;
        j["mean_components"] = r.mean_components;
        out += j.dump() + "\n";
    }
    return out;
}

std::vector<MetricsReport> report_from_jsonl(std::string_view text) {
    std::vector<MetricsReport> out;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const json j = json::parse(line);
            MetricsReport r;
            r.run = j.at("run").get<std::string>();
            r.seed = j.at("seed").get<unsigned long long>();
            r.step = j.at("step").get<std::size_t>();
            for (const auto& kv : j.at("config")) r.config.emplace_back(kv.at(0).get<std::string>(), kv.at(1).get<std::string>());
            for (const auto& e : j.at("in_box")) {
                r.in_box.push_back({e.at("token").get<std::size_t>(), e.at("word").get<std::string>(),
                                    e.at("frame").get<std::size_t>(), e.at("ratio").get<double>()});
            }
            for (const auto& e : j.at("alignment")) {
                r.alignment.push_back({e.at("noun").get<std::size_t>(), e.at("verb").get<std::size_t>(),
                                       e.at("pair").get<std::string>(), e.at("score").get<double>()});
            }
            for (const auto& e : j.at("components")) {
                r.components.push_back({e.at("noun").get<std::size_t>(), e.at("word").get<std::string>(),
                                        e.at("per_frame").get<std::vector<std::size_t>>()});
            }
            r.mean_in_box = j.at("mean_in_box").get<double>();
            r.mean_alignment = j.at("mean_alignment").get<double>();
            r.mean_components = j.at("mean_components").get<double>();
            out.push_back(std::move(r));
        } catch (const json::exception& e) {
            throw ParseError(lineno, std::string("bad report record: ") + e.what());
        }
    }
    return out;
}

namespace {

std::string fmt(const char* pattern, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, pattern, v);
    return buf;
}

std::string aligned(const std::vector<std::vector<std::string>>& rows) {
    std::vector<std::size_t> widths;
    for (const auto& row : rows) {
        widths.resize(std::max(widths.size(), row.size()), 0);
        for (std::size_t i = 0; i < row.size(); ++i) widths[i] = std::max(widths[i], row[i].size());
    }
    std::string out;
    for (const auto& row : rows) {
        std::string line;
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) line += "  ";
            line += row[i];
            if (i + 1 < row.size()) line.append(widths[i] - row[i].size(), ' ');
        }
        out += line + "\n";
    }
    return out;
}

}  // namespace

std::string report_table(const std::vector<MetricsReport>& reports) {
    std::vector<std::vector<std::string>> rows{{"run", "seed", "step", "item", "in_box", "alignment", "components"}};
    for (const MetricsReport& r : reports) {
        const std::string seed = std::to_string(r.seed), step = std::to_string(r.step);
        for (const AlignmentEntry& a : r.alignment) {
            double noun_box = 0.0;
            std::size_t n = 0;
            for (const InBoxEntry& e : r.in_box) {
                if (e.token == a.noun) {
                    noun_box += e.ratio;
                    ++n;
                }
            }
            double comps = 0.0;
            std::size_t m = 0;
            for (const ComponentEntry& c : r.components) {
                if (c.noun != a.noun) continue;
                for (std::size_t k : c.per_frame) comps += static_cast<double>(k);
                m += c.per_frame.size();
            }
            rows.push_back({r.run, seed, step, a.pair, fmt("%.4f", n ? noun_box / static_cast<double>(n) : 0.0),
                            fmt("%.4f", a.score), fmt("%.2f", m ? comps / static_cast<double>(m) : 0.0)});
        }
        rows.push_back({r.run, seed, step, "mean", fmt("%.4f", r.mean_in_box), fmt("%.4f", r.mean_alignment),
                        fmt("%.2f", r.mean_components)});
    }
    return aligned(rows);
}

std::vector<AblationAxis> parse_ablation_grid(std::string_view text) {
    std::vector<AblationAxis> axes;
    std::istringstream in{std::string(text)};
    std::string raw;
    int lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        std::string line = raw.substr(0, raw.find('#'));
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ParseError(lineno, "expected 'key = value, value, ...'");
        auto strip = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            if (a == std::string::npos) return std::string();
            return s.substr(a, s.find_last_not_of(" \t\r") - a + 1);
        };
        AblationAxis axis{strip(line.substr(0, eq)), {}};
        if (!is_setting_key(axis.key)) throw ParseError(lineno, "unknown setting '" + axis.key + "'");
        std::stringstream values(line.substr(eq + 1));
        std::string v;
        while (std::getline(values, v, ',')) {
            v = strip(v);
            if (v.empty()) throw ParseError(lineno, "empty value in axis '" + axis.key + "'");
            axis.values.push_back(v);
        }
        if (axis.values.empty()) throw ParseError(lineno, "axis '" + axis.key + "' has no values");
        for (const AblationAxis& a : axes) {
            if (a.key == axis.key) throw ParseError(lineno, "axis '" + axis.key + "' given twice");
        }
        axes.push_back(std::move(axis));
    }
    return axes;
}

std::vector<AblationAxis> default_ablation_grid() {
    return {
        {"t1", {"1", "3", "5", "7"}},
        {"iters_spatial", {"5", "10", "15"}},
        {"lambda_sp", {"10", "20", "30", "40"}},
        {"t2", {"15", "20", "25", "30"}},
        {"iters_syntax", {"1", "2", "3"}},
        {"lambda_syt", {"10", "20", "30"}},
        {"distance", {"cosine", "kl_sym"}},
        {"contrastive", {"ratio", "sum"}},
        {"layer", {"down", "up", "mid", "down+up"}},
    };
}

namespace {

AblationJob make_job(std::size_t index, const RunSettings& base,
                     const std::vector<std::pair<std::string, std::string>>& overrides) {
    AblationJob job{index, {}, base, {}};
    for (const auto& [key, value] : overrides) {
        if (!job.label.empty()) job.label += ",";
        job.label += key + "=" + value;
        try {
            apply_setting(job.settings, key, value);
        } catch (const Error& e) {
            if (job.invalid.empty()) job.invalid = e.what();
        }
    }
    if (job.label.empty()) job.label = "base";
    if (job.invalid.empty()) {
        try {
            job.settings.guidance.validate();
            job.settings.model.validate();
        } catch (const Error& e) {
            job.invalid = e.what();
        }
    }
    return job;
}

}  // namespace

std::vector<AblationJob> expand_ablation(const std::vector<AblationAxis>& axes, const RunSettings& base,
                                         SweepMode mode) {
    std::vector<AblationJob> jobs;
    if (axes.empty()) {
        jobs.push_back(make_job(0, base, {}));
        return jobs;
    }
    if (mode == SweepMode::OneAtATime) {
        for (const AblationAxis& axis : axes) {
            for (const std::string& v : axis.values) jobs.push_back(make_job(jobs.size(), base, {{axis.key, v}}));
        }
        return jobs;
    }
    std::vector<std::size_t> pick(axes.size(), 0);
    while (true) {
        std::vector<std::pair<std::string, std::string>> overrides;
        for (std::size_t a = 0; a < axes.size(); ++a) overrides.emplace_back(axes[a].key, axes[a].values[pick[a]]);
        jobs.push_back(make_job(jobs.size(), base, overrides));
        std::size_t a = axes.size();
        while (a > 0) {
            --a;
            if (++pick[a] < axes[a].values.size()) break;
            pick[a] = 0;
            if (a == 0) return jobs;
        }
    }
}

namespace {

AblationRow run_row(const AblationJob& job, unsigned long long seed, const RunSettings& base,
                    std::string_view prompt, const SpatialPriorSet& priors) {
    AblationRow row;
    row.config_index = job.config_index;
    row.label = job.label;
    row.seed = seed;
    if (!job.invalid.empty()) {
        row.skipped = true;
        row.reason = job.invalid;
        return row;
    }
    try {
        ToyModelConfig mc = job.settings.model;
        mc.seed = seed;
        const ToyDenoiser model(mc);
        const GuidanceConfig& g = job.settings.guidance;
        const SamplingResult res = run_guided_sampling(prompt, priors, g, model, seed);
        const std::size_t last = g.total_steps;
        const std::size_t t1 = std::clamp<std::size_t>(base.guidance.t1, 1, last);
        const std::size_t t2 = std::clamp<std::size_t>(base.guidance.t2, 1, last);
        row.in_box_t1 = measure_step(res, t1, {}, seed, g.epsilon).mean_in_box;
        row.alignment_t2 = measure_step(res, t2, {}, seed, g.epsilon).mean_alignment;
        const MetricsReport fin = measure_step(res, last, {}, seed, g.epsilon);
        row.alignment_final = fin.mean_alignment;
        row.components_final = fin.mean_components;
        for (const TraceRecord& r : res.trace) {
            if (r.loss_name != "L_sp") continue;
            row.loss_sp_first = r.loss_value;
            break;
        }
        const CaRecord& rec = res.ca_at(t1);
        const CAMapStack ca{constant(rec.attn), rec.grid_h, rec.grid_w, ""};
        row.loss_sp_last = loss_sp(ca, res.masks, res.pairs, g).value().item();
        row.trace_records = res.trace.size();
    } catch (const Error& e) {
        row.skipped = true;
        row.reason = std::string(e.kind()) + ": " + e.what();
    }
    return row;
}

}  // namespace

std::vector<AblationRow> run_ablation(const std::vector<AblationAxis>& axes, const RunSettings& base,
                                      const std::vector<unsigned long long>& seeds, std::string_view prompt,
                                      const SpatialPriorSet& priors, const AblationOptions& options) {
    if (seeds.empty()) throw InputError("ablation needs at least one seed");
    const std::vector<AblationJob> jobs = expand_ablation(axes, base, options.mode);
    const std::size_t total = jobs.size() * seeds.size();
    std::vector<AblationRow> rows(total);
    std::atomic<std::size_t> next{0};
    std::mutex report_mutex;
    auto worker = [&] {
        for (std::size_t i = next++; i < total; i = next++) {
            rows[i] = run_row(jobs[i / seeds.size()], seeds[i % seeds.size()], base, prompt, priors);
            if (options.on_row) {
                const std::lock_guard lock(report_mutex);
                options.on_row(rows[i]);
            }
        }
    };
    const std::size_t threads = std::clamp<std::size_t>(options.threads, 1, std::max<std::size_t>(total, 1));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    }
    std::ranges::stable_sort(rows, [](const AblationRow& a, const AblationRow& b) {
        return std::tie(a.config_index, a.seed) < std::tie(b.config_index, b.seed);
    });
    return rows;
}

std::string ablation_row_json(const AblationRow& row) {
    json j;
    j["config_index"] = row.config_index;
    j["label"] = row.label;
    j["seed"] = row.seed;
    j["skipped"] = row.skipped;
    j["reason"] = row.reason;
    j["in_box_t1"] = row.in_box_t1;
    j["loss_sp_first"] = row.loss_sp_first;
    j["loss_sp_last"] = row.loss_sp_last;
    j["alignment_t2"] = row.alignment_t2;
    j["alignment_final"] = row.alignment_final;
    j["components_final"] = row.components_final;
    j["trace_records"] = row.trace_records;
    return j.dump();
}

AblationRow ablation_row_from_json(std::string_view line) {
    try {
        const json j = json::parse(line);
        AblationRow row;
        row.config_index = j.at("config_index").get<std::size_t>();
        row.label = j.at("label").get<std::string>();
        row.seed = j.at("seed").get<unsigned long long>();
        row.skipped = j.at("skipped").get<bool>();
        row.reason = j.at("reason").get<std::string>();
        row.in_box_t1 = j.at("in_box_t1").get<double>();
        row.loss_sp_first = j.at("loss_sp_first").get<double>();
        row.loss_sp_last = j.at("loss_sp_last").get<double>();
        row.alignment_t2 = j.at("alignment_t2").get<double>();
        row.alignment_final = j.at("alignment_final").get<double>();
        row.components_final = j.at("components_final").get<double>();
        row.trace_records = j.at("trace_records").get<std::size_t>();
        return row;
    } catch (const json::exception& e) {
        throw ParseError(1, std::string("bad ablation row: ") + e.what());
    }
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
    std::vector<std::vector<std::string>> cells{{"config", "seed", "in_box@t1", "L_sp first", "L_sp@t1",
                                                 "align@t2", "align@T", "components@T", "records", "status"}};
    for (const AblationRow& r : rows) {
        if (r.skipped) {
            cells.push_back({r.label, std::to_string(r.seed), "-", "-", "-", "-", "-", "-", "-", "skipped: " + r.reason});
            continue;
        }
        cells.push_back({r.label, std::to_string(r.seed), fmt("%.4f", r.in_box_t1), fmt("%.4f", r.loss_sp_first),
                         fmt("%.4f", r.loss_sp_last), fmt("%.4f", r.alignment_t2), fmt("%.4f", r.alignment_final),
                         fmt("%.2f", r.components_final), std::to_string(r.trace_records), "ok"});
    }
    return aligned(cells);
}

}  // namespace vidguide
