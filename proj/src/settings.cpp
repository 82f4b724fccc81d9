#include "vidguide/settings.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "vidguide/errors.hpp"

namespace vidguide {

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

std::size_t to_size(std::string_view key, std::string_view text) {
    std::size_t v = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || ptr != text.data() + text.size()) {
        throw InputError(std::string(key) + ": expected a non-negative integer, got '" + std::string(text) + "'");
    }
    return v;
}

double to_double(std::string_view key, std::string_view text) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || ptr != text.data() + text.size()) {
        throw InputError(std::string(key) + ": expected a number, got '" + std::string(text) + "'");
    }
    return v;
}

bool to_bool(std::string_view key, std::string_view text) {
    if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
    if (text == "false" || text == "0" || text == "no" || text == "off") return false;
    throw InputError(std::string(key) + ": expected true or false, got '" + std::string(text) + "'");
}

std::string_view negative_mode_name(NegativeMode mode) {
    return mode == NegativeMode::Literal ? "literal" : "exclude_other_pairs";
}

NegativeMode to_negative_mode(std::string_view key, std::string_view text) {
    if (text == "literal") return NegativeMode::Literal;
    if (text == "exclude_other_pairs") return NegativeMode::ExcludeOtherPairs;
    throw InputError(std::string(key) + ": expected literal or exclude_other_pairs, got '" + std::string(text) + "'");
}

template <typename E, typename Parse>
E to_enum(std::string_view key, std::string_view text, Parse parse) {
    try {
        return parse(text);
    } catch (const Error& e) {
        throw InputError(std::string(key) + ": " + e.what());
    }
}

struct Field {
    std::string key;
    std::function<std::string(const RunSettings&)> get;
    std::function<void(RunSettings&, std::string_view)> set;
};

Field size_field(std::string key, std::size_t GuidanceConfig::*member) {
    return {key, [member](const RunSettings& s) { return std::to_string(s.guidance.*member); },
            [key, member](RunSettings& s, std::string_view v) { s.guidance.*member = to_size(key, v); }};
}

Field double_field(std::string key, double GuidanceConfig::*member) {
    return {key, [member](const RunSettings& s) { return format_double(s.guidance.*member); },
            [key, member](RunSettings& s, std::string_view v) { s.guidance.*member = to_double(key, v); }};
}

Field bool_field(std::string key, bool GuidanceConfig::*member) {
    return {key, [member](const RunSettings& s) { return std::string(s.guidance.*member ? "true" : "false"); },
            [key, member](RunSettings& s, std::string_view v) { s.guidance.*member = to_bool(key, v); }};
}

Field model_size_field(std::string key, std::size_t ToyModelConfig::*member) {
    return {key, [member](const RunSettings& s) { return std::to_string(s.model.*member); },
            [key, member](RunSettings& s, std::string_view v) { s.model.*member = to_size(key, v); }};
}

Field model_double_field(std::string key, double ToyModelConfig::*member) {
    return {key, [member](const RunSettings& s) { return format_double(s.model.*member); },
            [key, member](RunSettings& s, std::string_view v) { s.model.*member = to_double(key, v); }};
}

Field schedule_double_field(std::string key, double ScheduleConfig::*member) {
    return {key, [member](const RunSettings& s) { return format_double(s.model.schedule.*member); },
            [key, member](RunSettings& s, std::string_view v) { s.model.schedule.*member = to_double(key, v); }};
}

const std::vector<Field>& fields() {
    static const std::vector<Field> table = [] {
        std::vector<Field> f;
        // The sampler and the guidance schedule always agree on the step count.
        f.push_back({"total_steps", [](const RunSettings& s) { return std::to_string(s.guidance.total_steps); },
                     [](RunSettings& s, std::string_view v) {
                         s.guidance.total_steps = to_size("total_steps", v);
                         s.model.schedule.steps = s.guidance.total_steps;
                     }});
        f.push_back(size_field("t1", &GuidanceConfig::t1));
        f.push_back(size_field("t2", &GuidanceConfig::t2));
        f.push_back(size_field("iters_spatial", &GuidanceConfig::iters_spatial));
        f.push_back(size_field("iters_syntax", &GuidanceConfig::iters_syntax));
        f.push_back(double_field("lambda_fg", &GuidanceConfig::lambda_fg));
        f.push_back(double_field("lambda_bg", &GuidanceConfig::lambda_bg));
        f.push_back(double_field("lambda_sp", &GuidanceConfig::lambda_sp));
        f.push_back(double_field("lambda_syt", &GuidanceConfig::lambda_syt));
        f.push_back(double_field("alpha", &GuidanceConfig::alpha));
        f.push_back({"distance", [](const RunSettings& s) { return std::string(distance_name(s.guidance.distance)); },
                     [](RunSettings& s, std::string_view v) {
                         s.guidance.distance = to_enum<DistanceKind>("distance", v, parse_distance);
                     }});
        f.push_back({"contrastive",
                     [](const RunSettings& s) { return std::string(contrastive_name(s.guidance.contrastive)); },
                     [](RunSettings& s, std::string_view v) {
                         s.guidance.contrastive = to_enum<ContrastiveForm>("contrastive", v, parse_contrastive);
                     }});
        f.push_back(double_field("epsilon", &GuidanceConfig::epsilon));
        f.push_back(bool_field("apply_spatial_to_verbs", &GuidanceConfig::apply_spatial_to_verbs));
        f.push_back(bool_field("neg_includes_verb", &GuidanceConfig::neg_includes_verb));
        f.push_back({"negative_mode",
                     [](const RunSettings& s) { return std::string(negative_mode_name(s.guidance.negative_mode)); },
                     [](RunSettings& s, std::string_view v) {
                         s.guidance.negative_mode = to_negative_mode("negative_mode", v);
                     }});
        f.push_back(model_size_field("model.frames", &ToyModelConfig::frames));
        f.push_back(model_size_field("model.latent_channels", &ToyModelConfig::latent_channels));
        f.push_back(model_size_field("model.latent_h", &ToyModelConfig::latent_h));
        f.push_back(model_size_field("model.latent_w", &ToyModelConfig::latent_w));
        f.push_back(model_size_field("model.hidden", &ToyModelConfig::hidden));
        f.push_back(model_size_field("model.embed_dim", &ToyModelConfig::embed_dim));
        f.push_back(model_size_field("model.head_dim", &ToyModelConfig::head_dim));
        f.push_back(model_size_field("model.heads", &ToyModelConfig::heads));
        f.push_back(model_size_field("model.max_tokens", &ToyModelConfig::max_tokens));
        f.push_back(model_double_field("model.attn_gain", &ToyModelConfig::attn_gain));
        f.push_back(model_double_field("model.residual_scale", &ToyModelConfig::residual_scale));
        f.push_back(model_double_field("model.position_gain", &ToyModelConfig::position_gain));
        f.push_back(model_size_field("model.smoothing", &ToyModelConfig::smoothing));
        f.push_back({"model.capture",
                     [](const RunSettings& s) { return std::string(capture_layer_name(s.model.capture)); },
                     [](RunSettings& s, std::string_view v) {
                         s.model.capture = to_enum<CaptureLayer>("model.capture", v, parse_capture_layer);
                     }});
        f.push_back({"schedule.train_steps",
                     [](const RunSettings& s) { return std::to_string(s.model.schedule.train_steps); },
                     [](RunSettings& s, std::string_view v) {
                         s.model.schedule.train_steps = to_size("schedule.train_steps", v);
                     }});
        f.push_back(schedule_double_field("schedule.beta_start", &ScheduleConfig::beta_start));
        f.push_back(schedule_double_field("schedule.beta_end", &ScheduleConfig::beta_end));
        return f;
    }();
    return table;
}

const Field& field(std::string_view key) {
    const std::string_view canonical = key == "layer" ? std::string_view("model.capture") : key;
    for (const Field& f : fields()) {
        if (f.key == canonical) return f;
    }
    throw InputError("unknown setting '" + std::string(key) + "'");
}

}  // namespace

std::string format_double(double value) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
    return std::string(buf, ptr);
}

const std::vector<std::string>& setting_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> out;
        for (const Field& f : fields()) out.push_back(f.key);
        return out;
    }();
    return keys;
}

bool is_setting_key(std::string_view key) {
    return key == "layer" || std::ranges::find(setting_keys(), key) != setting_keys().end();
}

void apply_setting(RunSettings& settings, std::string_view key, std::string_view value) {
    field(key).set(settings, trim(value));
}

std::string get_setting(const RunSettings& settings, std::string_view key) { return field(key).get(settings); }

RunSettings parse_settings(std::string_view text, RunSettings base) {
    std::istringstream in{std::string(text)};
    std::string raw;
    int lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        std::string_view line = raw;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ParseError(lineno, "expected 'key = value'");
        const std::string_view key = trim(line.substr(0, eq));
        try {
            apply_setting(base, key, line.substr(eq + 1));
        } catch (const InputError& e) {
            throw ParseError(lineno, e.what());
        }
    }
    return base;
}

RunSettings load_settings_file(const std::string& path, RunSettings base) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read config file " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_settings(buf.str(), std::move(base));
}

std::vector<std::pair<std::string, std::string>> settings_entries(const RunSettings& settings) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const Field& f : fields()) out.emplace_back(f.key, f.get(settings));
    return out;
}

std::string serialize_settings(const RunSettings& settings) {
    std::string out;
    for (const auto& [key, value] : settings_entries(settings)) out += key + " = " + value + "\n";
    return out;
}

}  // namespace vidguide
