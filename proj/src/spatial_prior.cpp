#include "vidguide/spatial_prior.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

#include "json.hpp"

#include "vidguide/errors.hpp"

namespace vidguide {
namespace {

struct Record {
    int id = 0;
    std::string name;
    Box box;
};

// Recursive-descent reader for the single-quoted record list of one frame line,
// e.g. [{'id': 0, 'name': 'walking woman', 'box': [0, 70, 120, 200]}].
class RecordListReader {
   public:
    RecordListReader(std::string_view text, int line) : text_(text), line_(line) {}

    std::vector<Record> read() {
        std::vector<Record> records;
        expect('[');
        skip_ws();
        if (peek() == ']') {
            ++pos_;
        } else {
            while (true) {
                records.push_back(read_record());
                skip_ws();
                if (peek() == ',') {
                    ++pos_;
                    continue;
                }
                expect(']');
                break;
            }
        }
        skip_ws();
        if (pos_ != text_.size()) fail("trailing characters after record list");
        return records;
    }

   private:
    Record read_record() {
        expect('{');
        Record r;
        bool has_id = false, has_name = false, has_box = false;
        skip_ws();
        if (peek() == '}') fail("empty record literal");
        while (true) {
            const std::string key = read_string();
            expect(':');
            if (key == "id") {
                r.id = read_int("id");
                has_id = true;
            } else if (key == "name") {
                r.name = read_string();
                has_name = true;
            } else if (key == "box") {
                r.box = read_box();
                has_box = true;
            } else {
                fail("unknown record key '" + key + "'");
            }
            skip_ws();
            if (peek() == ',') {
                ++pos_;
                continue;
            }
            expect('}');
            break;
        }
        if (!has_id || !has_name || !has_box) fail("record literal needs 'id', 'name' and 'box'");
        return r;
    }

    Box read_box() {
        expect('[');
        int v[4];
        for (int i = 0; i < 4; ++i) {
            if (i) expect(',');
            v[i] = read_int("box");
        }
        expect(']');
        return Box{v[0], v[1], v[2], v[3]};
    }

    int read_int(const char* what) {
        skip_ws();
        const std::size_t start = pos_;
        if (peek() == '-' || peek() == '+') ++pos_;
        while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
        const bool digits = pos_ > start && std::isdigit(static_cast<unsigned char>(text_[pos_ - 1]));
        if (!digits || peek() == '.' || peek() == 'e' || peek() == 'E') {
            fail(std::string("non-integer ") + what + " entry");
        }
        return std::stoi(std::string(text_.substr(start, pos_ - start)));
    }

    std::string read_string() {
        skip_ws();
        if (peek() != '\'') fail("expected single-quoted string");
        ++pos_;
        const std::size_t end = text_.find('\'', pos_);
        if (end == std::string_view::npos) fail("unterminated string");
        std::string s(text_.substr(pos_, end - pos_));
        pos_ = end + 1;
        return s;
    }

    void expect(char c) {
        skip_ws();
        if (peek() != c) fail(std::string("expected '") + c + "'");
        ++pos_;
    }
    char peek() const { return pos_ < text_.size() ? text_[pos_] : '\0'; }
    void skip_ws() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    }
    [[noreturn]] void fail(const std::string& msg) const {
        throw ParseError(line_, "malformed record literal: " + msg + " at column " + std::to_string(pos_ + 1));
    }

    std::string_view text_;
    int line_;
    std::size_t pos_ = 0;
};

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

bool starts_with(std::string_view s, std::string_view prefix) { return s.substr(0, prefix.size()) == prefix; }

// Assemble trajectories from per-frame records, enforcing one box per id per frame.
SpatialPriorSet assemble(const std::vector<std::pair<int, std::vector<Record>>>& frames) {
    SpatialPriorSet set;
    set.frame_count = frames.size();
    std::vector<int> order;
    std::map<int, BoxTrajectory> by_id;
    for (const auto& [line, records] : frames) {
        std::set<int> seen;
        for (const Record& r : records) {
            if (!seen.insert(r.id).second) {
                throw ParseError(line, "duplicate id " + std::to_string(r.id) + " within a frame");
            }
            if (!by_id.contains(r.id)) {
                order.push_back(r.id);
                by_id[r.id] = BoxTrajectory{r.id, r.name, {}};
            }
        }
    }
    for (std::size_t f = 0; f < frames.size(); ++f) {
        const auto& [line, records] = frames[f];
        for (int id : order) {
            auto it = std::find_if(records.begin(), records.end(), [id](const Record& r) { return r.id == id; });
            if (it == records.end()) {
                throw ParseError(line, "frame " + std::to_string(f + 1) + " has no box for id " + std::to_string(id));
            }
            by_id[id].boxes.push_back(it->box);
        }
    }
    std::sort(order.begin(), order.end());
    for (int id : order) set.trajectories.push_back(std::move(by_id[id]));
    return set;
}

}  // namespace

namespace {

SpatialPriorSet parse_llm_block(std::string_view text, int first_line) {
    std::vector<std::pair<int, std::vector<Record>>> frames;
    std::optional<std::string> background;
    std::string caption;
    int lineno = first_line - 1;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t nl = text.find('\n', pos);
        const std::string_view raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++lineno;
        const std::string_view line = trim(raw);
        if (line.empty()) continue;
        if (background) throw ParseError(lineno, "content after 'Background keyword:' line");
        if (starts_with(line, "Caption:")) {
            std::string_view rest = line;
            while (starts_with(rest, "Caption:")) rest = trim(rest.substr(8));
            caption = std::string(rest);
        } else if (starts_with(line, "Reasoning:")) {
            continue;
        } else if (starts_with(line, "Background keyword:")) {
            background = std::string(trim(line.substr(19)));
        } else if (starts_with(line, "Frame")) {
            const std::size_t colon = line.find(':');
            if (colon == std::string_view::npos) throw ParseError(lineno, "frame line without ':'");
            const std::string_view num = trim(line.substr(5, colon - 5));
            if (num.empty() || !std::all_of(num.begin(), num.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
                throw ParseError(lineno, "frame index is not a positive integer");
            }
            const std::size_t k = std::stoul(std::string(num));
            if (k != frames.size() + 1) {
                throw ParseError(lineno, "missing frame index " + std::to_string(frames.size() + 1) + " (found " +
                                             std::to_string(k) + ")");
            }
            frames.emplace_back(lineno, RecordListReader(line.substr(colon + 1), lineno).read());
        } else {
            throw ParseError(lineno, "unrecognized line");
        }
    }
    if (!background) throw ParseError(lineno, "missing 'Background keyword:' line");
    if (frames.empty()) throw ParseError(lineno, "no 'Frame k:' lines");
    SpatialPriorSet set = assemble(frames);
    set.background_keyword = *background;
    set.caption = caption;
    return set;
}

}  // namespace

SpatialPriorSet parse_llm_boxes(std::string_view text) { return parse_llm_block(text, 1); }

std::vector<SpatialPriorSet> parse_llm_examples(std::string_view text) {
    std::vector<SpatialPriorSet> sets;
    std::size_t block_start = 0, pos = 0;
    int line_offset = 0, block_line = 0;
    while (pos < text.size()) {
        const std::size_t nl = text.find('\n', pos);
        const std::size_t end = nl == std::string_view::npos ? text.size() : nl + 1;
        ++line_offset;
        if (starts_with(trim(text.substr(pos, end - pos)), "Background keyword:")) {
            sets.push_back(parse_llm_block(text.substr(block_start, end - block_start), block_line + 1));
            block_start = end;
            block_line = line_offset;
        }
        pos = end;
    }
    if (!trim(text.substr(block_start)).empty()) {
        throw ParseError(line_offset, "trailing block without 'Background keyword:' line");
    }
    return sets;
}

std::string serialize_llm_boxes(const SpatialPriorSet& set) {
    std::ostringstream out;
    if (!set.caption.empty()) out << "Caption: " << set.caption << '\n';
    for (std::size_t f = 0; f < set.frame_count; ++f) {
        out << "Frame " << (f + 1) << ": [";
        for (std::size_t t = 0; t < set.trajectories.size(); ++t) {
            const BoxTrajectory& tr = set.trajectories[t];
            const Box& b = tr.boxes[f];
            if (t) out << ", ";
            out << "{'id': " << tr.subject_id << ", 'name': '" << tr.name << "', 'box': [" << b.x << ", " << b.y
                << ", " << b.w << ", " << b.h << "]}";
        }
        out << "]\n";
    }
    out << "Background keyword: " << set.background_keyword << '\n';
    return out.str();
}

SpatialPriorSet parse_structured_boxes(std::string_view json_text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(1, std::string("invalid structured box file: ") + e.what());
    }
    try {
        std::vector<std::pair<int, std::vector<Record>>> frames;
        const auto& jframes = doc.at("frames");
        for (std::size_t f = 0; f < jframes.size(); ++f) {
            std::vector<Record> records;
            for (const auto& jr : jframes[f]) {
                const auto& jb = jr.at("box");
                if (!jb.is_array() || jb.size() != 4) throw ParseError(1, "box must have four entries");
                for (const auto& v : jb) {
                    if (!v.is_number_integer()) throw ParseError(1, "non-integer box entry");
                }
                records.push_back(Record{jr.at("id").get<int>(), jr.at("name").get<std::string>(),
                                         Box{jb[0].get<int>(), jb[1].get<int>(), jb[2].get<int>(), jb[3].get<int>()}});
            }
            frames.emplace_back(1, std::move(records));
        }
        if (frames.empty()) throw ParseError(1, "structured box file has no frames");
        SpatialPriorSet set = assemble(frames);
        if (doc.contains("frame_size")) {
            set.frame_width_px = doc["frame_size"].at(0).get<int>();
            set.frame_height_px = doc["frame_size"].at(1).get<int>();
        }
        set.background_keyword = doc.value("background", std::string());
        set.caption = doc.value("caption", std::string());
        return set;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(1, std::string("malformed structured box file: ") + e.what());
    }
}

std::string serialize_structured_boxes(const SpatialPriorSet& set) {
    nlohmann::json doc;
    doc["frame_size"] = {set.frame_width_px, set.frame_height_px};
    doc["background"] = set.background_keyword;
    if (!set.caption.empty()) doc["caption"] = set.caption;
    nlohmann::json frames = nlohmann::json::array();
    for (std::size_t f = 0; f < set.frame_count; ++f) {
        nlohmann::json frame = nlohmann::json::array();
        for (const BoxTrajectory& t : set.trajectories) {
            const Box& b = t.boxes[f];
            frame.push_back({{"id", t.subject_id}, {"name", t.name}, {"box", {b.x, b.y, b.w, b.h}}});
        }
        frames.push_back(std::move(frame));
    }
    doc["frames"] = std::move(frames);
    return doc.dump(2) + "\n";
}

SpatialPriorSet parse_box_text(std::string_view text) {
    const std::string_view t = trim(text);
    if (!t.empty() && t.front() == '{') return parse_structured_boxes(text);
    return parse_llm_boxes(text);
}

SpatialPriorSet load_box_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open box file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_box_text(buf.str());
}

std::string_view violation_name(ViolationKind kind) {
    switch (kind) {
        case ViolationKind::OutOfFrame:
            return "OUT_OF_FRAME";
        case ViolationKind::Velocity:
            return "VELOCITY";
        case ViolationKind::Degenerate:
            return "DEGENERATE";
    }
    return "UNKNOWN";
}

std::vector<Violation> validate_trajectories(const SpatialPriorSet& set, const ValidationLimits& limits) {
    std::vector<Violation> out;
    const int tol = limits.offscreen_tolerance_px;
    for (const BoxTrajectory& t : set.trajectories) {
        for (std::size_t f = 0; f < t.boxes.size(); ++f) {
            const Box& b = t.boxes[f];
            if (b.w <= 0 || b.h <= 0) {
                out.push_back({ViolationKind::Degenerate, t.subject_id, f + 1, "zero-area box"});
            }
            if (!limits.allow_offscreen &&
                (b.x < -tol || b.y < -tol || b.right() > set.frame_width_px + tol ||
                 b.bottom() > set.frame_height_px + tol)) {
                out.push_back({ViolationKind::OutOfFrame, t.subject_id, f + 1,
                               "box extends beyond the " + std::to_string(set.frame_width_px) + "x" +
                                   std::to_string(set.frame_height_px) + " frame"});
            }
            if (f > 0) {
                const Box& p = t.boxes[f - 1];
                const double dx = (b.x + 0.5 * b.w) - (p.x + 0.5 * p.w);
                const double dy = (b.y + 0.5 * b.h) - (p.y + 0.5 * p.h);
                const double step = std::hypot(dx, dy);
                if (step > limits.max_step_px) {
                    std::ostringstream msg;
                    msg << "center moves " << step << " px from frame " << f << " (limit " << limits.max_step_px << ")";
                    out.push_back({ViolationKind::Velocity, t.subject_id, f + 1, msg.str()});
                }
            }
        }
    }
    return out;
}

SpatialPriorSet clip_to_frame(SpatialPriorSet set) {
    for (BoxTrajectory& t : set.trajectories) {
        for (std::size_t f = 0; f < t.boxes.size(); ++f) {
            Box& b = t.boxes[f];
            const int x0 = std::clamp(b.x, 0, set.frame_width_px);
            const int y0 = std::clamp(b.y, 0, set.frame_height_px);
            const int x1 = std::clamp(b.right(), 0, set.frame_width_px);
            const int y1 = std::clamp(b.bottom(), 0, set.frame_height_px);
            const Box clipped{x0, y0, std::max(0, x1 - x0), std::max(0, y1 - y0)};
            if (!(clipped == b)) {
                set.warnings.push_back("clipped box of id " + std::to_string(t.subject_id) + " in frame " +
                                       std::to_string(f + 1) + " to the frame");
                b = clipped;
            }
        }
    }
    return set;
}

SpatialPriorSet resample_frames(const SpatialPriorSet& set, std::size_t target_frames) {
    if (set.frame_count < 2) throw InputError("resample_frames needs at least 2 source frames");
    if (target_frames < 2) throw InputError("resample_frames needs at least 2 target frames");
    SpatialPriorSet out = set;
    out.frame_count = target_frames;
    for (std::size_t ti = 0; ti < out.trajectories.size(); ++ti) {
        const std::vector<Box>& src = set.trajectories[ti].boxes;
        std::vector<Box> boxes;
        for (std::size_t k = 0; k < target_frames; ++k) {
            // Integer arithmetic for the source position keeps endpoints exact.
            const std::size_t num = k * (set.frame_count - 1);
            const std::size_t den = target_frames - 1;
            const std::size_t lo = num / den;
            const std::size_t hi = std::min(lo + 1, set.frame_count - 1);
            const double frac = static_cast<double>(num % den) / static_cast<double>(den);
            auto lerp = [frac](int a, int b) {
                return static_cast<int>(std::lround(a + (b - a) * frac));
            };
            const Box& a = src[lo];
            const Box& b = src[hi];
            const int x0 = lerp(a.x, b.x), y0 = lerp(a.y, b.y);
            const int x1 = lerp(a.right(), b.right()), y1 = lerp(a.bottom(), b.bottom());
            boxes.push_back(Box{x0, y0, x1 - x0, y1 - y0});
        }
        out.trajectories[ti].boxes = std::move(boxes);
    }
    return out;
}

std::vector<std::uint8_t> rasterize_box(const Box& box, int frame_w, int frame_h, std::size_t grid_h,
                                        std::size_t grid_w) {
    std::vector<std::uint8_t> cells(grid_h * grid_w, 0);
    for (std::size_t r = 0; r < grid_h; ++r) {
        const double cy = (static_cast<double>(r) + 0.5) * frame_h / static_cast<double>(grid_h);
        if (!(cy >= box.y && cy < box.bottom())) continue;
        for (std::size_t c = 0; c < grid_w; ++c) {
            const double cx = (static_cast<double>(c) + 0.5) * frame_w / static_cast<double>(grid_w);
            if (cx >= box.x && cx < box.right()) cells[r * grid_w + c] = 1;
        }
    }
    return cells;
}

SubjectMasks rasterize_masks(const SpatialPriorSet& set, std::size_t grid_h, std::size_t grid_w) {
    if (grid_h < 1 || grid_w < 1) throw ContractError("rasterize_masks needs a grid of at least 1x1");
    SubjectMasks out;
    out.grid_h = grid_h;
    out.grid_w = grid_w;
    out.frames = set.frame_count;
    for (const BoxTrajectory& t : set.trajectories) {
        auto& frames = out.masks[t.subject_id];
        for (std::size_t f = 0; f < t.boxes.size(); ++f) {
            frames.push_back(rasterize_box(t.boxes[f], set.frame_width_px, set.frame_height_px, grid_h, grid_w));
            if (std::none_of(frames.back().begin(), frames.back().end(), [](std::uint8_t v) { return v != 0; })) {
                out.warnings.push_back("mask of id " + std::to_string(t.subject_id) + " in frame " +
                                       std::to_string(f + 1) + " is empty at " + std::to_string(grid_h) + "x" +
                                       std::to_string(grid_w));
            }
        }
    }
    return out;
}

const Tensor& MaskSet::at(std::size_t token) const {
    auto it = by_token.find(token);
    if (it == by_token.end()) throw ContractError("no mask bound to token " + std::to_string(token));
    return it->second;
}

namespace {

bool name_mentions(const std::string& name, const std::string& word) {
    std::istringstream in(name);
    std::string w;
    while (in >> w) {
        std::transform(w.begin(), w.end(), w.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        if (w == word || w == word + "s" || word == w + "s") return true;
    }
    return false;
}

}  // namespace

MaskSet bind_masks(const SubjectMasks& masks, const SpatialPriorSet& set, const TokenSequence& tokens,
                   const SyntaxPairs& pairs) {
    MaskSet out;
    out.grid_h = masks.grid_h;
    out.grid_w = masks.grid_w;
    out.frames = masks.frames;
    const std::size_t cells = masks.grid_h * masks.grid_w;
    std::set<int> used;
    for (std::size_t k = 0; k < pairs.pairs.size(); ++k) {
        const NounVerbPair& p = pairs.pairs[k];
        const std::string& noun = tokens.at(p.noun).text;
        const BoxTrajectory* chosen = nullptr;
        for (const BoxTrajectory& t : set.trajectories) {
            if (!used.contains(t.subject_id) && name_mentions(t.name, noun)) {
                chosen = &t;
                break;
            }
        }
        if (!chosen) {
            for (const BoxTrajectory& t : set.trajectories) {
                if (!used.contains(t.subject_id)) {
                    chosen = &t;
                    break;
                }
            }
        }
        if (!chosen) {
            throw InputError("no box trajectory left for noun '" + noun + "' (token " + std::to_string(p.noun) + ")");
        }
        used.insert(chosen->subject_id);
        std::vector<double> data;
        data.reserve(masks.frames * cells);
        for (const auto& frame : masks.masks.at(chosen->subject_id)) {
            for (std::uint8_t v : frame) data.push_back(v ? 1.0 : 0.0);
        }
        Tensor m({masks.frames, cells}, std::move(data));
        out.by_token[p.noun] = m;
        out.by_token[p.verb] = m;
    }
    return out;
}

}  // namespace vidguide
