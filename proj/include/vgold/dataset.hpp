#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "geometry.hpp"
#include "rng.hpp"

namespace vgold {

/// One annotation item; the number of ground-truth boxes is its effort level.
struct Scene {
    std::string scene_id;
    int width = 0;
    int height = 0;
    std::vector<BoundingBox> gt_boxes;

    [[nodiscard]] int object_count() const { return static_cast<int>(gt_boxes.size()); }

    friend bool operator==(const Scene&, const Scene&) = default;
};

using CountHistogram = std::map<int, int>;

/// Immutable, validated collection of scenes.
class Corpus {
public:
    Corpus() = default;

    /// Throws ContractError if any scene breaks an invariant (no boxes, invalid or
    /// duplicated boxes, duplicated scene ids).
    explicit Corpus(std::vector<Scene> scenes) : scenes_(std::move(scenes)) {
        for (std::size_t i = 0; i < scenes_.size(); ++i) {
            const Scene& s = scenes_[i];
            if (auto why = scene_problem(s); !why.empty()) throw ContractError("scene " + s.scene_id + ": " + why);
            if (!index_.emplace(s.scene_id, i).second) throw ContractError("duplicate scene_id " + s.scene_id);
            ++histogram_[s.object_count()];
        }
    }

    [[nodiscard]] const std::vector<Scene>& scenes() const { return scenes_; }
    [[nodiscard]] const CountHistogram& count_histogram() const { return histogram_; }
    [[nodiscard]] std::size_t size() const { return scenes_.size(); }
    [[nodiscard]] bool empty() const { return scenes_.empty(); }

    [[nodiscard]] const Scene* find(const std::string& id) const {
        auto it = index_.find(id);
        return it == index_.end() ? nullptr : &scenes_[it->second];
    }

    [[nodiscard]] const Scene& at(const std::string& id) const {
        if (const Scene* s = find(id)) return *s;
        throw ContractError("unknown scene_id " + id);
    }

    [[nodiscard]] std::size_t index_of(const std::string& id) const {
        auto it = index_.find(id);
        if (it == index_.end()) throw ContractError("unknown scene_id " + id);
        return it->second;
    }

    [[nodiscard]] int max_count() const { return histogram_.empty() ? 0 : histogram_.rbegin()->first; }
    [[nodiscard]] int min_count() const { return histogram_.empty() ? 0 : histogram_.begin()->first; }

    friend bool operator==(const Corpus& a, const Corpus& b) { return a.scenes_ == b.scenes_; }

    /// Empty string when the scene satisfies every invariant.
    static std::string scene_problem(const Scene& s) {
        if (s.width <= 0 || s.height <= 0) return "non-positive extent";
        if (s.gt_boxes.empty()) return "no ground-truth boxes";
        for (std::size_t i = 0; i < s.gt_boxes.size(); ++i) {
            const auto& b = s.gt_boxes[i];
            if (!b.valid()) return "box " + std::to_string(i) + " has w or h <= 0 or non-finite coordinates";
            for (std::size_t j = 0; j < i; ++j)
                if (s.gt_boxes[j] == b) return "box " + std::to_string(i) + " duplicates box " + std::to_string(j);
        }
        return {};
    }

private:
    std::vector<Scene> scenes_;
    std::unordered_map<std::string, std::size_t> index_;
    CountHistogram histogram_;
};

/// A worker's submission for one scene.
struct AnnotationSet {
    std::string scene_id;
    std::vector<BoundingBox> boxes;
    std::string worker_id;
    double elapsed = 0.0;
    /// Per-box contributor ids for assembled multi-worker annotations; empty otherwise.
    std::vector<std::string> box_contributors;
};

inline CountHistogram uniform_histogram(int min_count = 1, int max_count = 14, int per_count = 10) {
    CountHistogram h;
    for (int n = min_count; n <= max_count; ++n) h[n] = per_count;
    return h;
}

// ---------------------------------------------------------------------------
// Line-delimited JSON corpus files
// ---------------------------------------------------------------------------

enum class CoordMode { Absolute, Normalized };

struct RejectedRecord {
    int line = 0;
    std::string scene_id;
    std::string reason;
};

struct LoadReport {
    Corpus corpus;
    CoordMode coords = CoordMode::Absolute;
    int clamped_boxes = 0;
    std::vector<RejectedRecord> rejected;

    [[nodiscard]] std::string rejection_listing() const {
        std::string out;
        for (const auto& r : rejected)
            out += "line " + std::to_string(r.line) + " scene " + r.scene_id + ": " + r.reason + "\n";
        return out;
    }
};

namespace detail {

inline BoundingBox box_from_json(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 4) throw std::invalid_argument("box must be [x,y,w,h]");
    for (const auto& v : j)
        if (!v.is_number()) throw std::invalid_argument("box coordinates must be numbers");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

inline nlohmann::json box_to_json(const BoundingBox& b) { return nlohmann::json::array({b.x, b.y, b.w, b.h}); }

inline std::vector<BoundingBox> boxes_from_json(const nlohmann::json& j) {
    if (!j.is_array()) throw std::invalid_argument("boxes must be an array");
    std::vector<BoundingBox> out;
    out.reserve(j.size());
    for (const auto& b : j) out.push_back(box_from_json(b));
    return out;
}

inline nlohmann::json boxes_to_json(const std::vector<BoundingBox>& boxes) {
    auto arr = nlohmann::json::array();
    for (const auto& b : boxes) arr.push_back(box_to_json(b));
    return arr;
}

inline bool blank(const std::string& s) { return s.find_first_not_of(" \t\r\n") == std::string::npos; }

} // namespace detail

/// Reads a corpus. Malformed lines raise ParseError naming the line; records whose
/// boxes are degenerate or duplicated are rejected and listed in the report; boxes
/// sticking out of the scene are clamped and counted.
inline LoadReport parse_corpus(std::istream& in, const std::string& source = "<corpus>") {
    LoadReport report;
    std::vector<Scene> scenes;
    std::map<std::string, int> seen_ids;
    std::string line;
    int lineno = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::blank(line)) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(source + ":" + std::to_string(lineno) + ": malformed JSON: " + e.what());
        }
        if (!have_header) {
            if (!j.is_object() || !j.contains("coords"))
                throw ParseError(source + ":" + std::to_string(lineno) + ": expected header {\"coords\": ...}");
            const auto mode = j["coords"];
            if (mode == "absolute") report.coords = CoordMode::Absolute;
            else if (mode == "normalized") report.coords = CoordMode::Normalized;
            else throw ParseError(source + ":" + std::to_string(lineno) + ": coords must be absolute|normalized");
            have_header = true;
            continue;
        }
        Scene s;
        try {
            s.scene_id = j.at("scene_id").get<std::string>();
            s.width = j.at("width").get<int>();
            s.height = j.at("height").get<int>();
            s.gt_boxes = detail::boxes_from_json(j.at("boxes"));
        } catch (const std::exception& e) {
            throw ParseError(source + ":" + std::to_string(lineno) + ": bad record: " + e.what());
        }
        if (s.width <= 0 || s.height <= 0) {
            report.rejected.push_back({lineno, s.scene_id, "non-positive extent"});
            continue;
        }
        if (report.coords == CoordMode::Normalized) {
            for (auto& b : s.gt_boxes) b = {b.x * s.width, b.y * s.height, b.w * s.width, b.h * s.height};
        }
        std::string problem;
        int clamped = 0;
        for (std::size_t i = 0; i < s.gt_boxes.size() && problem.empty(); ++i) {
            auto& b = s.gt_boxes[i];
            if (!b.valid()) {
                problem = "box " + std::to_string(i) + " has w or h <= 0";
                break;
            }
            if (!within_extent(b, s.width, s.height)) {
                b = clamp_to_extent(b, s.width, s.height);
                if (!b.valid()) problem = "box " + std::to_string(i) + " lies outside the scene";
                ++clamped;
            }
        }
        if (problem.empty()) problem = Corpus::scene_problem(s);
        if (problem.empty() && seen_ids.count(s.scene_id))
            problem = "duplicate scene_id (first at line " + std::to_string(seen_ids[s.scene_id]) + ")";
        if (!problem.empty()) {
            report.rejected.push_back({lineno, s.scene_id, problem});
            continue;
        }
        report.clamped_boxes += clamped;
        seen_ids[s.scene_id] = lineno;
        scenes.push_back(std::move(s));
    }
    if (scenes.empty()) throw ParseError(source + ": no scenes");
    report.corpus = Corpus(std::move(scenes));
    return report;
}

inline LoadReport load_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open corpus file " + path);
    return parse_corpus(in, path);
}

/// Writes the absolute-coordinate form; parse_corpus(serialize_corpus(c)) == c.
inline void serialize_corpus(const Corpus& corpus, std::ostream& out) {
    out << nlohmann::json{{"coords", "absolute"}}.dump() << '\n';
    for (const auto& s : corpus.scenes()) {
        nlohmann::json j;
        j["scene_id"] = s.scene_id;
        j["width"] = s.width;
        j["height"] = s.height;
        j["boxes"] = detail::boxes_to_json(s.gt_boxes);
        out << j.dump() << '\n';
    }
}

inline std::string serialize_corpus(const Corpus& corpus) {
    std::ostringstream os;
    serialize_corpus(corpus, os);
    return os.str();
}

inline void save_corpus(const Corpus& corpus, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write corpus file " + path);
    serialize_corpus(corpus, out);
}

// ---------------------------------------------------------------------------
// Prediction / annotation files
// ---------------------------------------------------------------------------

inline nlohmann::json annotation_to_json(const AnnotationSet& a) {
    nlohmann::json j{{"scene_id", a.scene_id},
                     {"worker_id", a.worker_id},
                     {"boxes", detail::boxes_to_json(a.boxes)},
                     {"elapsed", a.elapsed}};
    if (!a.box_contributors.empty()) j["contributors"] = a.box_contributors;
    return j;
}

inline std::vector<AnnotationSet> parse_annotations(std::istream& in, const std::string& source = "<pred>") {
    std::vector<AnnotationSet> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::blank(line)) continue;
        try {
            auto j = nlohmann::json::parse(line);
            AnnotationSet a;
            a.scene_id = j.at("scene_id").get<std::string>();
            a.worker_id = j.value("worker_id", std::string{});
            a.boxes = detail::boxes_from_json(j.at("boxes"));
            a.elapsed = j.value("elapsed", 0.0);
            if (a.elapsed < 0.0) throw std::invalid_argument("elapsed must be >= 0");
            if (j.contains("contributors")) a.box_contributors = j["contributors"].get<std::vector<std::string>>();
            out.push_back(std::move(a));
        } catch (const std::exception& e) {
            throw ParseError(source + ":" + std::to_string(lineno) + ": bad annotation record: " + e.what());
        }
    }
    return out;
}

inline std::vector<AnnotationSet> load_annotations(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open annotation file " + path);
    return parse_annotations(in, path);
}

inline void write_annotations(const std::vector<AnnotationSet>& anns, std::ostream& out) {
    for (const auto& a : anns) out << annotation_to_json(a).dump() << '\n';
}

// ---------------------------------------------------------------------------
// Synthetic scenes
// ---------------------------------------------------------------------------

/// Box-size distribution for synthetic scenes. Areas are log-uniform between the
/// two fractions of the scene area; the upper fraction shrinks as count^-count_exponent
/// (crowded scenes hold smaller objects) but never below the lower one.
struct SizeModel {
    int width = 1024;
    int height = 768;
    double min_area_frac = 0.0008;
    double max_area_frac = 0.06;
    double count_exponent = 0.5;
    double min_aspect = 1.0; // height / width
    double max_aspect = 1.4;
    double max_overlap = 0.3;
    int max_box_tries = 400;
    int max_scene_restarts = 25;
};

inline nlohmann::json to_json(const SizeModel& m) {
    return {{"width", m.width},
            {"height", m.height},
            {"min_area_frac", m.min_area_frac},
            {"max_area_frac", m.max_area_frac},
            {"count_exponent", m.count_exponent},
            {"min_aspect", m.min_aspect},
            {"max_aspect", m.max_aspect},
            {"max_overlap", m.max_overlap},
            {"max_box_tries", m.max_box_tries},
            {"max_scene_restarts", m.max_scene_restarts}};
}

inline SizeModel size_model_from_json(const nlohmann::json& j) {
    SizeModel m;
    m.width = j.value("width", m.width);
    m.height = j.value("height", m.height);
    m.min_area_frac = j.value("min_area_frac", m.min_area_frac);
    m.max_area_frac = j.value("max_area_frac", m.max_area_frac);
    m.count_exponent = j.value("count_exponent", m.count_exponent);
    m.min_aspect = j.value("min_aspect", m.min_aspect);
    m.max_aspect = j.value("max_aspect", m.max_aspect);
    m.max_overlap = j.value("max_overlap", m.max_overlap);
    m.max_box_tries = j.value("max_box_tries", m.max_box_tries);
    m.max_scene_restarts = j.value("max_scene_restarts", m.max_scene_restarts);
    return m;
}

namespace detail {

inline double round_px(double v) { return std::round(v * 100.0) / 100.0; }

inline bool try_pack_scene(Rng& rng, int count, const SizeModel& m, std::vector<BoundingBox>& out) {
    const double extent_area = static_cast<double>(m.width) * m.height;
    const double lo = m.min_area_frac * extent_area;
    const double hi = std::max(lo, m.max_area_frac * std::pow(count, -m.count_exponent) * extent_area);
    std::uniform_real_distribution<double> log_area(std::log(lo), std::log(hi));
    std::uniform_real_distribution<double> log_aspect(std::log(m.min_aspect), std::log(m.max_aspect));
    out.clear();
    for (int k = 0; k < count; ++k) {
        bool placed = false;
        for (int attempt = 0; attempt < m.max_box_tries && !placed; ++attempt) {
            const double area = std::exp(log_area(rng));
            const double aspect = std::exp(log_aspect(rng));
            const double w = std::sqrt(area / aspect);
            const double h = w * aspect;
            if (w > m.width || h > m.height) continue;
            const double x = std::uniform_real_distribution<double>(0.0, m.width - w)(rng);
            const double y = std::uniform_real_distribution<double>(0.0, m.height - h)(rng);
            BoundingBox b{round_px(x), round_px(y), round_px(w), round_px(h)};
            b = clamp_to_extent(b, m.width, m.height);
            if (!b.valid()) continue;
            bool ok = true;
            for (const auto& other : out)
                if (other == b || iou(other, b) > m.max_overlap) {
                    ok = false;
                    break;
                }
            if (ok) {
                out.push_back(b);
                placed = true;
            }
        }
        if (!placed) return false;
    }
    return true;
}

} // namespace detail

/// Deterministic synthetic corpus: `histogram[n]` scenes holding n boxes each.
/// Every scene draws from its own stream so the result depends only on the arguments.
inline Corpus generate_corpus(std::uint64_t seed, const CountHistogram& histogram = uniform_histogram(),
                              const SizeModel& model = {}) {
    if (model.width <= 0 || model.height <= 0) throw ConfigError("size model extent must be positive");
    if (!(model.min_area_frac > 0.0) || model.min_area_frac > 1.0 || model.max_area_frac < model.min_area_frac ||
        model.max_area_frac > 1.0)
        throw ConfigError("size model area fractions must satisfy 0 < min <= max <= 1");
    if (!(model.min_aspect > 0.0) || model.max_aspect < model.min_aspect)
        throw ConfigError("size model aspect bounds invalid");
    std::vector<Scene> scenes;
    for (const auto& [count, copies] : histogram) {
        if (copies < 0) throw ConfigError("histogram values must be >= 0");
        if (copies > 0 && count < 1) throw ConfigError("object counts must be >= 1");
        for (int i = 0; i < copies; ++i) {
            char id[32];
            std::snprintf(id, sizeof id, "s%02d-%02d", count, i);
            Rng rng = make_rng(seed, "scene", count, i);
            Scene s{id, model.width, model.height, {}};
            bool ok = false;
            for (int r = 0; r < model.max_scene_restarts && !ok; ++r) ok = detail::try_pack_scene(rng, count, model, s.gt_boxes);
            if (!ok)
                throw PackingError("cannot pack " + std::to_string(count) + " boxes into " +
                                   std::to_string(model.width) + "x" + std::to_string(model.height) + " for scene " + id +
                                   " (count " + std::to_string(count) + ", copy " + std::to_string(i) + ")");
            scenes.push_back(std::move(s));
        }
    }
    return Corpus(std::move(scenes));
}

} // namespace vgold
