#pragma once

#include <chrono>
#include <cstdint>
#include <fstream>
#include <istream>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "error.hpp"

namespace vgold {

/// Milliseconds since an arbitrary epoch.
class Clock {
public:
    virtual ~Clock() = default;
    virtual std::int64_t now_ms() = 0;
};

class SystemClock final : public Clock {
public:
    std::int64_t now_ms() override {
        using namespace std::chrono;
        return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
    }
};

/// Clock advanced explicitly; simulated sessions move it by each HIT's elapsed time.
class ManualClock final : public Clock {
public:
    explicit ManualClock(std::int64_t start_ms = 0) : t_(start_ms) {}
    std::int64_t now_ms() override { return t_; }
    void advance_ms(std::int64_t d) { t_ += d; }
    void set_ms(std::int64_t t) { t_ = t; }

private:
    std::int64_t t_;
};

enum class EventKind { HitAssigned, Submitted, GoldFeedback, Warning, Bonus, Block, Abandon };

inline const char* event_kind_label(EventKind k) {
    switch (k) {
    case EventKind::HitAssigned: return "hit_assigned";
    case EventKind::Submitted: return "submitted";
    case EventKind::GoldFeedback: return "gold_feedback";
    case EventKind::Warning: return "warning";
    case EventKind::Bonus: return "bonus";
    case EventKind::Block: return "block";
    case EventKind::Abandon: return "abandon";
    }
    return "?";
}

inline EventKind event_kind_from_string(const std::string& s) {
    static const EventKind all[] = {EventKind::HitAssigned, EventKind::Submitted, EventKind::GoldFeedback,
                                    EventKind::Warning,     EventKind::Bonus,     EventKind::Block,
                                    EventKind::Abandon};
    for (auto k : all)
        if (s == event_kind_label(k)) return k;
    throw ParseError("unknown event kind " + s);
}

/// One log record. `seq` orders the whole log; `worker_seq` orders one worker's events.
struct SessionEvent {
    std::uint64_t seq = 0;
    std::uint64_t worker_seq = 0;
    EventKind kind = EventKind::HitAssigned;
    std::string worker_id;
    std::string hit_id;
    std::int64_t timestamp_ms = 0;
    nlohmann::json payload = nlohmann::json::object();

    friend bool operator==(const SessionEvent&, const SessionEvent&) = default;
};

inline nlohmann::json to_json(const SessionEvent& e) {
    return {{"seq", e.seq},
            {"worker_seq", e.worker_seq},
            {"kind", event_kind_label(e.kind)},
            {"worker_id", e.worker_id},
            {"hit_id", e.hit_id},
            {"ts", e.timestamp_ms},
            {"payload", e.payload}};
}

inline SessionEvent event_from_json(const nlohmann::json& j) {
    SessionEvent e;
    e.seq = j.at("seq").get<std::uint64_t>();
    e.worker_seq = j.at("worker_seq").get<std::uint64_t>();
    e.kind = event_kind_from_string(j.at("kind").get<std::string>());
    e.worker_id = j.at("worker_id").get<std::string>();
    e.hit_id = j.value("hit_id", std::string{});
    e.timestamp_ms = j.value("ts", std::int64_t{0});
    e.payload = j.value("payload", nlohmann::json::object());
    return e;
}

/// In-memory append-only log with an optional line-delimited JSON sink.
class EventLog {
public:
    EventLog() = default;

    /// Appends every future event to `path`, creating it if needed.
    void attach_file(const std::string& path) {
        auto f = std::make_unique<std::ofstream>(path, std::ios::app);
        if (!*f) throw IoError("cannot open event log " + path);
        sink_ = std::move(f);
        sink_path_ = path;
    }

    void append(const SessionEvent& e) {
        if (!events_.empty() && e.seq <= events_.back().seq) throw ContractError("event log is append-only");
        events_.push_back(e);
        if (sink_) {
            *sink_ << to_json(e).dump() << '\n';
            sink_->flush();
            if (!*sink_) throw IoError("write failed on event log " + sink_path_);
        }
    }

    [[nodiscard]] const std::vector<SessionEvent>& events() const { return events_; }
    [[nodiscard]] std::size_t size() const { return events_.size(); }

    void write(std::ostream& out) const {
        for (const auto& e : events_) out << to_json(e).dump() << '\n';
    }

private:
    std::vector<SessionEvent> events_;
    std::unique_ptr<std::ofstream> sink_;
    std::string sink_path_;
};

inline std::vector<SessionEvent> parse_events(std::istream& in, const std::string& source = "<events>") {
    std::vector<SessionEvent> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(event_from_json(nlohmann::json::parse(line)));
        } catch (const std::exception& e) {
            throw ParseError(source + ":" + std::to_string(lineno) + ": bad event: " + e.what());
        }
    }
    return out;
}

inline std::vector<SessionEvent> load_events(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open event log " + path);
    return parse_events(in, path);
}

} // namespace vgold
