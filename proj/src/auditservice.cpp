#include "rla/auditservice.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "rla/assorters.hpp"
#include "rla/error.hpp"
#include "rla/margins.hpp"

namespace rla {

using nlohmann::json;

namespace {

constexpr std::size_t kRecentSteps = 20;

ServiceError unprocessable(const std::string& what) { return ServiceError(422, what); }
ServiceError conflict(const std::string& what) { return ServiceError(409, what); }

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_atomic(const std::filesystem::path& path, const std::string& text) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out << text;
        if (!out.flush()) throw Error("cannot write " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace

std::string_view to_string(SessionStatus s) {
    switch (s) {
        case SessionStatus::open: return "open";
        case SessionStatus::certified: return "certified";
        case SessionStatus::full_count_required: return "full_count_required";
        case SessionStatus::closed: return "closed";
    }
    return "?";
}

void Session::build(const json& config) {
    config_ = config;
    id_ = config.at("id").get<std::string>();
    try {
        contest_ = contest_from_json(config.at("contest"));
        const json& records = config.at("cvrs");
        if (!records.is_array()) throw ParseError("cvrs must be an array of {id, vote} records");
        std::vector<CardRecord> cards;
        cards.reserve(records.size());
        for (std::size_t i = 0; i < records.size(); ++i) {
            const json& r = records[i];
            try {
                cards.push_back({r.at("id").get<std::string>(), vote_from_json(r.at("vote"), contest_)});
            } catch (const std::exception& e) {
                throw ParseError("cvrs[" + std::to_string(i) + "]: " + e.what());
            }
        }
        CvrSet cvrs(std::move(cards));
        if (cvrs.empty()) throw ParseError("no CVRs supplied");
        for (const auto& r : cvrs) {
            index_[r.card_id] = card_ids_.size();
            card_ids_.push_back(r.card_id);
            cvrs_.push_back(r.vote);
        }
        const auto N = static_cast<Count>(cvrs_.size());

        audit_config_.alpha = config.value("alpha", 0.05);
        audit_config_.seed = config.value("seed", std::uint64_t{0});
        if (config.contains("max_draws")) audit_config_.max_draws = config.at("max_draws").get<std::int64_t>();
        if (!(audit_config_.alpha > 0 && audit_config_.alpha < 1)) {
            throw ParseError("alpha must lie strictly between 0 and 1");
        }
        audit_config_.validate();

        std::optional<EstimatorConfig> estimator;
        if (config.contains("estimator")) estimator = estimator_from_json(config.at("estimator"));

        const std::string method = config.value("method", std::string("mismatch"));
        if (method == "mismatch") {
            MarginReport margin;
            if (config.contains("margin")) {
                margin = external_margin_from_json(config.at("margin"), N);
            } else if (contest_.kind == ContestKind::plurality) {
                margin = plurality_cvr_margin(cvrs, contest_);
            } else {
                throw ParseError("a mismatch audit of this contest needs margin.V_minus");
            }
            targets_.push_back(estimator ? mismatch_target(margin, *estimator) : mismatch_target(margin));
        } else if (method == "comparison") {
            AssertionSet assertions;
            if (contest_.kind == ContestKind::plurality) {
                assertions = plurality_assertions(contest_, cvrs_);
            } else if (contest_.kind == ContestKind::irv) {
                if (!config.contains("assertions")) throw ParseError("a comparison audit of an IRV contest needs assertions");
                assertions = irv_assertion_assorters(config.at("assertions"), contest_, cvrs_);
            } else {
                throw ParseError("comparison audits are not available for STV contests");
            }
            for (const auto& a : assertions.assertions) {
                targets_.push_back(estimator ? comparison_target(a, *estimator) : comparison_target(a));
            }
        } else {
            throw ParseError("method must be mismatch or comparison");
        }
        specs_ = run_specs(targets_);
        order_ = sample_plan(audit_config_.seed, cvrs_.size());
        run_ = std::make_unique<AuditRun>(specs_, N, audit_config_);
    } catch (const ServiceError&) {
        throw;
    } catch (const json::exception& e) {
        throw unprocessable(e.what());
    } catch (const std::exception& e) {
        throw unprocessable(e.what());
    }
}

std::unique_ptr<Session> Session::create(const std::string& id, const json& request, const std::filesystem::path& dir) {
    if (!request.is_object()) throw unprocessable("request body must be a JSON object");
    json config = request;
    config["id"] = id;
    std::unique_ptr<Session> s(new Session());
    s->dir_ = dir;
    s->build(config);
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "trail.ndjson", std::ios::trunc).close();
    s->append({{"event", "plan"}, {"seed", s->audit_config_.seed}, {"N", s->order_.size()}, {"order", s->order_}}, true);
    // config.json appears last: a directory without it is an incomplete creation.
    write_atomic(dir / "config.json", config.dump() + "\n");
    return s;
}

std::unique_ptr<Session> Session::load(const std::filesystem::path& dir) {
    std::unique_ptr<Session> s(new Session());
    s->dir_ = dir;
    s->build(json::parse(read_file(dir / "config.json")));

    std::vector<std::string> lines;
    {
        std::istringstream in(read_file(dir / "trail.ndjson"));
        for (std::string line; std::getline(in, line);) {
            if (!line.empty()) lines.push_back(line);
        }
    }
    std::vector<json> logged_steps, computed_steps;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        json e;
        try {
            e = json::parse(lines[i]);
        } catch (const json::exception&) {
            // A torn final line was never acknowledged.
            if (i + 1 == lines.size()) {
                std::string kept;
                for (std::size_t k = 0; k < i; ++k) kept += lines[k] + "\n";
                write_atomic(dir / "trail.ndjson", kept);
                break;
            }
            throw Error(dir.string() + ": trail line " + std::to_string(i + 1) + " is not JSON");
        }
        const std::string kind = e.value("event", std::string());
        if (kind == "plan") {
            if (e.at("order").get<std::vector<std::size_t>>() != s->order_) {
                throw Error(dir.string() + ": logged sample order differs from the seed's order");
            }
        } else if (kind == "batch") {
            s->window_ = std::max(s->window_, e.at("until").get<std::int64_t>());
        } else if (kind == "mvr") {
            const auto card = s->index_.at(e.at("card_id").get<std::string>());
            const auto pos = static_cast<std::int64_t>(std::find(s->order_.begin(), s->order_.end(), card) - s->order_.begin());
            s->pending_[pos] = vote_from_json(e.at("vote"), s->contest_);
            s->apply_ready(false, &computed_steps);
        } else if (kind == "step") {
            logged_steps.push_back(std::move(e));
        } else if (kind == "close") {
            s->closed_ = true;
        } else {
            throw Error(dir.string() + ": unknown trail event '" + kind + "'");
        }
    }
    if (logged_steps.size() > computed_steps.size()) {
        throw Error(dir.string() + ": trail has more steps than its votes produce");
    }
    for (std::size_t i = 0; i < logged_steps.size(); ++i) {
        if (logged_steps[i] != computed_steps[i]) {
            throw Error(dir.string() + ": step " + std::to_string(i + 1) + " does not match its recomputation");
        }
    }
    // Steps lost in a crash after their vote was persisted.
    for (std::size_t i = logged_steps.size(); i < computed_steps.size(); ++i) s->append(computed_steps[i], false);
    return s;
}

void Session::append(const json& event, bool sync) {
    const std::string line = event.dump() + "\n";
    const auto path = dir_ / "trail.ndjson";
    int fd = ::open(path.c_str(), O_WRONLY | O_APPEND | O_CREAT, 0644);
    if (fd < 0) throw ServiceError(500, "cannot open audit trail");
    std::size_t written = 0;
    while (written < line.size()) {
        ssize_t n = ::write(fd, line.data() + written, line.size() - written);
        if (n <= 0) {
            ::close(fd);
            throw ServiceError(500, "cannot write audit trail");
        }
        written += static_cast<std::size_t>(n);
    }
    if (sync && ::fsync(fd) != 0) {
        ::close(fd);
        throw ServiceError(500, "cannot sync audit trail");
    }
    ::close(fd);
}

void Session::apply_ready(bool write_steps, std::vector<json>* replayed_steps) {
    std::vector<double> xs(targets_.size());
    while (run_->decision() == Decision::in_progress) {
        auto it = pending_.find(run_->draws());
        if (it == pending_.end()) break;
        const std::size_t card = order_[static_cast<std::size_t>(it->first)];
        const Vote ballot = it->second;
        pending_.erase(it);
        for (std::size_t t = 0; t < targets_.size(); ++t) xs[t] = to_double(targets_[t].value(ballot, cvrs_[card]));
        auto steps = run_->observe(xs);
        if (ballot != cvrs_[card]) ++mismatches_;
        json line = log_line(run_->draws(), card_ids_[card], to_json(ballot, contest_), steps, specs_);
        line["event"] = "step";
        if (write_steps) append(line, false);
        if (replayed_steps) replayed_steps->push_back(line);
        recent_.push_back(line);
        if (recent_.size() > kRecentSteps) recent_.erase(recent_.begin());
    }
}

SessionStatus Session::status_unlocked_enum() const {
    if (closed_) return SessionStatus::closed;
    switch (run_->decision()) {
        case Decision::certified: return SessionStatus::certified;
        case Decision::full_count: return SessionStatus::full_count_required;
        case Decision::in_progress: break;
    }
    return SessionStatus::open;
}

json Session::next(std::int64_t k) {
    std::unique_lock lock(mutex_);
    if (k < 1) throw unprocessable("k must be at least 1");
    if (status_unlocked_enum() != SessionStatus::open) {
        throw conflict("session is " + std::string(to_string(status_unlocked_enum())));
    }
    const std::int64_t first = run_->draws();
    const auto N = static_cast<std::int64_t>(order_.size());
    const std::int64_t remaining = N - first;
    const std::int64_t count = std::min(k, remaining);
    if (first + count > window_) {
        append({{"event", "batch"}, {"until", first + count}}, true);
        window_ = first + count;
    }
    json cards = json::array();
    json ids = json::array();
    for (std::int64_t p = first; p < first + count; ++p) {
        const std::string& id = card_ids_[order_[static_cast<std::size_t>(p)]];
        cards.push_back({{"card_id", id}, {"position", p + 1}, {"entered", pending_.count(p) > 0}});
        ids.push_back(id);
    }
    return {{"card_ids", ids}, {"cards", cards}, {"remaining", remaining}, {"truncated", k > remaining}};
}

json Session::submit(const std::string& card_id, const json& vote_json) {
    std::unique_lock lock(mutex_);
    if (status_unlocked_enum() != SessionStatus::open) {
        throw conflict("session is " + std::string(to_string(status_unlocked_enum())));
    }
    auto idx = index_.find(card_id);
    if (idx == index_.end()) throw unprocessable("unknown card id '" + card_id + "'");
    const auto pos =
        static_cast<std::int64_t>(std::find(order_.begin(), order_.end(), idx->second) - order_.begin());
    if (pos < run_->draws() || pending_.count(pos)) throw conflict("card '" + card_id + "' already has a recorded vote");
    const std::int64_t limit = std::max(window_, run_->draws() + 1);
    if (pos >= limit) {
        throw conflict("card '" + card_id + "' is not in the current batch; next card is '" +
                       card_ids_[order_[static_cast<std::size_t>(run_->draws())]] + "'");
    }
    Vote vote;
    try {
        vote = vote_from_json(vote_json, contest_);
    } catch (const std::exception& e) {
        throw unprocessable(std::string("vote: ") + e.what());
    }
    append({{"event", "mvr"}, {"card_id", card_id}, {"vote", to_json(vote, contest_)}}, true);
    pending_[pos] = vote;
    apply_ready(true, nullptr);
    json out = status_unlocked();
    out["accepted"] = {{"card_id", card_id}, {"position", pos + 1}, {"applied", !pending_.count(pos)}};
    return out;
}

json Session::close() {
    std::unique_lock lock(mutex_);
    const SessionStatus s = status_unlocked_enum();
    if (s == SessionStatus::open) throw conflict("audit is still in progress");
    if (s == SessionStatus::closed) throw conflict("session is already closed");
    append({{"event", "close"}}, true);
    closed_ = true;
    return status_unlocked();
}

json Session::status_unlocked() const {
    json assertions = json::array();
    for (std::size_t i = 0; i < specs_.size(); ++i) {
        const TestState& st = run_->state(i);
        assertions.push_back({{"label", specs_[i].label},
                              {"status", std::string(to_string(run_->status(i)))},
                              {"p_value", st.p_value()},
                              {"T", std::isfinite(st.T()) ? json(st.T()) : json(nullptr)}});
    }
    const AuditResult r = run_->result();
    return {{"id", id_},
            {"status", std::string(to_string(status_unlocked_enum()))},
            {"decision", std::string(to_string(run_->decision()))},
            {"draws", run_->draws()},
            {"N", order_.size()},
            {"alpha", audit_config_.alpha},
            {"p_value", run_->p_value()},
            {"assertions", assertions},
            {"mismatches", mismatches_},
            {"pending", pending_.size()},
            {"window", window_},
            {"recent", recent_}};
}

json Session::status() const {
    std::shared_lock lock(mutex_);
    return status_unlocked();
}

json Session::describe() const {
    std::shared_lock lock(mutex_);
    json labels = json::array();
    for (const auto& s : specs_) labels.push_back(s.label);
    return {{"id", id_},
            {"contest", to_json(contest_)},
            {"N", cvrs_.size()},
            {"method", config_.value("method", std::string("mismatch"))},
            {"alpha", audit_config_.alpha},
            {"seed", audit_config_.seed},
            {"assertions", labels},
            {"status", std::string(to_string(status_unlocked_enum()))}};
}

std::int64_t Session::draws() const {
    std::shared_lock lock(mutex_);
    return run_->draws();
}

SessionStatus Session::session_status() const {
    std::shared_lock lock(mutex_);
    return status_unlocked_enum();
}

ReplayReport Session::verify_trail() const {
    std::shared_lock lock(mutex_);
    std::istringstream in(read_file(dir_ / "trail.ndjson"));
    std::ostringstream steps;
    for (std::string line; std::getline(in, line);) {
        if (line.find("\"event\":\"step\"") != std::string::npos) steps << line << '\n';
    }
    LinkedInstance instance;
    instance.contest = contest_;
    instance.card_ids = card_ids_;
    instance.cvrs = cvrs_;
    instance.ballots = cvrs_;
    std::istringstream log(steps.str());
    return replay_audit_log(log, instance, targets_, audit_config_);
}

AuditService::AuditService(std::filesystem::path root) : root_(std::move(root)) {
    std::filesystem::create_directories(root_);
    for (const auto& entry : std::filesystem::directory_iterator(root_)) {
        if (!entry.is_directory() || !std::filesystem::exists(entry.path() / "config.json")) continue;
        std::shared_ptr<Session> s = Session::load(entry.path());
        sessions_[s->id()] = std::move(s);
    }
}

json AuditService::create(const json& request) {
    std::string id;
    {
        static std::mutex rng_mutex;
        static std::mt19937_64 rng{std::random_device{}()};
        std::lock_guard lock(rng_mutex);
        char buf[17];
        do {
            std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(rng()));
            id = buf;
        } while (std::filesystem::exists(root_ / id));
    }
    std::shared_ptr<Session> s = Session::create(id, request, root_ / id);
    json out = s->describe();
    std::lock_guard lock(mutex_);
    sessions_[id] = std::move(s);
    return out;
}

std::shared_ptr<Session> AuditService::find(const std::string& id) const {
    std::lock_guard lock(mutex_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw ServiceError(404, "no audit session '" + id + "'");
    return it->second;
}

std::vector<std::string> AuditService::ids() const {
    std::lock_guard lock(mutex_);
    std::vector<std::string> out;
    for (const auto& [id, s] : sessions_) out.push_back(id);
    return out;
}

}  // namespace rla
