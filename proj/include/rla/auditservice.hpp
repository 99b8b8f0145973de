#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rla/election.hpp"
#include "rla/riskengine.hpp"

namespace httplib {
class Server;
}

namespace rla {

/// Failure carrying the HTTP status it maps to.
class ServiceError : public std::runtime_error {
public:
    ServiceError(int status, const std::string& what) : std::runtime_error(what), status_(status) {}
    int status() const noexcept { return status_; }

private:
    int status_;
};

enum class SessionStatus { open, certified, full_count_required, closed };

std::string_view to_string(SessionStatus s);

/// One live audit. Votes are entered in sampling order; cards inside the retrieved
/// batch may arrive in any order and are applied once every earlier card is in.
///
/// Storage is <dir>/config.json plus an append-only <dir>/trail.ndjson with events
///   {"event": "plan", "seed", "N", "order"}
///   {"event": "batch", "until"}           retrieval window extended
///   {"event": "mvr", "card_id", "vote"}   written before the vote is accepted
///   {"event": "step", "j", "card_id", "vote", "assertions"}  one per applied draw
///   {"event": "close"}
class Session {
public:
    /// Validates a creation request and persists it. Throws ServiceError(422) on bad input.
    static std::unique_ptr<Session> create(const std::string& id, const nlohmann::json& request,
                                           const std::filesystem::path& dir);

    /// Rebuilds a session from its directory by re-applying the trail.
    static std::unique_ptr<Session> load(const std::filesystem::path& dir);

    const std::string& id() const noexcept { return id_; }

    nlohmann::json next(std::int64_t k);
    nlohmann::json submit(const std::string& card_id, const nlohmann::json& vote);
    nlohmann::json status() const;
    nlohmann::json close();

    /// Contest, N, method and assertion labels.
    nlohmann::json describe() const;

    /// Offline check of the trail's step lines against the stored CVRs and config.
    ReplayReport verify_trail() const;

    std::int64_t draws() const;
    SessionStatus session_status() const;

private:
    Session() = default;
    void build(const nlohmann::json& config);
    void append(const nlohmann::json& event, bool sync);
    void apply_ready(bool write_steps, std::vector<nlohmann::json>* replayed_steps);
    nlohmann::json status_unlocked() const;
    SessionStatus status_unlocked_enum() const;

    mutable std::shared_mutex mutex_;
    std::string id_;
    std::filesystem::path dir_;
    nlohmann::json config_;
    Contest contest_;
    std::vector<std::string> card_ids_;
    std::vector<Vote> cvrs_;
    std::map<std::string, std::size_t> index_;  // card id -> CVR index
    std::vector<AuditTarget> targets_;
    std::vector<AuditRun::Spec> specs_;
    AuditConfig audit_config_;
    std::vector<std::size_t> order_;
    std::unique_ptr<AuditRun> run_;
    std::int64_t window_ = 0;                       // cards retrieved so far (positions < window_)
    std::map<std::int64_t, Vote> pending_;          // position -> entered vote not yet applied
    std::int64_t mismatches_ = 0;
    bool closed_ = false;
    std::vector<nlohmann::json> recent_;            // last few applied steps
};

/// All sessions under one root directory.
class AuditService {
public:
    explicit AuditService(std::filesystem::path root);

    nlohmann::json create(const nlohmann::json& request);
    std::shared_ptr<Session> find(const std::string& id) const;
    std::vector<std::string> ids() const;
    const std::filesystem::path& root() const noexcept { return root_; }

private:
    std::filesystem::path root_;
    mutable std::mutex mutex_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
};

/// OpenAPI 3 description of the HTTP interface.
nlohmann::json openapi_spec();

struct HttpOptions {
    std::string cors_origin = "*";
};

/// Registers the JSON routes, CORS handling and GET /spec on `server`.
void register_routes(httplib::Server& server, AuditService& service, const HttpOptions& options = {});

}  // namespace rla
