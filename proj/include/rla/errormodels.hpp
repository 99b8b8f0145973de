#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "rla/assorters.hpp"
#include "rla/election.hpp"
#include "rla/margins.hpp"
#include "rla/rational.hpp"

namespace rla {

enum class ErrorModel {
    // two-candidate plurality
    two_under,
    two_over,
    random_100_0,
    random_20_80,
    // IRV, relative to the smallest-margin assertion
    irv_under,
    irv_over,
    irv_truncate,
    irv_random,
    // STV: mismatching pairs with unrelated rankings
    stv_flip,
};

std::string_view to_string(ErrorModel model);
ErrorModel error_model_from_string(std::string_view text, ContestKind kind);

/// One simulated election: what to generate and how CVRs and cards disagree.
struct ScenarioSpec {
    ContestKind kind = ContestKind::plurality;
    ErrorModel model = ErrorModel::two_over;
    std::int64_t N = 0;
    Rational v_target;  // plurality: target CVR margin proportion
    Rational m_target;  // mismatch rate
    std::uint64_t seed = 0;

    // IRV: base election supplied as files.
    std::filesystem::path contest_path;
    std::filesystem::path cvrs_path;
    std::filesystem::path assertions_path;
    std::optional<std::int64_t> irv_margin;  // CVR margin (or lower bound) if known
    int irv_max_radius = 2;                   // otherwise found by brute force

    // STV: margin lower bound and synthetic contest shape.
    std::int64_t V_minus = 0;
    int stv_candidates = 4;
    int stv_seats = 2;

    /// Short stable identifier used in output tables and seeds.
    std::string id() const;
};

ScenarioSpec scenario_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
nlohmann::json to_json(const ScenarioSpec& spec);

struct GeneratedInstance {
    LinkedInstance instance;
    MarginReport margin;
    /// Assertions for a comparison audit (plurality: winner vs loser; IRV: from file).
    std::optional<AssertionSet> assertions;
    /// Whether the ballots elect the reported winner(s); unknown for STV.
    std::optional<bool> reported_outcome_correct;
};

/// Two-candidate contest (Ali vs Bob) with CVR margin exactly round(v N) and exactly
/// round(m N) mismatching cards. Throws InfeasibleError naming the binding constraint.
GeneratedInstance gen_plurality(const ScenarioSpec& spec);

/// Adds round(m N) discrepancies of the given kind to a base IRV election.
LinkedInstance gen_irv(const Contest& contest, const CvrSet& base_cvrs, const AssertionSet& assertions,
                       const Rational& m_target, ErrorModel model, std::uint64_t seed);

/// Synthetic STV population with round(m N) mismatches and margin lower bound V-.
GeneratedInstance gen_stv(std::int64_t N, std::int64_t V_minus, const Rational& m_target, std::uint64_t seed,
                          int candidates = 4, int seats = 2);

/// Dispatches on spec.kind; for IRV loads the files and computes assertions and margin.
GeneratedInstance generate(const ScenarioSpec& spec);

/// Writes contest.json, cvrs.ndjson, ballots.ndjson and margin.json into `dir`.
void export_instance(const GeneratedInstance& generated, const std::filesystem::path& dir);

/// round-half-to-even of rate * N.
std::int64_t scaled_count(const Rational& rate, std::int64_t N);

/// Exact rational from a JSON number or numeric string.
Rational rational_from_json(const nlohmann::json& j);

}  // namespace rla
