#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rla/errormodels.hpp"
#include "rla/riskengine.hpp"

namespace rla {

/// Shrink-trunc settings for mismatch audits, relative to u = 1 / (2 - 2 v').
struct MismatchTuning {
    double eta0_fraction = 0.999;  // eta0 = eta0_fraction * u
    double d = 100.0;
    double c_fraction = 0.1;  // c = c_fraction * (u - 1/2)
    bool mirror_guardrail = true;

    ShrinkTrunc for_margin(double v_prime) const;
};

struct ExperimentConfig {
    std::vector<ScenarioSpec> grid;
    int replications = 1000;
    bool mismatch = true;
    bool comparison = false;
    MismatchTuning mismatch_tuning;
    EstimatorConfig comparison_estimator = Cobra{};
    double alpha = 0.05;
    std::uint64_t master_seed = 0;
    int jobs = 1;

    void validate() const;
};

/// Reads {"grid": [scenario, ...]} or {"product": {"kind", "model", "N", "v", "m"}} plus
/// "replications", "methods" ("mismatch" | "comparison" | "both"), "estimators",
/// "alpha", "seed" and "jobs". Scenario paths resolve against `base_dir`.
/// Scenarios without a "seed" get one derived from the master seed and their id.
ExperimentConfig experiment_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});

/// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Seed of replication r at a grid point: a hash of (master seed, point id, r).
std::uint64_t replication_seed(std::uint64_t master, const std::string& point_id, std::uint64_t r);

struct Replication {
    std::uint64_t seed = 0;
    std::int64_t n_draws = 0;
    Decision decision = Decision::in_progress;
};

struct MethodSummary {
    double mean_n = 0.0;
    double std_error = 0.0;
    double full_count_fraction = 0.0;
    std::vector<Replication> runs;
};

struct GridPointResult {
    ScenarioSpec spec;
    std::string id;
    std::int64_t N = 0;
    std::int64_t V = 0;
    std::int64_t M = 0;  // mismatching pairs in the generated instance
    std::optional<bool> reported_outcome_correct;
    std::optional<std::string> skipped;  // reason the point could not run
    std::optional<MethodSummary> mismatch;
    std::optional<MethodSummary> comparison;

    /// Row key for tables: V / N.
    double v() const { return N > 0 ? static_cast<double>(V) / static_cast<double>(N) : 0.0; }
    double m() const { return N > 0 ? static_cast<double>(M) / static_cast<double>(N) : 0.0; }
};

struct ExperimentResult {
    double alpha = 0.05;
    int replications = 0;
    std::vector<GridPointResult> points;
};

/// Generates one instance per grid point and audits it `replications` times, varying
/// only the sampling seed. Full counts contribute n = N. Independent of `jobs`.
ExperimentResult run_experiment(const ExperimentConfig& config);

/// Summarizes per-replication draws: mean, standard error, full-count fraction.
MethodSummary summarize(std::vector<Replication> runs);

/// id, kind, model, N, v, m, V, M, method, mean_n, std_error, full_count_fraction, replications, skipped
void write_summary_csv(std::ostream& out, const ExperimentResult& result);

/// Mismatch-method means, rows ordered by v then N, one column per m.
/// 'F' when every replication was a full count; '?' marks a missing or skipped cell.
std::string emit_table2(const ExperimentResult& result);
std::string emit_table2_csv(const ExperimentResult& result);

/// v, N, m, model, (mean_mismatch - mean_comparison) / N. Throws when a point lacks a method.
void emit_comparison_plotdata(std::ostream& out, const ExperimentResult& result);

/// One gzip NDJSON file per grid point: {"method", "r", "seed", "n_draws", "decision"}.
void write_raw(const std::filesystem::path& dir, const ExperimentResult& result);

/// Reads a raw file back (used to recompute means from persisted output).
std::vector<nlohmann::json> read_raw(const std::filesystem::path& file);

/// summary.csv, table2.txt, table2.csv, diffplot.csv (when both methods ran) and raw/.
void write_outputs(const std::filesystem::path& dir, const ExperimentResult& result);

}  // namespace rla
