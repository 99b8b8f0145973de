#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "rla/assorters.hpp"
#include "rla/election.hpp"
#include "rla/margins.hpp"
#include "rla/rational.hpp"

namespace rla {

// ---------------------------------------------------------------------------
// Estimators for the ALPHA bet eta_j.

/// Truncated shrinkage: (d * eta0 + S) / (d + j), kept at least c / sqrt(d + j) above
/// the null mean and, with the mirror guardrail, at least c / sqrt(d + j) below u.
struct ShrinkTrunc {
    double eta0 = 0.0;
    double d = 100.0;
    double c = 0.0;
    bool mirror_guardrail = true;
};

/// Constant bet.
struct FixedEta {
    double eta = 0.0;
};

/// Constant bet maximizing expected log growth when a fraction p2 of cards are
/// 2-vote overstatements and p1 are 1-vote overstatements.
struct Cobra {
    double p2 = 1e-5;
    double p1 = 0.0;
};

using EstimatorConfig = std::variant<ShrinkTrunc, FixedEta, Cobra>;

/// Guardrail scale used unless configured otherwise: 0.1 * (u - 1/2).
double default_guardrail(double u);

/// Shrink-trunc defaults for a mismatch audit: eta0 = 0.999 / (2 - 2 v'), d = 100,
/// default guardrail, mirror guardrail on.
ShrinkTrunc mismatch_shrink_trunc(double v_prime);

EstimatorConfig estimator_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EstimatorConfig& config);

// ---------------------------------------------------------------------------
// Test state and the ALPHA step.

/// Running state of one ALPHA test of "population mean <= t" sampled without replacement.
struct TestState {
    std::int64_t j = 0;      // draws so far
    double log_T = 0.0;      // log of the supermartingale
    double max_log_T = 0.0;  // running maximum of log_T (>= 0)
    double S = 0.0;          // sum of observed values
    std::int64_t N = 0;
    double t = 0.5;
    double u = 1.0;

    double T() const;
    /// Running minimum of min(1, 1/T).
    double p_value() const;
};

TestState initial_state(std::int64_t N, double u, double t = 0.5);

/// Mean of the undrawn values under the null: (N t - S) / (N - j). Throws when j == N.
double null_mean(const TestState& state);

double eta_shrink_trunc(const TestState& state, const ShrinkTrunc& config);

/// Bet for an overstatement assorter with assorter upper bound `u` and margin `nu`.
/// Golden-section search over (1/2, 2u / (2u - nu)) to relative tolerance 1e-9.
double eta_cobra(const Cobra& config, double u, double nu);

/// One multiplier [x eta/mu + (u - x)(u - eta)/(u - mu)] / u.
double alpha_multiplier(double x, double eta, double mu, double u);

/// Exact multiplier, for validity checks on small populations.
Rational alpha_multiplier_exact(const Rational& x, const Rational& eta, const Rational& mu, const Rational& u);

/// Applies one draw. Requires 0 < mu < u and x in [0, u].
TestState alpha_step(const TestState& state, double x, double eta);

// ---------------------------------------------------------------------------
// Sampling.

/// Uniform integer in [0, bound) from a 64-bit generator, by rejection.
std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound);

/// Random order of [0, N) drawn lazily: a forward Fisher-Yates shuffle driven by
/// std::mt19937_64 seeded with `seed`; draw i swaps position i with position
/// i + uniform_below(N - i). Prefixes agree with sample_plan(seed, N).
class SamplePlan {
public:
    SamplePlan(std::uint64_t seed, std::size_t N);

    std::size_t size() const noexcept { return order_.size(); }
    std::size_t drawn() const noexcept { return next_; }
    bool exhausted() const noexcept { return next_ >= order_.size(); }
    std::size_t next();

private:
    std::mt19937_64 rng_;
    std::vector<std::size_t> order_;
    std::size_t next_ = 0;
};

std::vector<std::size_t> sample_plan(std::uint64_t seed, std::size_t N);

// ---------------------------------------------------------------------------
// Audits.

struct AuditConfig {
    double alpha = 0.05;
    std::uint64_t seed = 0;
    /// Defaults to N.
    std::optional<std::int64_t> max_draws;

    void validate() const;
};

enum class Decision { in_progress, certified, full_count };
enum class TestStatus { live, certified, impossible };

std::string_view to_string(Decision d);
std::string_view to_string(TestStatus s);

/// One assertion tested in an audit: the per-card value as a function of the
/// (ballot, CVR) pair, its upper bound, and the bet.
struct AuditTarget {
    std::string label;
    Rational upper;
    std::function<Rational(const Vote& ballot, const Vote& cvr)> value;
    EstimatorConfig estimator;
    /// nu for overstatement targets (used by COBRA); 0 otherwise.
    double assorter_margin = 0.0;
    double assorter_upper = 1.0;
};

/// Mismatch assorter target with v' = margin.v(). Throws InfeasibleError unless
/// the margin is an exact value or lower bound with V >= 1.
AuditTarget mismatch_target(const MarginReport& margin);
AuditTarget mismatch_target(const MarginReport& margin, EstimatorConfig estimator);

/// Overstatement assorter target for a reportedly true assertion, bet by COBRA by default.
AuditTarget comparison_target(const Assertion& assertion);
AuditTarget comparison_target(const Assertion& assertion, EstimatorConfig estimator);

struct AssertionDetail {
    std::string label;
    TestStatus status = TestStatus::live;
    std::optional<std::int64_t> certified_at;
    double p_value = 1.0;
    double log_T = 0.0;
};

struct AuditResult {
    Decision decision = Decision::in_progress;
    std::int64_t n_draws = 0;
    std::vector<double> p_trajectory;  // audit p after each draw, when recorded
    std::vector<AssertionDetail> assertions;
};

/// Per-assertion values observed on one draw.
struct StepRecord {
    double x = 0.0;
    double eta = 0.0;
    double T = 0.0;
    double p = 1.0;
    TestStatus status = TestStatus::live;
    bool stepped = false;  // false if the assertion was already settled
};

/// Sequential state of an audit over several assertions sharing one sample.
/// Each draw feeds every assertion that is still live; the audit certifies when
/// every assertion has certified and needs a full count once any cannot.
class AuditRun {
public:
    struct Spec {
        std::string label;
        double upper = 1.0;
        EstimatorConfig estimator;
        double assorter_margin = 0.0;
        double assorter_upper = 1.0;
    };

    AuditRun(std::vector<Spec> specs, std::int64_t N, const AuditConfig& config);

    /// Applies one draw; `xs` holds one value per assertion.
    std::vector<StepRecord> observe(std::span<const double> xs);

    Decision decision() const noexcept { return decision_; }
    std::int64_t draws() const noexcept { return draws_; }
    std::int64_t population() const noexcept { return N_; }
    std::size_t assertion_count() const noexcept { return tests_.size(); }
    const TestState& state(std::size_t i) const { return tests_[i].state; }
    TestStatus status(std::size_t i) const { return tests_[i].status; }
    /// Largest per-assertion p-value.
    double p_value() const;
    AuditResult result() const;

private:
    struct Test {
        Spec spec;
        TestState state;
        TestStatus status = TestStatus::live;
        std::optional<std::int64_t> certified_at;
        std::optional<double> fixed_eta;
    };

    void settle(Test& test) const;
    void update_decision();
    double eta_for(const Test& test) const;

    std::vector<Test> tests_;
    std::int64_t N_;
    std::int64_t max_draws_;
    double log_threshold_;
    std::int64_t draws_ = 0;
    Decision decision_ = Decision::in_progress;
};

std::vector<AuditRun::Spec> run_specs(std::span<const AuditTarget> targets);

/// Per-card target values, column-major: values[t][i] for target t and card i.
std::vector<std::vector<double>> target_columns(const LinkedInstance& instance, std::span<const AuditTarget> targets);

struct RunOptions {
    bool record_trajectory = false;
    /// When set, one NDJSON line per draw is written here.
    std::ostream* log = nullptr;
};

/// Draws cards in sample_plan(config.seed) order until the audit settles.
AuditResult run_audit(const LinkedInstance& instance, std::span<const AuditTarget> targets, const AuditConfig& config,
                      const RunOptions& options = {});

/// Simulation fast path over precomputed target columns.
AuditResult run_audit_columns(const std::vector<std::vector<double>>& columns, std::span<const AuditRun::Spec> specs,
                              const AuditConfig& config, bool record_trajectory = false);

/// One audit-log line: {"j", "card_id", "vote", "assertions": [{label, x, eta, T, p, status}]}.
nlohmann::json log_line(std::int64_t j, const std::string& card_id, const nlohmann::json& vote,
                        std::span<const StepRecord> steps, std::span<const AuditRun::Spec> specs);

struct ReplayReport {
    bool consistent = true;
    std::string message;
    std::int64_t lines = 0;
    Decision decision = Decision::in_progress;
    std::vector<double> final_T;
};

/// Re-derives every logged step from the CVRs, the logged ballots and the audit
/// configuration, and checks sampling order, x, eta and T bit for bit.
ReplayReport replay_audit_log(std::istream& log, const LinkedInstance& instance, std::span<const AuditTarget> targets,
                              const AuditConfig& config);

nlohmann::json to_json(const AuditResult& result);

}  // namespace rla
