#include "rla/riskengine.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>

#include "rla/error.hpp"

namespace rla {

using nlohmann::json;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace

double default_guardrail(double u) { return 0.1 * (u - 0.5); }

ShrinkTrunc mismatch_shrink_trunc(double v_prime) {
    const double u = 1.0 / (2.0 - 2.0 * v_prime);
    return ShrinkTrunc{.eta0 = 0.999 * u, .d = 100.0, .c = default_guardrail(u), .mirror_guardrail = true};
}

EstimatorConfig estimator_from_json(const json& j) {
    try {
        const std::string kind = j.at("kind").get<std::string>();
        if (kind == "shrink_trunc") {
            ShrinkTrunc s;
            s.eta0 = j.at("eta0").get<double>();
            s.d = j.value("d", 100.0);
            s.c = j.at("c").get<double>();
            s.mirror_guardrail = j.value("mirror_guardrail", true);
            if (s.d < 0 || s.c <= 0) throw ParseError("shrink_trunc needs d >= 0 and c > 0");
            return s;
        }
        if (kind == "fixed") return FixedEta{j.at("eta").get<double>()};
        if (kind == "cobra") {
            Cobra c{j.value("p2", 1e-5), j.value("p1", 0.0)};
            if (c.p1 < 0 || c.p2 < 0 || c.p1 + c.p2 >= 1) throw ParseError("cobra rates must be nonnegative and sum below 1");
            return c;
        }
        throw ParseError("unknown estimator kind '" + kind + "'");
    } catch (const json::exception& e) {
        throw ParseError(std::string("estimator: ") + e.what());
    }
}

json to_json(const EstimatorConfig& config) {
    return std::visit(
        [](const auto& e) -> json {
            using E = std::decay_t<decltype(e)>;
            if constexpr (std::is_same_v<E, ShrinkTrunc>) {
                return {{"kind", "shrink_trunc"}, {"eta0", e.eta0}, {"d", e.d}, {"c", e.c}, {"mirror_guardrail", e.mirror_guardrail}};
            } else if constexpr (std::is_same_v<E, FixedEta>) {
                return {{"kind", "fixed"}, {"eta", e.eta}};
            } else {
                return {{"kind", "cobra"}, {"p2", e.p2}, {"p1", e.p1}};
            }
        },
        config);
}

double TestState::T() const { return std::exp(log_T); }

double TestState::p_value() const { return std::min(1.0, std::exp(-max_log_T)); }

TestState initial_state(std::int64_t N, double u, double t) {
    if (N <= 0) throw Error("audit population must be nonempty");
    if (!(u > t)) throw Error("assorter upper bound must exceed the null mean");
    TestState s;
    s.N = N;
    s.u = u;
    s.t = t;
    return s;
}

double null_mean(const TestState& state) {
    if (state.j >= state.N) throw Error("null mean undefined: every card has been drawn");
    const double total = static_cast<double>(state.N) * state.t;
    double remaining = total - state.S;
    // Rounding in S must not turn an exhausted null total into a negative one.
    if (std::abs(remaining) <= 1e-9 * std::max(total, 1.0)) remaining = 0.0;
    return remaining / static_cast<double>(state.N - state.j);
}

double eta_shrink_trunc(const TestState& state, const ShrinkTrunc& config) {
    const double mu = null_mean(state);
    const double u = state.u;
    const double j = static_cast<double>(state.j);
    const double scale = std::sqrt(std::max(config.d + j, 1.0));
    const double estimate = (config.d * config.eta0 + state.S) / (config.d + j);
    const double lower = mu + config.c / scale;
    const double upper = config.mirror_guardrail ? u - config.c / scale : u * (1.0 - std::numeric_limits<double>::epsilon());
    const double midpoint = 0.5 * (std::max(mu, 0.0) + u);
    if (lower >= upper) return midpoint;
    const double eta = std::clamp(estimate, lower, upper);
    if (!(eta > mu && eta < u)) return midpoint;
    return eta;
}

double alpha_multiplier(double x, double eta, double mu, double u) {
    if (mu <= 0.0) {
        // Every remaining value must be 0 under the null; any positive draw refutes it.
        return x > 0.0 ? kInf : (u - eta) / u;
    }
    return (x * eta / mu + (u - x) * (u - eta) / (u - mu)) / u;
}

Rational alpha_multiplier_exact(const Rational& x, const Rational& eta, const Rational& mu, const Rational& u) {
    if (mu <= 0 || mu >= u) throw Error("exact multiplier needs 0 < mu < u");
    return (x * eta / mu + (u - x) * (u - eta) / (u - mu)) / u;
}

double eta_cobra(const Cobra& config, double u, double nu) {
    if (!(nu > 0.0) || !(nu < 2.0 * u)) throw Error("COBRA needs 0 < nu < 2u");
    const double upper = 2.0 * u / (2.0 * u - nu);
    if (config.p1 <= 0.0 && config.p2 <= 0.0) return upper;
    const double match = u / (2.0 * u - nu);
    const double one_over = 0.5 * u / (2.0 * u - nu);
    const double p_match = 1.0 - config.p1 - config.p2;
    const double mu = 0.5;
    auto growth = [&](double eta) {
        double g = p_match * std::log(alpha_multiplier(match, eta, mu, upper));
        if (config.p1 > 0.0) g += config.p1 * std::log(alpha_multiplier(one_over, eta, mu, upper));
        if (config.p2 > 0.0) g += config.p2 * std::log(alpha_multiplier(0.0, eta, mu, upper));
        return g;
    };
    // Expected log growth is concave in eta.
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double lo = mu;
    double hi = upper;
    double a = hi - inv_phi * (hi - lo);
    double b = lo + inv_phi * (hi - lo);
    double ga = growth(a);
    double gb = growth(b);
    while (hi - lo > 1e-9 * hi) {
        if (ga < gb) {
            lo = a;
            a = b;
            ga = gb;
            b = lo + inv_phi * (hi - lo);
            gb = growth(b);
        } else {
            hi = b;
            b = a;
            gb = ga;
            a = hi - inv_phi * (hi - lo);
            ga = growth(a);
        }
    }
    return 0.5 * (lo + hi);
}

TestState alpha_step(const TestState& state, double x, double eta) {
    if (!(x >= 0.0 && x <= state.u)) throw Error("observed assorter value outside [0, u]");
    const double mu = null_mean(state);
    if (mu >= state.u) throw Error("alpha_step: null mean >= u, certification is impossible");
    TestState next = state;
    const double m = alpha_multiplier(x, eta, mu, state.u);
    next.log_T = state.log_T + std::log(m);
    next.max_log_T = std::max(state.max_log_T, next.log_T);
    next.S = state.S + x;
    next.j = state.j + 1;
    return next;
}

std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
    if (bound == 0) throw Error("uniform_below needs a positive bound");
    const std::uint64_t threshold = (0 - bound) % bound;  // 2^64 mod bound
    while (true) {
        std::uint64_t r = rng();
        if (r >= threshold) return r % bound;
    }
}

SamplePlan::SamplePlan(std::uint64_t seed, std::size_t N) : rng_(seed), order_(N) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
}

std::size_t SamplePlan::next() {
    if (exhausted()) throw Error("sample plan exhausted");
    const std::size_t remaining = order_.size() - next_;
    const std::size_t pick = next_ + static_cast<std::size_t>(uniform_below(rng_, remaining));
    std::swap(order_[next_], order_[pick]);
    return order_[next_++];
}

std::vector<std::size_t> sample_plan(std::uint64_t seed, std::size_t N) {
    SamplePlan plan(seed, N);
    std::vector<std::size_t> out;
    out.reserve(N);
    while (!plan.exhausted()) out.push_back(plan.next());
    return out;
}

void AuditConfig::validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw Error("risk limit alpha must lie in (0, 1)");
    if (max_draws && *max_draws < 0) throw Error("max_draws must be nonnegative");
}

std::string_view to_string(Decision d) {
    switch (d) {
        case Decision::in_progress: return "in_progress";
        case Decision::certified: return "certified";
        case Decision::full_count: return "full_count";
    }
    return "?";
}

std::string_view to_string(TestStatus s) {
    switch (s) {
        case TestStatus::live: return "live";
        case TestStatus::certified: return "certified";
        case TestStatus::impossible: return "impossible";
    }
    return "?";
}

AuditTarget mismatch_target(const MarginReport& margin) {
    return mismatch_target(margin, mismatch_shrink_trunc(to_double(margin.v())));
}

AuditTarget mismatch_target(const MarginReport& margin, EstimatorConfig estimator) {
    if (margin.kind == MarginKind::diagnostic_upper) {
        throw InfeasibleError("a diagnostic upper bound on the margin cannot drive a mismatch audit");
    }
    if (margin.V <= 0) throw InfeasibleError("V- = 0: mismatch audit cannot certify");
    const Rational v_prime = margin.v();
    if (v_prime >= 1) throw InfeasibleError("margin proportion must be below 1");
    AuditTarget t;
    t.label = "mismatch";
    t.upper = mismatch_upper(v_prime);
    t.value = [v_prime](const Vote& b, const Vote& c) { return mismatch_value(b, c, v_prime); };
    t.estimator = std::move(estimator);
    return t;
}

AuditTarget comparison_target(const Assertion& assertion) { return comparison_target(assertion, Cobra{}); }

AuditTarget comparison_target(const Assertion& assertion, EstimatorConfig estimator) {
    if (assertion.margin <= 0) {
        throw InfeasibleError("assertion " + assertion.assorter.label() + " has margin <= 0 and cannot be confirmed");
    }
    AuditTarget t;
    t.label = assertion.assorter.label();
    t.upper = overstatement_upper(assertion.assorter.upper(), assertion.margin);
    Assorter a = assertion.assorter;
    Rational nu = assertion.margin;
    t.value = [a, nu](const Vote& b, const Vote& c) { return overstatement_value(b, c, a, nu).value; };
    t.estimator = std::move(estimator);
    t.assorter_margin = to_double(assertion.margin);
    t.assorter_upper = to_double(assertion.assorter.upper());
    return t;
}

std::vector<AuditRun::Spec> run_specs(std::span<const AuditTarget> targets) {
    std::vector<AuditRun::Spec> specs;
    for (const auto& t : targets) {
        specs.push_back({t.label, to_double(t.upper), t.estimator, t.assorter_margin, t.assorter_upper});
    }
    return specs;
}

AuditRun::AuditRun(std::vector<Spec> specs, std::int64_t N, const AuditConfig& config)
    : N_(N), max_draws_(config.max_draws.value_or(N)), log_threshold_(-std::log(config.alpha)) {
    config.validate();
    if (specs.empty()) throw Error("an audit needs at least one assertion");
    max_draws_ = std::min(max_draws_, N_);
    for (auto& spec : specs) {
        Test test;
        test.state = initial_state(N, spec.upper);
        if (const auto* cobra = std::get_if<Cobra>(&spec.estimator)) {
            test.fixed_eta = eta_cobra(*cobra, spec.assorter_upper, spec.assorter_margin);
        } else if (const auto* fixed = std::get_if<FixedEta>(&spec.estimator)) {
            test.fixed_eta = fixed->eta;
        }
        test.spec = std::move(spec);
        settle(test);
        tests_.push_back(std::move(test));
    }
    update_decision();
}

void AuditRun::settle(Test& test) const {
    if (test.status != TestStatus::live) return;
    const TestState& s = test.state;
    if (s.log_T >= log_threshold_) {
        test.status = TestStatus::certified;
        test.certified_at = s.j;
        return;
    }
    if (s.j >= s.N) {
        test.status = TestStatus::impossible;
        return;
    }
    const double mu = null_mean(s);
    if (mu < 0.0) {
        // The observed sum already exceeds N t: the null is infeasible, p = 0.
        test.status = TestStatus::certified;
        test.certified_at = s.j;
        test.state.log_T = kInf;
        test.state.max_log_T = kInf;
    } else if (mu >= s.u) {
        test.status = TestStatus::impossible;
    }
}

double AuditRun::eta_for(const Test& test) const {
    if (const auto* st = std::get_if<ShrinkTrunc>(&test.spec.estimator)) return eta_shrink_trunc(test.state, *st);
    const double mu = null_mean(test.state);
    return std::clamp(*test.fixed_eta, mu, test.state.u);
}

std::vector<StepRecord> AuditRun::observe(std::span<const double> xs) {
    if (decision_ != Decision::in_progress) throw Error("audit already settled");
    if (xs.size() != tests_.size()) throw Error("one value per assertion expected");
    std::vector<StepRecord> records(tests_.size());
    for (std::size_t i = 0; i < tests_.size(); ++i) {
        Test& test = tests_[i];
        StepRecord& rec = records[i];
        rec.x = xs[i];
        if (test.status == TestStatus::live) {
            rec.eta = eta_for(test);
            test.state = alpha_step(test.state, xs[i], rec.eta);
            rec.stepped = true;
            settle(test);
        }
        rec.T = test.state.T();
        rec.p = test.state.p_value();
        rec.status = test.status;
    }
    ++draws_;
    update_decision();
    return records;
}

void AuditRun::update_decision() {
    bool all_certified = true;
    for (const auto& t : tests_) {
        if (t.status == TestStatus::impossible) {
            decision_ = Decision::full_count;
            return;
        }
        all_certified = all_certified && t.status == TestStatus::certified;
    }
    if (all_certified) {
        decision_ = Decision::certified;
    } else if (draws_ >= max_draws_) {
        decision_ = Decision::full_count;
    }
}

double AuditRun::p_value() const {
    double p = 0.0;
    for (const auto& t : tests_) p = std::max(p, t.state.p_value());
    return p;
}

AuditResult AuditRun::result() const {
    AuditResult r;
    r.decision = decision_;
    r.n_draws = decision_ == Decision::full_count ? N_ : draws_;
    for (const auto& t : tests_) {
        r.assertions.push_back({t.spec.label, t.status, t.certified_at, t.state.p_value(), t.state.log_T});
    }
    return r;
}

std::vector<std::vector<double>> target_columns(const LinkedInstance& instance, std::span<const AuditTarget> targets) {
    std::vector<std::vector<double>> columns;
    for (const auto& t : targets) {
        std::vector<double> col(instance.size());
        for (std::size_t i = 0; i < instance.size(); ++i) col[i] = to_double(t.value(instance.ballots[i], instance.cvrs[i]));
        columns.push_back(std::move(col));
    }
    return columns;
}

AuditResult run_audit_columns(const std::vector<std::vector<double>>& columns, std::span<const AuditRun::Spec> specs,
                              const AuditConfig& config, bool record_trajectory) {
    if (columns.size() != specs.size() || columns.empty()) throw Error("one column per assertion expected");
    const std::size_t N = columns.front().size();
    AuditRun run(std::vector<AuditRun::Spec>(specs.begin(), specs.end()), static_cast<std::int64_t>(N), config);
    SamplePlan plan(config.seed, N);
    std::vector<double> xs(columns.size());
    std::vector<double> trajectory;
    while (run.decision() == Decision::in_progress) {
        const std::size_t card = plan.next();
        for (std::size_t t = 0; t < columns.size(); ++t) xs[t] = columns[t][card];
        run.observe(xs);
        if (record_trajectory) trajectory.push_back(run.p_value());
    }
    AuditResult r = run.result();
    r.p_trajectory = std::move(trajectory);
    return r;
}

json log_line(std::int64_t j, const std::string& card_id, const json& vote, std::span<const StepRecord> steps,
              std::span<const AuditRun::Spec> specs) {
    json assertions = json::array();
    for (std::size_t i = 0; i < steps.size(); ++i) {
        const StepRecord& s = steps[i];
        json a{{"label", specs[i].label}, {"status", std::string(to_string(s.status))}};
        if (s.stepped) {
            a["x"] = s.x;
            a["eta"] = s.eta;
            a["T"] = std::isfinite(s.T) ? json(s.T) : json(nullptr);
            a["p"] = s.p;
        }
        assertions.push_back(std::move(a));
    }
    return json{{"j", j}, {"card_id", card_id}, {"vote", vote}, {"assertions", assertions}};
}

AuditResult run_audit(const LinkedInstance& instance, std::span<const AuditTarget> targets, const AuditConfig& config,
                      const RunOptions& options) {
    config.validate();
    if (instance.size() == 0) throw Error("cannot audit an empty instance");
    auto specs = run_specs(targets);
    if (!options.log) {
        return run_audit_columns(target_columns(instance, targets), specs, config, options.record_trajectory);
    }
    AuditRun run(specs, static_cast<std::int64_t>(instance.size()), config);
    SamplePlan plan(config.seed, instance.size());
    std::vector<double> xs(targets.size());
    std::vector<double> trajectory;
    while (run.decision() == Decision::in_progress) {
        const std::size_t card = plan.next();
        for (std::size_t t = 0; t < targets.size(); ++t) {
            xs[t] = to_double(targets[t].value(instance.ballots[card], instance.cvrs[card]));
        }
        auto steps = run.observe(xs);
        *options.log << log_line(run.draws(), instance.card_ids[card], to_json(instance.ballots[card], instance.contest),
                                 steps, specs)
                            .dump()
                     << '\n';
        if (options.record_trajectory) trajectory.push_back(run.p_value());
    }
    AuditResult r = run.result();
    r.p_trajectory = std::move(trajectory);
    return r;
}

namespace {

bool same_double(const json& logged, double value) {
    if (logged.is_null()) return !std::isfinite(value);
    if (!logged.is_number()) return false;
    return logged.get<double>() == value;
}

}  // namespace

ReplayReport replay_audit_log(std::istream& log, const LinkedInstance& instance, std::span<const AuditTarget> targets,
                              const AuditConfig& config) {
    ReplayReport report;
    auto specs = run_specs(targets);
    AuditRun run(specs, static_cast<std::int64_t>(instance.size()), config);
    SamplePlan plan(config.seed, instance.size());
    std::vector<double> xs(targets.size());
    auto fail = [&](const std::string& why) {
        report.consistent = false;
        report.message = "line " + std::to_string(report.lines) + ": " + why;
        return report;
    };
    std::string line;
    while (std::getline(log, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        ++report.lines;
        if (run.decision() != Decision::in_progress) return fail("draw logged after the audit settled");
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            return fail(e.what());
        }
        const std::size_t card = plan.next();
        if (j.value("j", std::int64_t{-1}) != run.draws() + 1) return fail("draw counter out of sequence");
        if (j.value("card_id", std::string()) != instance.card_ids[card]) {
            return fail("card '" + j.value("card_id", std::string()) + "' drawn out of sampling order (expected '" +
                        instance.card_ids[card] + "')");
        }
        Vote ballot;
        try {
            ballot = vote_from_json(j.at("vote"), instance.contest);
        } catch (const std::exception& e) {
            return fail(std::string("vote: ") + e.what());
        }
        for (std::size_t t = 0; t < targets.size(); ++t) xs[t] = to_double(targets[t].value(ballot, instance.cvrs[card]));
        auto steps = run.observe(xs);
        const json& logged = j.at("assertions");
        if (!logged.is_array() || logged.size() != steps.size()) return fail("assertion list does not match the audit");
        for (std::size_t t = 0; t < steps.size(); ++t) {
            const json& a = logged[t];
            if (a.value("status", std::string()) != to_string(steps[t].status)) return fail("status differs for " + specs[t].label);
            if (!steps[t].stepped) continue;
            if (!same_double(a.value("x", json()), steps[t].x) || !same_double(a.value("eta", json()), steps[t].eta) ||
                !same_double(a.value("T", json()), steps[t].T)) {
                return fail("recomputed step differs for " + specs[t].label);
            }
        }
    }
    report.decision = run.decision();
    for (std::size_t t = 0; t < run.assertion_count(); ++t) report.final_T.push_back(run.state(t).T());
    return report;
}

json to_json(const AuditResult& result) {
    json assertions = json::array();
    for (const auto& a : result.assertions) {
        json ja{{"label", a.label}, {"status", std::string(to_string(a.status))}, {"p_value", a.p_value}};
        if (a.certified_at) ja["certified_at"] = *a.certified_at;
        assertions.push_back(std::move(ja));
    }
    json j{{"decision", std::string(to_string(result.decision))}, {"n_draws", result.n_draws}, {"assertions", assertions}};
    if (!result.p_trajectory.empty()) j["p_trajectory"] = result.p_trajectory;
    return j;
}

}  // namespace rla
