#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "rla/error.hpp"
#include "rla/errormodels.hpp"
#include "rla/riskengine.hpp"
#include "support.hpp"

using namespace rla;
using nlohmann::json;

namespace {

GeneratedInstance plurality_instance(double v, double m, std::uint64_t seed = 1, std::int64_t N = 10000) {
    ScenarioSpec s;
    s.kind = ContestKind::plurality;
    s.model = ErrorModel::two_over;
    s.N = N;
    s.v_target = parse_rational(std::to_string(v));
    s.m_target = parse_rational(std::to_string(m));
    s.seed = seed;
    return gen_plurality(s);
}

AuditResult mismatch_audit(const GeneratedInstance& g, std::uint64_t seed, bool trajectory = false) {
    std::vector<AuditTarget> targets{mismatch_target(g.margin)};
    AuditConfig config;
    config.seed = seed;
    return run_audit(g.instance, targets, config, RunOptions{.record_trajectory = trajectory});
}

// Fraction of all orderings of `values` for which the test rejects at level alpha.
double rejection_rate(std::vector<double> values, double u, const EstimatorConfig& estimator, double alpha) {
    std::sort(values.begin(), values.end());
    long total = 0, rejected = 0;
    do {
        AuditConfig config;
        config.alpha = alpha;
        AuditRun run({{"t", u, estimator, 0.0, 1.0}}, static_cast<std::int64_t>(values.size()), config);
        for (double x : values) {
            if (run.decision() != Decision::in_progress) break;
            run.observe(std::span<const double>(&x, 1));
        }
        ++total;
        rejected += run.decision() == Decision::certified;
    } while (std::next_permutation(values.begin(), values.end()));
    return static_cast<double>(rejected) / static_cast<double>(total);
}

}  // namespace

TEST_SUITE("riskengine") {
    TEST_CASE("null mean") {
        TestState s = initial_state(100, 1.0);
        CHECK(null_mean(s) == doctest::Approx(0.5));
        s.j = 15;
        s.S = 10.0;
        CHECK(null_mean(s) == doctest::Approx(40.0 / 85.0));
        s.S = 60.0;
        CHECK(null_mean(s) < 0.0);
        // A tied population: once every match is drawn the null total is exhausted, not exceeded.
        const double u = 1.0 / (2.0 - 2.0 * 0.05);
        TestState tie = initial_state(1000, u);
        for (int k = 0; k < 950; ++k) tie = alpha_step(tie, u, 0.5 * (null_mean(tie) + u));
        CHECK(null_mean(tie) == 0.0);
        s.j = 100;
        CHECK_THROWS(null_mean(s));
        CHECK_THROWS(initial_state(0, 1.0));
        CHECK_THROWS(initial_state(10, 0.5));
    }

    TEST_CASE("shrink-trunc defaults and guardrails") {
        const ShrinkTrunc st = mismatch_shrink_trunc(0.01);
        CHECK(st.eta0 == doctest::Approx(0.50455).epsilon(1e-4));
        CHECK(st.d == 100.0);
        CHECK(st.c == doctest::Approx(0.1 * (1.0 / 1.98 - 0.5)));
        CHECK(st.mirror_guardrail);

        const double u = 1.0 / 1.98;
        TestState s = initial_state(10000, u);
        CHECK(eta_shrink_trunc(s, st) == doctest::Approx(st.eta0));
        // Early draws of 0 pull the estimate under the null mean; later draws of u push it
        // toward u. Both guardrails hold throughout.
        for (int k = 0; k < 300; ++k) {
            const double eta = eta_shrink_trunc(s, st);
            const double mu = null_mean(s);
            const double slack = st.c / std::sqrt(st.d + static_cast<double>(s.j));
            CHECK(eta >= mu + slack - 1e-15);
            CHECK(eta <= u - slack + 1e-15);
            s = alpha_step(s, k < 3 ? 0.0 : u, eta);
        }
        // An eta0 at u is held off the bound by the mirror guardrail.
        TestState t = initial_state(10000, u);
        ShrinkTrunc eager = st;
        eager.eta0 = u;
        const double eta = eta_shrink_trunc(t, eager);
        CHECK(eta == doctest::Approx(u - st.c / 10.0));
        eager.mirror_guardrail = false;
        CHECK(eta_shrink_trunc(t, eager) < u);
        CHECK(eta_shrink_trunc(t, eager) > eta);
    }

    TEST_CASE("estimator JSON") {
        auto e = estimator_from_json(json{{"kind", "cobra"}, {"p2", 0.001}});
        REQUIRE(std::holds_alternative<Cobra>(e));
        CHECK(std::get<Cobra>(e).p2 == 0.001);
        auto st = estimator_from_json(to_json(EstimatorConfig{mismatch_shrink_trunc(0.02)}));
        REQUIRE(std::holds_alternative<ShrinkTrunc>(st));
        CHECK(std::get<ShrinkTrunc>(st).eta0 == mismatch_shrink_trunc(0.02).eta0);
        CHECK_THROWS_AS(estimator_from_json(json{{"kind", "kelly"}}), ParseError);
        CHECK_THROWS_AS(estimator_from_json(json{{"kind", "cobra"}, {"p2", 0.6}, {"p1", 0.6}}), ParseError);
        CHECK_THROWS_AS(estimator_from_json(json{{"kind", "shrink_trunc"}, {"eta0", 0.6}}), ParseError);
    }

    TEST_CASE("COBRA agrees with a grid search") {
        for (double nu : {0.02, 0.1, 0.3}) {
            for (auto [p2, p1] : std::vector<std::pair<double, double>>{{1e-5, 0.0}, {1e-3, 0.0}, {1e-3, 1e-2}, {0.01, 0.05}}) {
                const double uB = 2.0 / (2.0 - nu);
                const double got = eta_cobra(Cobra{p2, p1}, 1.0, nu);
                double best = 0.5, best_g = -INFINITY;
                const int points = 1'000'000;
                for (int i = 1; i < points; ++i) {
                    const double eta = 0.5 + (uB - 0.5) * i / points;
                    const double g = testing::log_growth(eta, uB, p2, p1);
                    if (g > best_g) best_g = g, best = eta;
                }
                CAPTURE(nu);
                CAPTURE(p2);
                CAPTURE(p1);
                CHECK(got == doctest::Approx(best).epsilon(1e-5));
                CHECK(testing::log_growth(got, uB, p2, p1) >= best_g - 1e-12);
            }
        }
    }

    TEST_CASE("COBRA edge cases") {
        CHECK(eta_cobra(Cobra{0.0, 0.0}, 1.0, 0.02) == doctest::Approx(2.0 / 1.98));
        const double match = 1.0 / 1.98;
        const double heavy = eta_cobra(Cobra{0.5, 0.0}, 1.0, 0.02);
        CHECK(heavy < match);
        CHECK(heavy == doctest::Approx(0.5).epsilon(1e-6));
        CHECK_THROWS(eta_cobra(Cobra{}, 1.0, 0.0));
        CHECK_THROWS(eta_cobra(Cobra{}, 1.0, 2.0));
    }

    TEST_CASE("multiplier algebra") {
        CHECK(alpha_multiplier(0.3, 0.5, 0.5, 1.0) == doctest::Approx(1.0));
        CHECK(alpha_multiplier(1.0, 0.7, 0.5, 1.0) == doctest::Approx(0.7 / 0.5));
        CHECK(alpha_multiplier(0.0, 0.7, 0.5, 1.0) == doctest::Approx(0.3 / 0.5));
        CHECK(std::isinf(alpha_multiplier(0.2, 0.7, 0.0, 1.0)));
        CHECK(alpha_multiplier(0.0, 0.7, 0.0, 1.0) == doctest::Approx(0.3));
        CHECK_THROWS(alpha_multiplier_exact(Rational(1), Rational(1), Rational(0), Rational(1)));
    }

    TEST_CASE("expected multiplier is 1 under the null") {
        // Every multiset of size 4 over {0, 1/4, 1/2, 3/4, 1} with mean strictly inside (0, u).
        const std::vector<Rational> alphabet{Rational(0), make_rational(1, 4), make_rational(1, 2), make_rational(3, 4),
                                             Rational(1)};
        const Rational u = 1;
        int populations = 0;
        for (std::size_t a = 0; a < 5; ++a)
            for (std::size_t b = a; b < 5; ++b)
                for (std::size_t c = b; c < 5; ++c)
                    for (std::size_t d = c; d < 5; ++d) {
                        const std::vector<Rational> pop{alphabet[a], alphabet[b], alphabet[c], alphabet[d]};
                        const Rational mu = (pop[0] + pop[1] + pop[2] + pop[3]) / 4;
                        if (mu <= 0 || mu >= u) continue;
                        ++populations;
                        for (const Rational& eta : std::vector<Rational>{mu, Rational((mu + u) / 2), u}) {
                            Rational sum = 0;
                            for (const auto& x : pop) {
                                const Rational m = alpha_multiplier_exact(x, eta, mu, u);
                                CHECK(m >= 0);
                                sum += m;
                            }
                            CHECK(sum / 4 == 1);
                        }
                    }
        CHECK(populations == 68);
    }

    TEST_CASE("rejection rate over every ordering stays below alpha") {
        // Mismatch population at the boundary: M = V.
        const double u = 1.0 / (2.0 - 2.0 * 2.0 / 8.0);
        std::vector<double> boundary(8, u);
        boundary[0] = boundary[1] = 0.0;
        for (double alpha : {0.5, 0.3, 0.1}) {
            CHECK(rejection_rate(boundary, u, mismatch_shrink_trunc(0.25), alpha) <= alpha);
            CHECK(rejection_rate(boundary, u, FixedEta{0.9 * u}, alpha) <= alpha);
        }
        // Mixed values with mean exactly 1/2.
        const std::vector<double> mixed{0.0, 0.25, 0.25, 0.5, 0.75, 0.75, 0.5, 1.0};
        for (double alpha : {0.5, 0.2}) {
            CHECK(rejection_rate(mixed, 1.0, ShrinkTrunc{0.9, 2.0, 0.05, true}, alpha) <= alpha);
            CHECK(rejection_rate(mixed, 1.0, FixedEta{0.8}, alpha) <= alpha);
        }
    }

    TEST_CASE("sample plans") {
        CHECK(sample_plan(42, 1000) == sample_plan(42, 1000));
        auto plan = sample_plan(42, 1000);
        std::vector<std::size_t> sorted = plan;
        std::sort(sorted.begin(), sorted.end());
        std::vector<std::size_t> identity(1000);
        std::iota(identity.begin(), identity.end(), std::size_t{0});
        CHECK(sorted == identity);

        SamplePlan lazy(42, 1000);
        for (std::size_t i = 0; i < 50; ++i) CHECK(lazy.next() == plan[i]);
        CHECK(lazy.drawn() == 50);

        int differing = 0;
        for (std::uint64_t s = 0; s < 100; ++s) differing += sample_plan(s, 1000) != sample_plan(s + 1000, 1000);
        CHECK(differing == 100);

        SamplePlan tiny(1, 1);
        CHECK(tiny.next() == 0);
        CHECK(tiny.exhausted());
        CHECK_THROWS(tiny.next());
        std::mt19937_64 rng(1);
        CHECK_THROWS(uniform_below(rng, 0));
    }

    TEST_CASE("first draw is uniform across seeds") {
        const std::size_t N = 10;
        std::vector<double> counts(N, 0.0);
        const int seeds = 10000;
        for (int s = 0; s < seeds; ++s) counts[SamplePlan(static_cast<std::uint64_t>(s), N).next()] += 1.0;
        double chi2 = 0.0;
        const double expected = static_cast<double>(seeds) / N;
        for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
        CHECK(testing::chi_square_upper_tail(chi2, static_cast<int>(N) - 1) > 0.001);
    }

    TEST_CASE("audit configuration") {
        AuditConfig c;
        CHECK_NOTHROW(c.validate());
        c.alpha = 0.0;
        CHECK_THROWS(c.validate());
        c.alpha = 1.0;
        CHECK_THROWS(c.validate());
        c.alpha = 0.05;
        c.max_draws = -1;
        CHECK_THROWS(c.validate());

        MarginReport zero;
        zero.N = 100;
        CHECK_THROWS_AS(mismatch_target(zero), InfeasibleError);
        MarginReport diag;
        diag.N = 100;
        diag.V = 3;
        diag.kind = MarginKind::diagnostic_upper;
        CHECK_THROWS_AS(mismatch_target(diag), InfeasibleError);
    }

    TEST_CASE("a negative null mean certifies with p = 0") {
        AuditConfig config;
        config.alpha = 1e-12;
        AuditRun run({{"t", 1.0, FixedEta{0.9}, 0.0, 1.0}}, 4, config);
        const double one = 1.0;
        run.observe(std::span<const double>(&one, 1));
        run.observe(std::span<const double>(&one, 1));
        CHECK(run.decision() == Decision::in_progress);
        run.observe(std::span<const double>(&one, 1));
        CHECK(run.decision() == Decision::certified);
        CHECK(run.p_value() == 0.0);
    }

    TEST_CASE("a null mean at u forces a full count") {
        AuditConfig config;
        AuditRun run({{"t", 1.0, FixedEta{0.9}, 0.0, 1.0}}, 4, config);
        const double zero = 0.0;
        run.observe(std::span<const double>(&zero, 1));
        CHECK(run.decision() == Decision::in_progress);
        run.observe(std::span<const double>(&zero, 1));
        CHECK(run.decision() == Decision::full_count);
        CHECK(run.status(0) == TestStatus::impossible);
        CHECK(run.result().n_draws == 4);
        CHECK_THROWS(run.observe(std::span<const double>(&zero, 1)));
    }

    TEST_CASE("max_draws escalates to a full count") {
        auto g = plurality_instance(0.01, 0.0);
        std::vector<AuditTarget> targets{mismatch_target(g.margin)};
        AuditConfig config;
        config.max_draws = 10;
        auto r = run_audit(g.instance, targets, config);
        CHECK(r.decision == Decision::full_count);
        CHECK(r.n_draws == 10000);
    }

    TEST_CASE("clean audits at wide margins") {
        auto r6 = mismatch_audit(plurality_instance(0.06, 0.0), 1);
        CHECK(r6.decision == Decision::certified);
        CHECK(r6.n_draws >= 45);
        CHECK(r6.n_draws <= 55);
        auto r10 = mismatch_audit(plurality_instance(0.1, 0.0), 1);
        CHECK(r10.decision == Decision::certified);
        CHECK(r10.n_draws >= 27);
        CHECK(r10.n_draws <= 33);
    }

    TEST_CASE("sample size falls as the margin widens") {
        std::int64_t previous = std::numeric_limits<std::int64_t>::max();
        for (double v : {0.005, 0.01, 0.02, 0.03, 0.06, 0.1}) {
            auto r = mismatch_audit(plurality_instance(v, 0.0), 3);
            CHECK(r.decision == Decision::certified);
            CHECK(r.n_draws < previous);
            previous = r.n_draws;
        }
    }

    TEST_CASE("audits are deterministic and p is a running minimum") {
        auto g = plurality_instance(0.02, 0.003, 9);
        auto a = mismatch_audit(g, 77, true);
        auto b = mismatch_audit(g, 77, true);
        CHECK(a.n_draws == b.n_draws);
        CHECK(a.p_trajectory == b.p_trajectory);
        REQUIRE(!a.p_trajectory.empty());
        for (std::size_t i = 1; i < a.p_trajectory.size(); ++i) CHECK(a.p_trajectory[i] <= a.p_trajectory[i - 1]);
        std::set<std::int64_t> sizes;
        for (std::uint64_t s = 0; s < 20; ++s) sizes.insert(mismatch_audit(g, s).n_draws);
        CHECK(sizes.size() > 1);
    }

    TEST_CASE("comparison audit certifies a clean plurality contest") {
        auto g = plurality_instance(0.06, 0.0);
        REQUIRE(g.assertions);
        std::vector<AuditTarget> targets;
        for (const auto& a : g.assertions->assertions) targets.push_back(comparison_target(a));
        AuditConfig config;
        config.seed = 5;
        auto r = run_audit(g.instance, targets, config);
        CHECK(r.decision == Decision::certified);
        // Assorter margin 0.12; each clean draw multiplies T by about 2 / 1.88.
        CHECK(r.n_draws >= 48);
        CHECK(r.n_draws <= 60);
    }

    TEST_CASE("logged audits replay and tampering is detected") {
        auto g = plurality_instance(0.03, 0.002, 4, 2000);
        std::vector<AuditTarget> targets{mismatch_target(g.margin)};
        AuditConfig config;
        config.seed = 12;
        std::ostringstream log;
        auto result = run_audit(g.instance, targets, config, RunOptions{.log = &log});
        std::istringstream in(log.str());
        auto report = replay_audit_log(in, g.instance, targets, config);
        CHECK(report.consistent);
        CHECK(report.decision == result.decision);
        CHECK(report.lines == result.n_draws);

        std::vector<std::string> lines;
        std::istringstream split(log.str());
        for (std::string l; std::getline(split, l);) lines.push_back(l);
        REQUIRE(lines.size() >= 3);
        auto join = [](const std::vector<std::string>& ls) {
            std::string s;
            for (const auto& l : ls) s += l + "\n";
            return s;
        };

        auto swapped = lines;
        std::swap(swapped[0], swapped[1]);
        std::istringstream s1(join(swapped));
        CHECK_FALSE(replay_audit_log(s1, g.instance, targets, config).consistent);

        auto edited = lines;
        json j = json::parse(edited[1]);
        j["assertions"][0]["T"] = j["assertions"][0]["T"].get<double>() * 1.0000001;
        edited[1] = j.dump();
        std::istringstream s2(join(edited));
        auto bad = replay_audit_log(s2, g.instance, targets, config);
        CHECK_FALSE(bad.consistent);
        CHECK(bad.message.find("line 2") != std::string::npos);

        auto other_seed = config;
        other_seed.seed = 13;
        std::istringstream s3(log.str());
        CHECK_FALSE(replay_audit_log(s3, g.instance, targets, other_seed).consistent);

        auto partial = lines;
        partial.resize(2);
        std::istringstream s4(join(partial));
        auto prefix = replay_audit_log(s4, g.instance, targets, config);
        CHECK(prefix.consistent);
        CHECK(prefix.decision == Decision::in_progress);
    }
}
