#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "rla/error.hpp"
#include "rla/errormodels.hpp"
#include "rla/margins.hpp"
#include "support.hpp"

using namespace rla;
using nlohmann::json;

namespace {

ScenarioSpec plurality(ErrorModel model, const char* v, const char* m, std::int64_t N = 10000, std::uint64_t seed = 1) {
    ScenarioSpec s;
    s.kind = ContestKind::plurality;
    s.model = model;
    s.N = N;
    s.v_target = parse_rational(v);
    s.m_target = parse_rational(m);
    s.seed = seed;
    return s;
}

std::size_t count_if_pair(const LinkedInstance& inst, const Vote& cvr, const Vote& ballot) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < inst.size(); ++i) n += inst.cvrs[i] == cvr && inst.ballots[i] == ballot;
    return n;
}

AssertionSet example1_assertions(const std::vector<Vote>& votes) {
    return irv_assertion_assorters(json::parse(R"([
        {"type": "NEN", "winner": "Dee", "loser": "Ali", "continuing": ["Ali", "Dee"]},
        {"type": "NEN", "winner": "Dee", "loser": "Bob", "continuing": ["Ali", "Bob", "Dee"]},
        {"type": "NEN", "winner": "Dee", "loser": "Cal", "continuing": ["Ali", "Bob", "Cal", "Dee"]}
    ])"),
                                   testing::example1_contest(), votes);
}

bool is_prefix(const Vote& shorter, const Vote& longer) {
    const auto a = shorter.preferences();
    const auto b = longer.preferences();
    return a.size() < b.size() && std::equal(a.begin(), a.end(), b.begin());
}

}  // namespace

TEST_SUITE("errormodels") {
    TEST_CASE("model names") {
        CHECK(error_model_from_string("two_over", ContestKind::plurality) == ErrorModel::two_over);
        CHECK(error_model_from_string("random_20_80", ContestKind::plurality) == ErrorModel::random_20_80);
        CHECK(error_model_from_string("truncate", ContestKind::irv) == ErrorModel::irv_truncate);
        CHECK(error_model_from_string("flip", ContestKind::stv) == ErrorModel::stv_flip);
        CHECK_THROWS_AS(error_model_from_string("truncate", ContestKind::plurality), ParseError);
        CHECK_THROWS_AS(error_model_from_string("two_over", ContestKind::irv), ParseError);
        CHECK(to_string(ErrorModel::irv_over) == "over");
    }

    TEST_CASE("rounding is half to even") {
        CHECK(parse_rational("0.015") == make_rational(3, 200));
        CHECK(parse_rational("0.09") == make_rational(9, 100));
        CHECK(parse_rational("007") == 7);
        CHECK(parse_rational("1e-05") == make_rational(1, 100000));
        CHECK(parse_rational("-2/4") == make_rational(-1, 2));
        CHECK_THROWS_AS(parse_rational("0x10"), ParseError);
        CHECK(scaled_count(parse_rational("0.0125"), 100) == 1);
        CHECK(scaled_count(parse_rational("0.0135"), 100) == 1);
        CHECK(scaled_count(parse_rational("0.015"), 100) == 2);
        CHECK(scaled_count(parse_rational("0.025"), 100) == 2);
        CHECK(scaled_count(parse_rational("0.001"), 10000) == 10);
        CHECK(rational_from_json(json(0.0003)) == make_rational(3, 10000));
        CHECK(rational_from_json(json("1/3")) == make_rational(1, 3));
        CHECK_THROWS_AS(rational_from_json(json::array()), ParseError);
    }

    TEST_CASE("clean plurality instance at v = 0.01") {
        auto g = gen_plurality(plurality(ErrorModel::two_over, "0.01", "0"));
        CHECK(g.instance.size() == 10000);
        CHECK(g.instance.mismatch_count() == 0);
        CHECK(std::count(g.instance.cvrs.begin(), g.instance.cvrs.end(), Vote::plurality(0)) == 5100);
        CHECK(std::count(g.instance.cvrs.begin(), g.instance.cvrs.end(), Vote::plurality(1)) == 4900);
        CHECK(g.margin.V == 100);
        CHECK(g.margin.kind == MarginKind::exact);
        CHECK(plurality_cvr_margin(CvrSet([&] {
                                       std::vector<CardRecord> r;
                                       for (std::size_t i = 0; i < g.instance.size(); ++i)
                                           r.push_back({g.instance.card_ids[i], g.instance.cvrs[i]});
                                       return r;
                                   }()),
                                   g.instance.contest)
                  .V == 100);
        CHECK(g.reported_outcome_correct == true);
        REQUIRE(g.assertions);
        CHECK(g.assertions->assertions.front().margin == make_rational(2, 100));
    }

    TEST_CASE("two_over: every error is a 2-vote overstatement") {
        auto g = gen_plurality(plurality(ErrorModel::two_over, "0.02", "0.001"));
        CHECK(g.instance.mismatch_count() == 10);
        CHECK(count_if_pair(g.instance, Vote::plurality(0), Vote::plurality(1)) == 10);
        CHECK(g.margin.V == 200);
    }

    TEST_CASE("two_under: correcting errors widens the margin") {
        auto g = gen_plurality(plurality(ErrorModel::two_under, "0.02", "0.003"));
        CHECK(g.instance.mismatch_count() == 30);
        CHECK(count_if_pair(g.instance, Vote::plurality(1), Vote::plurality(0)) == 30);
        auto ali = [](const std::vector<Vote>& vs) { return std::count(vs.begin(), vs.end(), Vote::plurality(0)); };
        CHECK(ali(g.instance.ballots) > ali(g.instance.cvrs));
        CHECK(g.reported_outcome_correct == true);
    }

    TEST_CASE("random_20_80 has 80% null CVRs") {
        auto g = gen_plurality(plurality(ErrorModel::random_20_80, "0.02", "0.01"));
        CHECK(std::count(g.instance.cvrs.begin(), g.instance.cvrs.end(), Vote::null()) == 8000);
        CHECK(g.instance.mismatch_count() == 100);
        CHECK(g.margin.V == 200);
    }

    TEST_CASE("random_100_0 uses valid CVRs and may change the outcome") {
        auto g = gen_plurality(plurality(ErrorModel::random_100_0, "0.001", "0.01"));
        CHECK(std::count(g.instance.cvrs.begin(), g.instance.cvrs.end(), Vote::null()) == 0);
        CHECK(g.instance.mismatch_count() == 100);
        CHECK(g.margin.V == 10);
        REQUIRE(g.reported_outcome_correct.has_value());
        // Random errors at m = 30 v overturn the outcome for some seeds.
        bool saw_wrong = false;
        for (std::uint64_t seed = 0; seed < 40 && !saw_wrong; ++seed) {
            saw_wrong = !*gen_plurality(plurality(ErrorModel::random_100_0, "0.001", "0.03", 10000, seed)).reported_outcome_correct;
        }
        CHECK(saw_wrong);
    }

    TEST_CASE("generation is deterministic per seed") {
        auto a = gen_plurality(plurality(ErrorModel::random_100_0, "0.01", "0.003", 10000, 5));
        auto b = gen_plurality(plurality(ErrorModel::random_100_0, "0.01", "0.003", 10000, 5));
        auto c = gen_plurality(plurality(ErrorModel::random_100_0, "0.01", "0.003", 10000, 6));
        CHECK(a.instance.ballots == b.instance.ballots);
        CHECK(a.instance.ballots != c.instance.ballots);
    }

    TEST_CASE("infeasible plurality scenarios name the constraint") {
        CHECK_THROWS_AS(gen_plurality(plurality(ErrorModel::two_over, "0.00001", "0")), InfeasibleError);
        try {
            gen_plurality(plurality(ErrorModel::two_under, "0.5", "0.5", 100));
            FAIL("accepted");
        } catch (const InfeasibleError& e) {
            CHECK(std::string(e.what()).find("loser CVRs") != std::string::npos);
        }
        CHECK_THROWS_AS(gen_plurality(plurality(ErrorModel::random_20_80, "0.2", "0", 100)), InfeasibleError);
    }

    TEST_CASE("scenario JSON") {
        auto s = scenario_from_json(json::parse(R"({"kind":"plurality","model":"two_over","N":10000,"v":0.06,"m":0})"));
        CHECK(s.v_target == make_rational(6, 100));
        CHECK(s.id() == "plurality-two_over-N10000-v0.06-m0");
        auto again = scenario_from_json(to_json(s));
        CHECK(again.id() == s.id());
        CHECK_THROWS_AS(scenario_from_json(json::parse(R"({"kind":"plurality","N":100,"v":0.1,"m":1})")), ParseError);
        CHECK_THROWS_AS(scenario_from_json(json::parse(R"({"kind":"plurality","N":100,"v":0})")), ParseError);
        auto stv = scenario_from_json(json::parse(R"({"kind":"stv","N":6886,"V_minus":436,"m":"0.003","candidates":7,"seats":3})"));
        CHECK(stv.v_target == make_rational(436, 6886));
        CHECK(stv.stv_candidates == 7);
    }

    TEST_CASE("IRV with m = 0 leaves ballots equal to CVRs") {
        const auto cvrs = testing::example1_cvrs();
        const auto votes = cvrs.votes();
        auto inst = gen_irv(testing::example1_contest(), cvrs, example1_assertions(votes), Rational(0), ErrorModel::irv_over, 1);
        CHECK(inst.ballots == inst.cvrs);
    }

    TEST_CASE("IRV over on Example 1 drops the smallest-margin assorter by 1") {
        const auto cvrs = testing::example1_cvrs();
        const auto votes = cvrs.votes();
        const auto assertions = example1_assertions(votes);
        const Assertion& target = assertions.assertions[assertions.min_margin_index()];
        auto inst = gen_irv(testing::example1_contest(), cvrs, assertions, make_rational(1, 60), ErrorModel::irv_over, 1);
        CHECK(inst.mismatch_count() == 1);
        for (std::size_t i = 0; i < inst.size(); ++i) {
            if (inst.ballots[i] == inst.cvrs[i]) continue;
            CHECK(target.assorter.value(inst.ballots[i]) - target.assorter.value(inst.cvrs[i]) == -1);
        }
    }

    TEST_CASE("IRV under raises the smallest-margin assorter, preferring full units") {
        const auto cvrs = testing::example1_cvrs();
        const auto votes = cvrs.votes();
        const auto assertions = example1_assertions(votes);
        const Assertion& target = assertions.assertions[assertions.min_margin_index()];
        // NEN(Dee, Ali): 26 cards score 0 and 4 score 1/2.
        auto inst = gen_irv(testing::example1_contest(), cvrs, assertions, make_rational(28, 60), ErrorModel::irv_under, 1);
        CHECK(inst.mismatch_count() == 28);
        int full = 0, half = 0;
        for (std::size_t i = 0; i < inst.size(); ++i) {
            if (inst.ballots[i] == inst.cvrs[i]) continue;
            const Rational d = target.assorter.value(inst.ballots[i]) - target.assorter.value(inst.cvrs[i]);
            full += d == 1;
            half += d == make_rational(1, 2);
        }
        CHECK(full == 26);
        CHECK(half == 2);
        CHECK_THROWS_AS(gen_irv(testing::example1_contest(), cvrs, assertions, make_rational(31, 60), ErrorModel::irv_under, 1),
                        InfeasibleError);
    }

    TEST_CASE("IRV truncate keeps a strict prefix") {
        const auto cvrs = testing::example1_cvrs();
        const auto votes = cvrs.votes();
        auto inst = gen_irv(testing::example1_contest(), cvrs, example1_assertions(votes), make_rational(30, 60),
                            ErrorModel::irv_truncate, 3);
        CHECK(inst.mismatch_count() == 30);
        for (std::size_t i = 0; i < inst.size(); ++i) {
            if (inst.ballots[i] != inst.cvrs[i]) CHECK(is_prefix(inst.ballots[i], inst.cvrs[i]));
        }
        // (Dee, Ali, Bob) truncates to (), (Dee) or (Dee, Ali); all three appear across seeds.
        std::set<std::size_t> lengths;
        for (std::uint64_t seed = 0; seed < 40; ++seed) {
            auto t = gen_irv(testing::example1_contest(), cvrs, example1_assertions(votes), make_rational(30, 60),
                             ErrorModel::irv_truncate, seed);
            for (std::size_t i = 0; i < t.size(); ++i) {
                if (t.cvrs[i] == Vote::ranking({3, 0, 1}) && t.ballots[i] != t.cvrs[i]) lengths.insert(t.ballots[i].preferences().size());
            }
        }
        CHECK(lengths == std::set<std::size_t>{0, 1, 2});
    }

    TEST_CASE("IRV random always differs from the CVR") {
        const auto cvrs = testing::example1_cvrs();
        const auto votes = cvrs.votes();
        auto inst = gen_irv(testing::example1_contest(), cvrs, example1_assertions(votes), make_rational(1, 2),
                            ErrorModel::irv_random, 8);
        CHECK(inst.mismatch_count() == 30);
    }

    TEST_CASE("STV populations") {
        auto g = gen_stv(6886, 436, Rational(0), 1, 7, 3);
        CHECK(g.instance.size() == 6886);
        CHECK(g.instance.mismatch_count() == 0);
        CHECK(g.margin.kind == MarginKind::lower_bound);
        CHECK(g.margin.V == 436);
        CHECK(g.instance.contest.candidates.size() == 7);
        CHECK(g.instance.contest.seats == 3);
        auto h = gen_stv(8869, 161, parse_rational("0.003"), 2, 11, 4);
        CHECK(h.instance.mismatch_count() == 27);
        CHECK_THROWS_AS(gen_stv(10, 11, Rational(0), 1), InfeasibleError);
    }

    TEST_CASE("export writes the four files") {
        auto g = gen_plurality(plurality(ErrorModel::two_over, "0.1", "0.01", 200));
        const auto dir = std::filesystem::temp_directory_path() / "rla-export-test";
        std::filesystem::remove_all(dir);
        export_instance(g, dir);
        const Contest c = load_contest(dir / "contest.json");
        auto linked = link(c, parse_cvrs(dir / "cvrs.ndjson", c), parse_ballots(dir / "ballots.ndjson", c));
        CHECK(linked.mismatch_count() == 2);
        CHECK(linked.ballots == g.instance.ballots);
        auto m = load_external_margin(dir / "margin.json", 200);
        CHECK(m.V == 20);
        std::filesystem::remove_all(dir);
    }
}
