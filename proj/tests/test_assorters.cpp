#include <doctest.h>

#include <random>

#include "rla/assorters.hpp"
#include "rla/error.hpp"
#include "support.hpp"

using namespace rla;
using nlohmann::json;

namespace {

const Rational half = make_rational(1, 2);

Rational mean(const std::vector<Rational>& xs) {
    Rational s = 0;
    for (const auto& x : xs) s += x;
    return s / static_cast<long long>(xs.size());
}

}  // namespace

TEST_SUITE("assorters") {
    TEST_CASE("plurality assorter values") {
        const Contest c = testing::two_candidate_contest();
        Assorter a = plurality_assorter(0, 1, c);
        CHECK(a.upper() == 1);
        CHECK(a.value(Vote::plurality(0)) == 1);
        CHECK(a.value(Vote::null()) == half);
        CHECK(a.value(Vote::plurality(1)) == 0);
        CHECK_THROWS(plurality_assorter(0, 0, c));
    }

    TEST_CASE("assorter margin") {
        CHECK(assorter_margin(std::vector<Rational>(5, Rational(1))) == 1);
        CHECK(assorter_margin(std::vector<Rational>{Rational(0), Rational(1)}) == 0);
        const Contest c = testing::two_candidate_contest();
        std::vector<Vote> cvrs(5100, Vote::plurality(0));
        cvrs.insert(cvrs.end(), 4900, Vote::plurality(1));
        CHECK(assorter_margin(plurality_assorter(0, 1, c), cvrs) == make_rational(2, 100));
        CHECK_THROWS(assorter_margin(std::vector<Rational>{}));
    }

    TEST_CASE("the seven numerator cases") {
        const Contest c = testing::two_candidate_contest();
        Assorter a = plurality_assorter(0, 1, c);
        const Rational nu = make_rational(2, 100);
        const Vote ali = Vote::plurality(0), bob = Vote::plurality(1), null = Vote::null();
        struct Case {
            Vote b, c;
            Rational numerator;
            Discrepancy category;
        };
        const std::vector<Case> cases{
            {bob, ali, Rational(0), Discrepancy::two_over},
            {bob, null, half, Discrepancy::one_over},
            {null, ali, half, Discrepancy::one_over},
            {ali, ali, Rational(1), Discrepancy::match},
            {null, bob, make_rational(3, 2), Discrepancy::one_under},
            {ali, null, make_rational(3, 2), Discrepancy::one_under},
            {ali, bob, Rational(2), Discrepancy::two_under},
        };
        for (const auto& k : cases) {
            auto score = overstatement_value(k.b, k.c, a, nu);
            CHECK(score.value == k.numerator / (2 - nu));
            REQUIRE(score.category.has_value());
            CHECK(*score.category == k.category);
        }
        CHECK(overstatement_value(bob, bob, a, nu).value == 1 / (2 - nu));
        CHECK(overstatement_value(null, null, a, nu).category == Discrepancy::match);
        CHECK(to_double(overstatement_value(ali, bob, a, nu).value) == doctest::Approx(1.0101).epsilon(1e-4));
        CHECK(overstatement_upper(Rational(1), nu) == 2 / (2 - nu));
        CHECK_THROWS(overstatement_value(ali, bob, a, Rational(0)));
        CHECK_THROWS(overstatement_value(ali, bob, a, Rational(2)));
    }

    TEST_CASE("mismatch assorter") {
        const Vote ali = Vote::plurality(0), bob = Vote::plurality(1);
        CHECK(mismatch_value(ali, bob, make_rational(1, 10)) == 0);
        CHECK(mismatch_value(ali, bob, Rational(0)) == 0);
        CHECK(mismatch_value(ali, ali, Rational(0)) == half);
        CHECK(mismatch_value(ali, ali, make_rational(1, 10)) == make_rational(10, 18));
        CHECK(mismatch_value(Vote::null(), Vote::null(), make_rational(1, 10)) == make_rational(10, 18));
        CHECK(mismatch_upper(make_rational(1, 10)) == make_rational(10, 18));
        CHECK(mismatch_value(Vote::ranking({0, 1}), Vote::ranking({0}), make_rational(1, 10)) == 0);
        CHECK_THROWS(mismatch_upper(Rational(1)));
        CHECK_THROWS(mismatch_upper(Rational(-1)));
    }

    TEST_CASE("mean above one half at the boundary") {
        const std::int64_t N = 100, V = 5;
        const Rational vp = make_rational(V, N);
        const Rational u = mismatch_upper(vp);
        auto population = [&](std::int64_t M) {
            std::vector<Rational> xs(static_cast<std::size_t>(N), u);
            for (std::int64_t i = 0; i < M; ++i) xs[static_cast<std::size_t>(i)] = 0;
            return xs;
        };
        CHECK(mean_gt_half(population(0)));
        CHECK(mean(population(V)) == half);
        CHECK_FALSE(mean_gt_half(population(V)));
        CHECK(mean_gt_half(population(V - 1)));
    }

    TEST_CASE("mismatch equivalence on random populations") {
        std::mt19937_64 rng(17);
        for (int trial = 0; trial < 1000; ++trial) {
            const std::int64_t N = 1 + static_cast<std::int64_t>(rng() % 60);
            const std::int64_t V = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(N));
            const std::int64_t M = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(N + 1));
            const Rational vp = make_rational(V, N);
            std::vector<Rational> xs;
            for (std::int64_t i = 0; i < N; ++i) {
                const Vote c = Vote::plurality(static_cast<CandidateIndex>(rng() % 2));
                const Vote b = i < M ? (c == Vote::plurality(0) ? Vote::plurality(1) : Vote::null()) : c;
                const Rational x = mismatch_value(b, c, vp);
                CHECK((x == 0 || x == mismatch_upper(vp)));
                xs.push_back(x);
            }
            CHECK(mean_gt_half(xs) == (M < V));
        }
    }

    TEST_CASE("overstatement equivalence on random populations") {
        std::mt19937_64 rng(23);
        const Contest c = testing::two_candidate_contest();
        Assorter a = plurality_assorter(0, 1, c);
        const std::vector<Vote> alphabet{Vote::plurality(0), Vote::plurality(1), Vote::null()};
        int tested = 0;
        for (int trial = 0; tested < 1000; ++trial) {
            const std::size_t N = 1 + rng() % 40;
            std::vector<Vote> cvrs, ballots;
            for (std::size_t i = 0; i < N; ++i) {
                cvrs.push_back(alphabet[rng() % 3]);
                ballots.push_back(rng() % 3 == 0 ? alphabet[rng() % 3] : cvrs.back());
            }
            const Rational nu = assorter_margin(a, cvrs);
            if (nu <= 0) continue;
            ++tested;
            std::vector<Rational> B, A;
            const Rational upper = overstatement_upper(a.upper(), nu);
            for (std::size_t i = 0; i < N; ++i) {
                const Rational x = overstatement_value(ballots[i], cvrs[i], a, nu).value;
                CHECK(x >= 0);
                CHECK(x <= upper);
                B.push_back(x);
                A.push_back(a.value(ballots[i]));
            }
            CHECK(mean_gt_half(B) == mean_gt_half(A));
        }
    }

    TEST_CASE("NEB and NEN scoring") {
        const Contest c = testing::example1_contest();
        const CandidateIndex ali = 0, bob = 1, cal = 2, dee = 3;
        Assorter neb = neb_assorter(ali, cal, c);
        CHECK(neb.value(Vote::ranking({ali})) == 1);
        CHECK(neb.value(Vote::ranking({dee, cal, ali})) == 0);
        CHECK(neb.value(Vote::ranking({dee, cal})) == 0);
        CHECK(neb.value(Vote::ranking({dee, ali, cal})) == half);
        CHECK(neb.value(Vote::ranking({bob})) == half);
        CHECK(neb.value(Vote::null()) == half);

        Assorter nen = nen_assorter(dee, ali, {ali, dee}, c);
        CHECK(nen.value(Vote::ranking({bob, cal, dee})) == 1);
        CHECK(nen.value(Vote::ranking({bob, ali, dee})) == 0);
        CHECK(nen.value(Vote::ranking({bob, cal})) == half);
        CHECK(nen.value(Vote::null()) == half);
        CHECK_THROWS_AS(nen_assorter(dee, ali, {ali, bob}, c), ParseError);
    }

    TEST_CASE("assertion files in both layouts") {
        const Contest c = testing::example1_contest();
        const auto votes = testing::example1_cvrs().votes();
        const json ours = json::parse(R"([
            {"type": "NEN", "winner": "Dee", "loser": "Ali", "continuing": ["Ali", "Dee"]},
            {"type": "NEN", "winner": "Dee", "loser": "Bob", "continuing": ["Ali", "Bob", "Dee"]}
        ])");
        const json raire = json::parse(R"({"assertions": [
            {"assertion_type": "IRV_ELIMINATION", "winner": "Dee", "loser": "Ali", "already_eliminated": ["Bob", "Cal"]},
            {"assertion_type": "IRV_ELIMINATION", "winner": "Dee", "loser": "Bob", "already_eliminated": ["Cal"]}
        ]})");
        AssertionSet a = irv_assertion_assorters(ours, c, votes);
        AssertionSet b = irv_assertion_assorters(raire, c, votes);
        REQUIRE(a.assertions.size() == 2);
        REQUIRE(b.assertions.size() == 2);
        for (std::size_t i = 0; i < 2; ++i) {
            CHECK(a.assertions[i].margin == b.assertions[i].margin);
            for (const auto& v : votes) CHECK(a.assertions[i].assorter.value(v) == b.assertions[i].assorter.value(v));
        }
        // Dee 30 vs Ali 26 of 60 cards.
        CHECK(a.assertions[0].margin == make_rational(4, 60));
        // Dee 24 vs Bob 10.
        CHECK(a.assertions[1].margin == make_rational(14, 60));
        CHECK(a.min_margin_index() == 0);
        CHECK(a.assertions[0].winner == 3);
        CHECK(a.assertions[0].loser == 0);
    }

    TEST_CASE("assertion file errors") {
        const Contest c = testing::example1_contest();
        const auto votes = testing::example1_cvrs().votes();
        CHECK_THROWS_AS(irv_assertion_assorters(json::parse(R"([{"type": "XYZ", "winner": "Dee", "loser": "Ali"}])"), c, votes),
                        ParseError);
        CHECK_THROWS_AS(irv_assertion_assorters(json::parse(R"([{"type": "NEB", "winner": "Dee", "loser": "Zed"}])"), c, votes),
                        ParseError);
        CHECK_THROWS_AS(irv_assertion_assorters(json::parse(R"([{"type": "NEN", "winner": "Dee", "loser": "Ali"}])"), c, votes),
                        ParseError);
        // NEB(Ali, Dee) has negative margin on these CVRs.
        CHECK_THROWS_AS(irv_assertion_assorters(json::parse(R"([{"type": "NEB", "winner": "Ali", "loser": "Dee"}])"), c, votes),
                        InfeasibleError);
    }

    TEST_CASE("plurality assertions") {
        Contest c{"p", ContestKind::plurality, {"A", "B", "C"}, 1};
        std::vector<Vote> votes(5, Vote::plurality(1));
        votes.insert(votes.end(), 3, Vote::plurality(0));
        votes.insert(votes.end(), 2, Vote::plurality(2));
        AssertionSet s = plurality_assertions(c, votes);
        REQUIRE(s.assertions.size() == 2);
        CHECK(s.assertions[0].winner == 1);
        CHECK(s.assertions[0].loser == 0);
        CHECK(s.assertions[0].margin == make_rational(2, 10));
        CHECK(s.assertions[1].margin == make_rational(3, 10));
        CHECK(s.min_margin_index() == 0);
    }
}
