#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "rla/election.hpp"
#include "rla/rational.hpp"

namespace rla {

/// A bounded, nonnegative function of a vote. The reported outcome is correct
/// when every assorter in a sufficient set has population mean above 1/2.
class Assorter {
public:
    using Fn = std::function<Rational(const Vote&)>;

    Assorter(std::string label, Rational upper, Fn fn);

    const std::string& label() const noexcept { return label_; }
    const Rational& upper() const noexcept { return upper_; }

    /// Throws Error if the function leaves [0, upper] on this vote.
    Rational value(const Vote& vote) const;

private:
    std::string label_;
    Rational upper_;
    Fn fn_;
};

/// 1 for the winner, 0 for the loser, 1/2 for anything else.
Assorter plurality_assorter(CandidateIndex winner, CandidateIndex loser, const Contest& contest);

/// Winner-only assertion: `winner`'s first preferences beat every tally `loser` can reach.
/// 1 when the first preference is the winner, 0 when the loser is ranked and the
/// winner is not ranked above it, 1/2 otherwise.
Assorter neb_assorter(CandidateIndex winner, CandidateIndex loser, const Contest& contest);

/// Elimination assertion: with only `continuing` left, `winner` out-tallies `loser`.
/// 1 when the first continuing preference is the winner, 0 when it is the loser,
/// 1/2 otherwise.
Assorter nen_assorter(CandidateIndex winner, CandidateIndex loser, std::vector<CandidateIndex> continuing,
                      const Contest& contest);

/// Twice the excess of the mean over 1/2: 2 * mean(x) - 1. Throws on an empty population.
Rational assorter_margin(std::span<const Rational> reference_values);

/// Assorter margin of the reference values a(c_i) over the CVRs.
Rational assorter_margin(const Assorter& a, std::span<const Vote> cvrs);

enum class Discrepancy { two_over, one_over, match, one_under, two_under };

std::string_view to_string(Discrepancy d);

struct ComparisonScore {
    Rational value;
    /// Set when (a(b) - a(c)) / u is one of -1, -1/2, 0, 1/2, 1.
    std::optional<Discrepancy> category;
};

/// (u + a(b) - a(c)) / (2u - nu). Requires 0 < nu < 2u.
ComparisonScore overstatement_value(const Vote& ballot, const Vote& cvr, const Assorter& a, const Rational& nu);

/// Upper bound of the overstatement assorter, 2u / (2u - nu).
Rational overstatement_upper(const Rational& u, const Rational& nu);

/// (1 - [ballot != cvr]) / (2 - 2 v'), with strict vote equality. Requires 0 <= v' < 1.
Rational mismatch_value(const Vote& ballot, const Vote& cvr, const Rational& v_prime);

/// Largest value of the mismatch assorter, 1 / (2 - 2 v').
Rational mismatch_upper(const Rational& v_prime);

/// Exact test of mean(values) > 1/2.
bool mean_gt_half(std::span<const Rational> values);

struct Assertion {
    Assorter assorter;
    std::string semantics;  // "NEB", "NEN" or "plurality"
    Rational margin;        // assorter margin on the CVRs
    CandidateIndex winner = 0;
    CandidateIndex loser = 0;
};

struct AssertionSet {
    std::vector<Assertion> assertions;

    /// Index of the assertion with the smallest margin.
    std::size_t min_margin_index() const;
};

/// Reads an assertion list and scores it against the CVRs.
///
/// Accepted layouts: a JSON array, or an object with an "assertions" array. Each entry is
/// {"type": "NEB"|"NEN", "winner", "loser", "continuing": [...]} or the equivalent
/// {"assertion_type": "WINNER_ONLY"|"IRV_ELIMINATION", "winner", "loser",
///  "already_eliminated": [...]} used by published RAIRE assertion files.
/// Throws ParseError on malformed entries and InfeasibleError when some margin is <= 0.
AssertionSet irv_assertion_assorters(const nlohmann::json& assertions, const Contest& contest,
                                     std::span<const Vote> cvrs);

/// Reported winner against each other candidate, for plurality contests.
AssertionSet plurality_assertions(const Contest& contest, std::span<const Vote> cvrs);

nlohmann::json to_json(const AssertionSet& set);

}  // namespace rla
