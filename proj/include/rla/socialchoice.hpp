#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "rla/election.hpp"

namespace rla {

using Count = std::int64_t;

/// Result of applying the social choice function. A tie is its own outcome:
/// `winners` then lists every candidate that could win under some tie-break.
struct Outcome {
    std::vector<CandidateIndex> winners;  // sorted
    bool tie = false;
};

/// Equal iff neither outcome is a tie and the winner sets agree.
bool outcome_equal(const Outcome& a, const Outcome& b);

struct PluralityTally {
    std::vector<Count> tallies;  // indexed by candidate
    Outcome outcome;
};

/// Counts each card for its plurality choice or first preference; null votes are ignored.
PluralityTally tabulate_plurality(std::span<const Vote> votes, const Contest& contest);

struct IrvRound {
    /// Tally per candidate; empty for candidates no longer continuing.
    std::vector<std::optional<Count>> tallies;
    /// Cumulative exhausted cards (including null votes) at this round.
    Count exhausted = 0;
    /// Candidate eliminated at the end of this round, if any.
    std::optional<CandidateIndex> eliminated;
    /// Several continuing candidates shared the lowest tally.
    bool elimination_tie = false;
};

struct IrvRounds {
    std::vector<IrvRound> rounds;
    std::vector<CandidateIndex> eliminated;  // elimination order
    Count cards = 0;
    /// Counting stopped because a candidate held a strict majority of continuing cards
    /// while more than two candidates remained.
    bool majority_stop = false;
};

struct IrvTabulation {
    IrvRounds rounds;
    Outcome outcome;
};

/// Instant-runoff count. Elimination ties follow the contest's candidate order
/// (earliest listed goes first); if another tie-break could change the winner
/// the outcome is reported as a tie.
IrvTabulation tabulate_irv(std::span<const Vote> votes, const Contest& contest);

/// Dispatches on the contest kind. STV is not tabulated and throws Error.
Outcome tabulate(std::span<const Vote> votes, const Contest& contest);

nlohmann::json to_json(const Outcome& outcome, const Contest& contest);
nlohmann::json to_json(const PluralityTally& tally, const Contest& contest);
nlohmann::json to_json(const IrvTabulation& tab, const Contest& contest);

namespace detail {

/// Distinct vote with its multiplicity; tabulation depends only on these.
struct VoteGroup {
    Vote vote;
    Count weight = 0;
};

std::vector<VoteGroup> group_votes(std::span<const Vote> votes);
Outcome plurality_outcome(std::span<const VoteGroup> groups, const Contest& contest);
Outcome irv_outcome(std::span<const VoteGroup> groups, const Contest& contest);

}  // namespace detail

}  // namespace rla
