#include "rla/socialchoice.hpp"

#include <algorithm>
#include <bit>
#include <unordered_map>

#include "rla/error.hpp"

namespace rla {

using nlohmann::json;

bool outcome_equal(const Outcome& a, const Outcome& b) {
    return !a.tie && !b.tie && a.winners == b.winners;
}

namespace detail {

std::vector<VoteGroup> group_votes(std::span<const Vote> votes) {
    std::unordered_map<Vote, Count, VoteHash> counts;
    for (const auto& v : votes) ++counts[v];
    std::vector<VoteGroup> groups;
    groups.reserve(counts.size());
    for (auto& [vote, n] : counts) groups.push_back({vote, n});
    std::sort(groups.begin(), groups.end(), [](const VoteGroup& a, const VoteGroup& b) { return a.vote < b.vote; });
    return groups;
}

namespace {

std::vector<Count> plurality_tallies(std::span<const VoteGroup> groups, const Contest& contest) {
    std::vector<Count> tallies(contest.candidates.size(), 0);
    for (const auto& g : groups) {
        if (auto c = g.vote.first()) tallies[static_cast<std::size_t>(*c)] += g.weight;
    }
    return tallies;
}

Outcome top_of(const std::vector<Count>& tallies) {
    Outcome out;
    if (tallies.empty()) return out;
    Count best = *std::max_element(tallies.begin(), tallies.end());
    for (std::size_t c = 0; c < tallies.size(); ++c) {
        if (tallies[c] == best) out.winners.push_back(static_cast<CandidateIndex>(c));
    }
    out.tie = out.winners.size() > 1;
    return out;
}

using Mask = std::uint64_t;

/// IRV counting over grouped votes with candidates encoded as a bitmask.
class IrvCounter {
public:
    IrvCounter(std::span<const VoteGroup> groups, int candidates) : groups_(groups), n_(candidates) {
        if (candidates > 64) throw Error("IRV tabulation supports at most 64 candidates");
    }

    Mask all() const { return n_ == 64 ? ~Mask{0} : ((Mask{1} << n_) - 1); }

    /// Tallies for the continuing candidates; returns exhausted weight.
    Count count(Mask continuing, std::vector<Count>& tallies) const {
        tallies.assign(static_cast<std::size_t>(n_), 0);
        Count exhausted = 0;
        for (const auto& g : groups_) {
            bool counted = false;
            for (CandidateIndex c : g.vote.preferences()) {
                if (continuing & (Mask{1} << c)) {
                    tallies[static_cast<std::size_t>(c)] += g.weight;
                    counted = true;
                    break;
                }
            }
            if (!counted) exhausted += g.weight;
        }
        return exhausted;
    }

    std::optional<CandidateIndex> majority(Mask continuing, const std::vector<Count>& tallies) const {
        Count total = 0;
        for (int c = 0; c < n_; ++c) {
            if (continuing & (Mask{1} << c)) total += tallies[static_cast<std::size_t>(c)];
        }
        for (int c = 0; c < n_; ++c) {
            if ((continuing & (Mask{1} << c)) && 2 * tallies[static_cast<std::size_t>(c)] > total) return c;
        }
        return std::nullopt;
    }

    Mask lowest(Mask continuing, const std::vector<Count>& tallies) const {
        Count low = 0;
        bool first = true;
        for (int c = 0; c < n_; ++c) {
            if (!(continuing & (Mask{1} << c))) continue;
            Count t = tallies[static_cast<std::size_t>(c)];
            if (first || t < low) low = t;
            first = false;
        }
        Mask out = 0;
        for (int c = 0; c < n_; ++c) {
            if ((continuing & (Mask{1} << c)) && tallies[static_cast<std::size_t>(c)] == low) out |= Mask{1} << c;
        }
        return out;
    }

    /// Every candidate that wins under some resolution of elimination ties.
    Mask possible_winners(Mask continuing) {
        if (std::popcount(continuing) <= 1) return continuing;
        if (auto it = memo_.find(continuing); it != memo_.end()) return it->second;
        std::vector<Count> tallies;
        count(continuing, tallies);
        Mask result = 0;
        if (auto w = majority(continuing, tallies)) {
            result = Mask{1} << *w;
        } else {
            Mask low = lowest(continuing, tallies);
            for (int c = 0; c < n_; ++c) {
                if (low & (Mask{1} << c)) result |= possible_winners(continuing & ~(Mask{1} << c));
            }
        }
        memo_.emplace(continuing, result);
        return result;
    }

private:
    std::span<const VoteGroup> groups_;
    int n_;
    std::unordered_map<Mask, Mask> memo_;
};

Outcome from_mask(Mask winners, int n) {
    Outcome out;
    for (int c = 0; c < n; ++c) {
        if (winners & (Mask{1} << c)) out.winners.push_back(c);
    }
    out.tie = out.winners.size() > 1;
    return out;
}

}  // namespace

Outcome plurality_outcome(std::span<const VoteGroup> groups, const Contest& contest) {
    return top_of(plurality_tallies(groups, contest));
}

Outcome irv_outcome(std::span<const VoteGroup> groups, const Contest& contest) {
    IrvCounter counter(groups, contest.candidate_count());
    return from_mask(counter.possible_winners(counter.all()), contest.candidate_count());
}

}  // namespace detail

PluralityTally tabulate_plurality(std::span<const Vote> votes, const Contest& contest) {
    PluralityTally out;
    out.tallies.assign(contest.candidates.size(), 0);
    for (const auto& v : votes) {
        if (auto c = v.first()) ++out.tallies.at(static_cast<std::size_t>(*c));
    }
    out.outcome = detail::top_of(out.tallies);
    return out;
}

IrvTabulation tabulate_irv(std::span<const Vote> votes, const Contest& contest) {
    using detail::Mask;
    auto groups = detail::group_votes(votes);
    const int n = contest.candidate_count();
    detail::IrvCounter counter(groups, n);

    IrvTabulation out;
    out.rounds.cards = static_cast<Count>(votes.size());
    Mask continuing = counter.all();
    std::vector<Count> tallies;
    while (true) {
        IrvRound round;
        round.exhausted = counter.count(continuing, tallies);
        round.tallies.resize(static_cast<std::size_t>(n));
        for (int c = 0; c < n; ++c) {
            if (continuing & (Mask{1} << c)) round.tallies[static_cast<std::size_t>(c)] = tallies[static_cast<std::size_t>(c)];
        }
        const int remaining = std::popcount(continuing);
        if (remaining <= 1) {
            out.rounds.rounds.push_back(std::move(round));
            break;
        }
        if (counter.majority(continuing, tallies)) {
            out.rounds.majority_stop = remaining > 2;
            out.rounds.rounds.push_back(std::move(round));
            break;
        }
        Mask low = counter.lowest(continuing, tallies);
        CandidateIndex loser = std::countr_zero(low);
        round.eliminated = loser;
        round.elimination_tie = std::popcount(low) > 1;
        out.rounds.eliminated.push_back(loser);
        out.rounds.rounds.push_back(std::move(round));
        continuing &= ~(Mask{1} << loser);
    }
    out.outcome = detail::from_mask(counter.possible_winners(counter.all()), n);
    return out;
}

Outcome tabulate(std::span<const Vote> votes, const Contest& contest) {
    switch (contest.kind) {
        case ContestKind::plurality: return tabulate_plurality(votes, contest).outcome;
        case ContestKind::irv: return tabulate_irv(votes, contest).outcome;
        case ContestKind::stv: break;
    }
    throw Error("STV tabulation is not supported; supply the reported outcome and a margin lower bound");
}

json to_json(const Outcome& outcome, const Contest& contest) {
    json winners = json::array();
    for (CandidateIndex c : outcome.winners) winners.push_back(contest.name(c));
    return json{{"winners", winners}, {"tie", outcome.tie}};
}

json to_json(const PluralityTally& tally, const Contest& contest) {
    json t = json::object();
    for (std::size_t c = 0; c < tally.tallies.size(); ++c) t[contest.candidates[c]] = tally.tallies[c];
    return json{{"contest", contest.id}, {"kind", "plurality"}, {"tallies", t}, {"outcome", to_json(tally.outcome, contest)}};
}

json to_json(const IrvTabulation& tab, const Contest& contest) {
    json rounds = json::array();
    for (const auto& r : tab.rounds.rounds) {
        json t = json::object();
        for (std::size_t c = 0; c < r.tallies.size(); ++c) {
            if (r.tallies[c]) t[contest.candidates[c]] = *r.tallies[c];
        }
        json jr{{"tallies", t}, {"exhausted", r.exhausted}};
        if (r.eliminated) jr["eliminated"] = contest.name(*r.eliminated);
        if (r.elimination_tie) jr["elimination_tie"] = true;
        rounds.push_back(std::move(jr));
    }
    return json{{"contest", contest.id},
                {"kind", "irv"},
                {"cards", tab.rounds.cards},
                {"rounds", rounds},
                {"majority_stop", tab.rounds.majority_stop},
                {"outcome", to_json(tab.outcome, contest)}};
}

}  // namespace rla
