// Fixtures and independent reference implementations used by the tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "rla/election.hpp"
#include "rla/rational.hpp"
#include "rla/socialchoice.hpp"

namespace testing {

inline rla::Contest example1_contest() { return {"example-1", rla::ContestKind::irv, {"Ali", "Bob", "Cal", "Dee"}, 1}; }

inline rla::Contest two_candidate_contest() { return {"two", rla::ContestKind::plurality, {"Ali", "Bob"}, 1}; }

/// Example 1 as NDJSON: 20 (Ali), 15 (Dee, Ali, Bob), 9 (Cal, Dee), 6 (Bob, Cal, Dee),
/// 6 (Ali, Cal), 4 (Bob, Cal).
inline std::string example1_ndjson() {
    const std::vector<std::pair<int, std::string>> groups{{20, R"(["Ali"])"},
                                                          {15, R"(["Dee","Ali","Bob"])"},
                                                          {9, R"(["Cal","Dee"])"},
                                                          {6, R"(["Bob","Cal","Dee"])"},
                                                          {6, R"(["Ali","Cal"])"},
                                                          {4, R"(["Bob","Cal"])"}};
    std::ostringstream out;
    int id = 0;
    for (const auto& [count, ranking] : groups) {
        for (int k = 0; k < count; ++k) out << R"({"id":"c)" << ++id << R"(","vote":{"ranking":)" << ranking << "}}\n";
    }
    return out.str();
}

inline rla::CvrSet example1_cvrs() {
    std::istringstream in(example1_ndjson());
    return rla::CvrSet(rla::parse_card_records(in, example1_contest()));
}

/// Index of the first CVR equal to `vote`.
inline std::size_t first_index_of(const std::vector<rla::Vote>& votes, const rla::Vote& vote) {
    return static_cast<std::size_t>(std::find(votes.begin(), votes.end(), vote) - votes.begin());
}

// ---------------------------------------------------------------------------
// Reference IRV count: plain lists, no short-circuit, lowest tally eliminated,
// ties to the earliest listed candidate.

struct RefRound {
    std::map<int, long> tallies;  // continuing candidates only
    long exhausted = 0;
};

inline std::vector<RefRound> reference_irv(const std::vector<std::vector<int>>& ballots, int candidates) {
    std::vector<bool> alive(static_cast<std::size_t>(candidates), true);
    std::vector<RefRound> rounds;
    for (int remaining = candidates; remaining >= 1; --remaining) {
        RefRound r;
        for (int c = 0; c < candidates; ++c)
            if (alive[static_cast<std::size_t>(c)]) r.tallies[c] = 0;
        for (const auto& b : ballots) {
            auto it = std::find_if(b.begin(), b.end(), [&](int c) { return alive[static_cast<std::size_t>(c)]; });
            if (it == b.end()) ++r.exhausted;
            else ++r.tallies[*it];
        }
        rounds.push_back(r);
        if (remaining == 1) break;
        int loser = -1;
        for (const auto& [c, t] : r.tallies)
            if (loser < 0 || t < r.tallies[loser]) loser = c;
        alive[static_cast<std::size_t>(loser)] = false;
        if (remaining == 2) break;
    }
    return rounds;
}

// ---------------------------------------------------------------------------
// Card-level margin oracle: try every set of n cards and every replacement.

inline bool changes_outcome(const std::vector<rla::Vote>& votes, const rla::Contest& contest, const rla::Outcome& reported) {
    return !rla::outcome_equal(rla::tabulate(votes, contest), reported);
}

inline bool search_cards(std::vector<rla::Vote>& votes, const rla::Contest& contest, const rla::Outcome& reported,
                         const std::vector<rla::Vote>& vocabulary, std::size_t start, int left) {
    if (left == 0) return changes_outcome(votes, contest, reported);
    for (std::size_t i = start; i < votes.size(); ++i) {
        const rla::Vote saved = votes[i];
        for (const auto& v : vocabulary) {
            if (v == saved) continue;
            votes[i] = v;
            if (search_cards(votes, contest, reported, vocabulary, i + 1, left - 1)) {
                votes[i] = saved;
                return true;
            }
        }
        votes[i] = saved;
    }
    return false;
}

/// Smallest n <= max_radius whose Hamming ball reaches another outcome, or max_radius + 1.
inline int card_level_margin(std::vector<rla::Vote> votes, const rla::Contest& contest,
                             const std::vector<rla::Vote>& vocabulary, int max_radius) {
    const rla::Outcome reported = rla::tabulate(votes, contest);
    if (reported.tie) return 0;
    for (int n = 1; n <= max_radius; ++n) {
        if (search_cards(votes, contest, reported, vocabulary, 0, n)) return n;
    }
    return max_radius + 1;
}

// ---------------------------------------------------------------------------
// Statistics.

/// Upper tail of the chi-square distribution (Wilson-Hilferty approximation).
inline double chi_square_upper_tail(double x, int dof) {
    const double k = dof;
    const double z = (std::cbrt(x / k) - (1.0 - 2.0 / (9.0 * k))) / std::sqrt(2.0 / (9.0 * k));
    return 0.5 * std::erfc(z / std::sqrt(2.0));
}

/// Expected log growth of one betting step with null mean 1/2 and bound uB when the
/// population has values 0 (rate p2), uB/4 (rate p1) and uB/2 otherwise.
inline double log_growth(double eta, double uB, double p2, double p1) {
    const double mu = 0.5;
    auto lg = [&](double x) { return std::log((x * eta / mu + (uB - x) * (uB - eta) / (uB - mu)) / uB); };
    return p2 * lg(0.0) + p1 * lg(uB / 4) + (1 - p1 - p2) * lg(uB / 2);
}

}  // namespace testing
