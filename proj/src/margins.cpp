#include "rla/margins.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>
#include <thread>
#include <unordered_map>

#include "rla/error.hpp"

namespace rla {

using nlohmann::json;

std::string_view to_string(MarginKind kind) {
    switch (kind) {
        case MarginKind::exact: return "exact";
        case MarginKind::lower_bound: return "lower_bound";
        case MarginKind::diagnostic_upper: return "diagnostic_upper";
    }
    return "?";
}

namespace {

struct TopTwo {
    CandidateIndex winner = 0;
    CandidateIndex runner_up = 0;
};

TopTwo top_two(std::span<const Count> tallies) {
    if (tallies.size() < 2) throw Error("plurality margin needs at least two candidates");
    TopTwo t;
    t.winner = static_cast<CandidateIndex>(std::max_element(tallies.begin(), tallies.end()) - tallies.begin());
    t.runner_up = t.winner == 0 ? 1 : 0;
    for (std::size_t c = 0; c < tallies.size(); ++c) {
        if (static_cast<CandidateIndex>(c) != t.winner && tallies[c] > tallies[static_cast<std::size_t>(t.runner_up)]) {
            t.runner_up = static_cast<CandidateIndex>(c);
        }
    }
    return t;
}

}  // namespace

MarginReport plurality_cvr_margin(std::span<const Count> tallies, Count N, const Contest& contest) {
    if (contest.kind != ContestKind::plurality) throw Error("plurality_cvr_margin needs a plurality contest");
    auto [w, r] = top_two(tallies);
    Count gap = tallies[static_cast<std::size_t>(w)] - tallies[static_cast<std::size_t>(r)];
    MarginReport rep;
    rep.V = (gap + 1) / 2;
    rep.N = N;
    rep.kind = MarginKind::exact;
    rep.source = "plurality vote margin";
    return rep;
}

MarginReport plurality_cvr_margin(const CvrSet& cvrs, const Contest& contest) {
    auto votes = cvrs.votes();
    auto tally = tabulate_plurality(votes, contest);
    MarginReport rep = plurality_cvr_margin(tally.tallies, static_cast<Count>(cvrs.size()), contest);
    auto [w, r] = top_two(tally.tallies);
    std::vector<CvrChange> witness;
    for (std::size_t i = 0; i < votes.size() && static_cast<Count>(witness.size()) < rep.V; ++i) {
        if (votes[i].first() == w) witness.push_back({i, Vote::plurality(r)});
    }
    rep.witness = std::move(witness);
    return rep;
}

std::vector<Vote> default_vocabulary(const Contest& contest) {
    std::vector<Vote> vocab{Vote::null()};
    const int n = contest.candidate_count();
    if (contest.kind == ContestKind::plurality) {
        for (int c = 0; c < n; ++c) vocab.push_back(Vote::plurality(c));
        return vocab;
    }
    if (contest.kind == ContestKind::stv) throw Error("no default vocabulary for STV contests");
    if (n > 6) throw Error("IRV contests with more than 6 candidates need an explicit vocabulary or an external margin");
    for (unsigned mask = 1; mask < (1u << n); ++mask) {
        std::vector<CandidateIndex> subset;
        for (int c = 0; c < n; ++c) {
            if (mask & (1u << c)) subset.push_back(c);
        }
        do {
            vocab.push_back(Vote::ranking(subset));
        } while (std::next_permutation(subset.begin(), subset.end()));
    }
    return vocab;
}

std::vector<Vote> apply_changes(std::span<const Vote> votes, std::span<const CvrChange> changes) {
    std::vector<Vote> out(votes.begin(), votes.end());
    for (const auto& ch : changes) out.at(ch.card) = ch.replacement;
    return out;
}

namespace {

/// Calls fn(picks) for every nondecreasing sequence of `length` indices below `size`;
/// stops early when fn returns true. Returns whether it stopped early.
template <class Fn>
bool for_each_multiset(std::size_t size, int length, std::vector<std::size_t>& picks, Fn&& fn) {
    picks.assign(static_cast<std::size_t>(length), 0);
    if (length == 0) return fn(picks);
    if (size == 0) return false;
    while (true) {
        if (fn(picks)) return true;
        int pos = length - 1;
        while (pos >= 0 && picks[static_cast<std::size_t>(pos)] + 1 == size) --pos;
        if (pos < 0) return false;
        std::size_t next = picks[static_cast<std::size_t>(pos)] + 1;
        for (int p = pos; p < length; ++p) picks[static_cast<std::size_t>(p)] = next;
    }
}

/// All bounded compositions r with 0 <= r[t] <= limits[t], sum r = total.
void removal_sets(std::span<const Count> limits, int total, std::size_t t, std::vector<int>& cur,
                  std::vector<std::vector<int>>& out) {
    if (t == limits.size()) {
        if (total == 0) out.push_back(cur);
        return;
    }
    int max_here = static_cast<int>(std::min<Count>(limits[t], total));
    for (int r = max_here; r >= 0; --r) {
        cur[t] = r;
        removal_sets(limits, total - r, t + 1, cur, out);
    }
    cur[t] = 0;
}

struct Found {
    std::size_t removal = std::numeric_limits<std::size_t>::max();
    std::vector<std::size_t> additions;
};

}  // namespace

MarginReport hamming_margin_bruteforce(const CvrSet& cvrs, const Contest& contest, const BruteForceOptions& options) {
    if (options.max_radius < 0) throw Error("max_radius must be nonnegative");
    const std::vector<Vote> votes = cvrs.votes();
    const std::vector<Vote> vocab = options.vocabulary.empty() ? default_vocabulary(contest) : options.vocabulary;
    const Outcome reported = tabulate(votes, contest);

    MarginReport rep;
    rep.N = static_cast<Count>(votes.size());
    rep.source = "hamming brute force";
    if (reported.tie) {
        rep.V = 0;
        rep.kind = MarginKind::exact;
        rep.witness = std::vector<CvrChange>{};
        return rep;
    }

    // Groups 0..k-1 are the CVR vote types, followed by vocabulary votes not among them.
    std::vector<detail::VoteGroup> base = detail::group_votes(votes);
    const std::size_t k = base.size();
    std::vector<Count> limits;
    for (const auto& g : base) limits.push_back(g.weight);
    std::vector<std::size_t> vocab_group(vocab.size());
    for (std::size_t a = 0; a < vocab.size(); ++a) {
        auto it = std::find_if(base.begin(), base.end(), [&](const detail::VoteGroup& g) { return g.vote == vocab[a]; });
        if (it != base.end()) {
            vocab_group[a] = static_cast<std::size_t>(it - base.begin());
        } else {
            vocab_group[a] = base.size();
            base.push_back({vocab[a], 0});
        }
    }

    auto outcome_of = [&](std::span<const detail::VoteGroup> groups) {
        return contest.kind == ContestKind::plurality ? detail::plurality_outcome(groups, contest)
                                                      : detail::irv_outcome(groups, contest);
    };

    std::atomic<std::uint64_t> work{0};
    std::atomic<bool> over_budget{false};
    const unsigned workers = std::max(1u, options.workers);

    for (int radius = 1; radius <= options.max_radius; ++radius) {
        std::vector<std::vector<int>> removals;
        std::vector<int> cur(k, 0);
        removal_sets(limits, radius, 0, cur, removals);
        if (removals.empty()) break;  // fewer cards than the radius

        std::atomic<std::size_t> best_removal{std::numeric_limits<std::size_t>::max()};
        std::vector<Found> found(workers);

        auto search = [&](unsigned w) {
            std::vector<detail::VoteGroup> groups = base;
            std::vector<std::size_t> picks;
            for (std::size_t ri = w; ri < removals.size(); ri += workers) {
                if (ri > best_removal.load() || over_budget.load()) return;
                const auto& rem = removals[ri];
                for (std::size_t t = 0; t < k; ++t) groups[t].weight -= rem[t];
                bool hit = for_each_multiset(vocab.size(), radius, picks, [&](const std::vector<std::size_t>& adds) {
                    for (std::size_t a : adds) {
                        std::size_t g = vocab_group[a];
                        if (g < k && rem[g] > 0) return false;  // no-op replacement, covered by a smaller radius
                    }
                    if (work.fetch_add(1) >= options.work_budget) {
                        over_budget = true;
                        return true;
                    }
                    for (std::size_t a : adds) groups[vocab_group[a]].weight += 1;
                    Outcome o = outcome_of(groups);
                    for (std::size_t a : adds) groups[vocab_group[a]].weight -= 1;
                    return !outcome_equal(o, reported);
                });
                for (std::size_t t = 0; t < k; ++t) groups[t].weight += rem[t];
                if (over_budget.load()) return;
                if (hit) {
                    found[w] = {ri, picks};
                    std::size_t prev = best_removal.load();
                    while (ri < prev && !best_removal.compare_exchange_weak(prev, ri)) {
                    }
                    return;
                }
            }
        };

        if (workers == 1) {
            search(0);
        } else {
            std::vector<std::thread> pool;
            for (unsigned w = 0; w < workers; ++w) pool.emplace_back(search, w);
            for (auto& t : pool) t.join();
        }
        if (over_budget.load()) {
            throw InfeasibleError("margin search exceeded the work budget of " + std::to_string(options.work_budget) +
                                  " tabulations at radius " + std::to_string(radius));
        }

        const Found* best = nullptr;
        for (const auto& f : found) {
            if (f.removal != std::numeric_limits<std::size_t>::max() && (!best || f.removal < best->removal)) best = &f;
        }
        if (!best) continue;

        // Concrete witness: the first r_t cards of each removed vote type, in canonical order.
        const auto& rem = removals[best->removal];
        std::vector<std::size_t> cards;
        for (std::size_t t = 0; t < k; ++t) {
            int need = rem[t];
            for (std::size_t i = 0; i < votes.size() && need > 0; ++i) {
                if (votes[i] == base[t].vote) {
                    cards.push_back(i);
                    --need;
                }
            }
        }
        std::vector<CvrChange> witness;
        for (std::size_t i = 0; i < cards.size(); ++i) witness.push_back({cards[i], vocab[best->additions[i]]});
        std::sort(witness.begin(), witness.end(), [](const CvrChange& a, const CvrChange& b) { return a.card < b.card; });
        rep.V = radius;
        rep.kind = MarginKind::exact;
        rep.witness = std::move(witness);
        return rep;
    }

    rep.V = options.max_radius + 1;
    rep.kind = MarginKind::lower_bound;
    return rep;
}

MarginReport irv_last_round_margin(const IrvRounds& rounds) {
    if (rounds.majority_stop) {
        throw Error("the count stopped on a majority before two candidates remained; "
                    "re-tabulate to the final pair to get a last-round margin");
    }
    for (auto it = rounds.rounds.rbegin(); it != rounds.rounds.rend(); ++it) {
        std::vector<Count> live;
        for (const auto& t : it->tallies) {
            if (t) live.push_back(*t);
        }
        if (live.size() != 2) continue;
        MarginReport rep;
        Count gap = live[0] > live[1] ? live[0] - live[1] : live[1] - live[0];
        rep.V = (gap + 1) / 2;
        rep.N = rounds.cards;
        rep.kind = MarginKind::diagnostic_upper;
        rep.source = "IRV last-round margin";
        return rep;
    }
    throw Error("the count never reached a two-candidate round");
}

MarginReport external_margin_from_json(const json& j, Count N) {
    MarginReport rep;
    try {
        rep.V = j.at("V_minus").get<Count>();
        rep.source = j.value("source", std::string("external"));
    } catch (const json::exception& e) {
        throw ParseError(std::string("external margin: ") + e.what());
    }
    if (rep.V < 0 || rep.V > N) {
        throw ParseError("external margin V_minus=" + std::to_string(rep.V) + " outside [0, " + std::to_string(N) + "]");
    }
    rep.N = N;
    rep.kind = MarginKind::lower_bound;
    return rep;
}

MarginReport load_external_margin(const std::filesystem::path& path, Count N) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    return external_margin_from_json(j, N);
}

json to_json(const MarginReport& report, const Contest& contest) {
    json j{{"V", report.V},
           {"N", report.N},
           {"v", to_string(report.v())},
           {"v_float", to_double(report.v())},
           {"kind", std::string(to_string(report.kind))},
           {"source", report.source}};
    if (report.degenerate()) j["warning"] = "V = 0: a mismatch-based audit cannot certify";
    if (report.witness) {
        json w = json::array();
        for (const auto& ch : *report.witness) {
            w.push_back({{"card", ch.card}, {"replacement", to_json(ch.replacement, contest)}});
        }
        j["witness"] = w;
    }
    return j;
}

}  // namespace rla
