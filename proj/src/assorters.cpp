#include "rla/assorters.hpp"

#include <algorithm>

#include "rla/error.hpp"
#include "rla/socialchoice.hpp"

namespace rla {

using nlohmann::json;

namespace {

const Rational kHalf = make_rational(1, 2);
const Rational kOne = make_rational(1);
const Rational kZero = make_rational(0);

}  // namespace

Assorter::Assorter(std::string label, Rational upper, Fn fn)
    : label_(std::move(label)), upper_(std::move(upper)), fn_(std::move(fn)) {
    if (upper_ <= 0) throw Error("assorter '" + label_ + "': upper bound must be positive");
}

Rational Assorter::value(const Vote& vote) const {
    Rational x = fn_(vote);
    if (x < 0 || x > upper_) throw Error("assorter '" + label_ + "' left [0, u] on a vote");
    return x;
}

Assorter plurality_assorter(CandidateIndex winner, CandidateIndex loser, const Contest& contest) {
    if (winner == loser) throw Error("plurality assorter needs distinct winner and loser");
    std::string label = contest.name(winner) + " > " + contest.name(loser);
    return Assorter(std::move(label), kOne, [winner, loser](const Vote& v) -> Rational {
        auto first = v.first();
        if (first == winner) return kOne;
        if (first == loser) return kZero;
        return kHalf;
    });
}

Assorter neb_assorter(CandidateIndex winner, CandidateIndex loser, const Contest& contest) {
    if (winner == loser) throw Error("NEB assertion needs distinct winner and loser");
    std::string label = "NEB(" + contest.name(winner) + ", " + contest.name(loser) + ")";
    return Assorter(std::move(label), kOne, [winner, loser](const Vote& v) -> Rational {
        if (v.first() == winner) return kOne;
        auto lr = v.rank_of(loser);
        if (lr) {
            auto wr = v.rank_of(winner);
            if (!wr || *wr > *lr) return kZero;
        }
        return kHalf;
    });
}

Assorter nen_assorter(CandidateIndex winner, CandidateIndex loser, std::vector<CandidateIndex> continuing,
                      const Contest& contest) {
    if (winner == loser) throw Error("NEN assertion needs distinct winner and loser");
    std::sort(continuing.begin(), continuing.end());
    continuing.erase(std::unique(continuing.begin(), continuing.end()), continuing.end());
    if (!std::binary_search(continuing.begin(), continuing.end(), winner) ||
        !std::binary_search(continuing.begin(), continuing.end(), loser)) {
        throw ParseError("NEN assertion: winner and loser must both be continuing");
    }
    std::string label = "NEN(" + contest.name(winner) + ", " + contest.name(loser) + " | {";
    for (std::size_t i = 0; i < continuing.size(); ++i) label += (i ? ", " : "") + contest.name(continuing[i]);
    label += "})";
    return Assorter(std::move(label), kOne, [winner, loser, continuing](const Vote& v) -> Rational {
        for (CandidateIndex c : v.preferences()) {
            if (!std::binary_search(continuing.begin(), continuing.end(), c)) continue;
            if (c == winner) return kOne;
            if (c == loser) return kZero;
            return kHalf;
        }
        return kHalf;
    });
}

Rational assorter_margin(std::span<const Rational> reference_values) {
    if (reference_values.empty()) throw Error("assorter margin of an empty population");
    Rational sum = 0;
    for (const auto& x : reference_values) sum += x;
    return 2 * sum / static_cast<long long>(reference_values.size()) - 1;
}

Rational assorter_margin(const Assorter& a, std::span<const Vote> cvrs) {
    std::vector<Rational> x;
    x.reserve(cvrs.size());
    for (const auto& c : cvrs) x.push_back(a.value(c));
    return assorter_margin(x);
}

std::string_view to_string(Discrepancy d) {
    switch (d) {
        case Discrepancy::two_over: return "2-over";
        case Discrepancy::one_over: return "1-over";
        case Discrepancy::match: return "match";
        case Discrepancy::one_under: return "1-under";
        case Discrepancy::two_under: return "2-under";
    }
    return "?";
}

ComparisonScore overstatement_value(const Vote& ballot, const Vote& cvr, const Assorter& a, const Rational& nu) {
    const Rational& u = a.upper();
    if (nu <= 0) throw Error("assertion '" + a.label() + "' is not reportedly true (margin <= 0)");
    if (nu >= 2 * u) throw Error("assertion '" + a.label() + "': margin must be below 2u");
    Rational diff = a.value(ballot) - a.value(cvr);
    ComparisonScore score;
    score.value = (u + diff) / (2 * u - nu);
    Rational step = diff / u;
    if (step == -1) score.category = Discrepancy::two_over;
    else if (step == -kHalf) score.category = Discrepancy::one_over;
    else if (step == 0) score.category = Discrepancy::match;
    else if (step == kHalf) score.category = Discrepancy::one_under;
    else if (step == 1) score.category = Discrepancy::two_under;
    return score;
}

Rational overstatement_upper(const Rational& u, const Rational& nu) { return 2 * u / (2 * u - nu); }

Rational mismatch_upper(const Rational& v_prime) {
    if (v_prime < 0 || v_prime >= 1) throw Error("mismatch assorter needs 0 <= v' < 1");
    return kOne / (2 - 2 * v_prime);
}

Rational mismatch_value(const Vote& ballot, const Vote& cvr, const Rational& v_prime) {
    Rational u = mismatch_upper(v_prime);
    return ballot == cvr ? u : kZero;
}

bool mean_gt_half(std::span<const Rational> values) {
    Rational sum = 0;
    for (const auto& x : values) sum += x;
    // mean > 1/2  <=>  2 * sum > n
    return 2 * sum > static_cast<long long>(values.size());
}

std::size_t AssertionSet::min_margin_index() const {
    if (assertions.empty()) throw Error("empty assertion set");
    std::size_t best = 0;
    for (std::size_t i = 1; i < assertions.size(); ++i) {
        if (assertions[i].margin < assertions[best].margin) best = i;
    }
    return best;
}

namespace {

CandidateIndex candidate(const json& entry, const char* key, const Contest& contest) {
    auto it = entry.find(key);
    if (it == entry.end() || !it->is_string()) throw ParseError(std::string("assertion needs a string \"") + key + "\"");
    auto idx = contest.index_of(it->get<std::string>());
    if (!idx) throw ParseError("assertion names unknown candidate '" + it->get<std::string>() + "'");
    return *idx;
}

std::vector<CandidateIndex> candidate_list(const json& entry, const char* key, const Contest& contest) {
    auto it = entry.find(key);
    if (it == entry.end() || !it->is_array()) throw ParseError(std::string("assertion needs an array \"") + key + "\"");
    std::vector<CandidateIndex> out;
    for (const auto& name : *it) {
        if (!name.is_string()) throw ParseError(std::string("\"") + key + "\" must list candidate names");
        auto idx = contest.index_of(name.get<std::string>());
        if (!idx) throw ParseError("assertion names unknown candidate '" + name.get<std::string>() + "'");
        out.push_back(*idx);
    }
    return out;
}

Assertion make_assertion(const json& entry, const Contest& contest, std::span<const Vote> cvrs) {
    if (!entry.is_object()) throw ParseError("assertion must be a JSON object");
    std::string type;
    if (auto t = entry.find("type"); t != entry.end() && t->is_string()) {
        type = t->get<std::string>();
    } else if (auto t2 = entry.find("assertion_type"); t2 != entry.end() && t2->is_string()) {
        const std::string raire = t2->get<std::string>();
        if (raire == "WINNER_ONLY") type = "NEB";
        else if (raire == "IRV_ELIMINATION") type = "NEN";
        else throw ParseError("unknown assertion_type '" + raire + "'");
    } else {
        throw ParseError("assertion needs \"type\" or \"assertion_type\"");
    }
    CandidateIndex w = candidate(entry, "winner", contest);
    CandidateIndex l = candidate(entry, "loser", contest);
    if (w == l) throw ParseError("assertion winner and loser coincide");
    if (type == "NEB") {
        Assorter a = neb_assorter(w, l, contest);
        Rational nu = assorter_margin(a, cvrs);
        return {std::move(a), "NEB", nu, w, l};
    }
    if (type == "NEN") {
        std::vector<CandidateIndex> continuing;
        if (entry.contains("continuing")) {
            continuing = candidate_list(entry, "continuing", contest);
        } else if (entry.contains("already_eliminated")) {
            auto gone = candidate_list(entry, "already_eliminated", contest);
            for (int c = 0; c < contest.candidate_count(); ++c) {
                if (std::find(gone.begin(), gone.end(), c) == gone.end()) continuing.push_back(c);
            }
        } else {
            throw ParseError("NEN assertion needs \"continuing\" or \"already_eliminated\"");
        }
        Assorter a = nen_assorter(w, l, continuing, contest);
        Rational nu = assorter_margin(a, cvrs);
        return {std::move(a), "NEN", nu, w, l};
    }
    throw ParseError("unknown assertion type '" + type + "'");
}

}  // namespace

AssertionSet irv_assertion_assorters(const json& assertions, const Contest& contest, std::span<const Vote> cvrs) {
    if (contest.kind != ContestKind::irv) throw Error("IRV assertions need an IRV contest");
    const json* list = &assertions;
    if (assertions.is_object()) {
        auto it = assertions.find("assertions");
        if (it == assertions.end()) throw ParseError("assertion file needs an \"assertions\" array");
        list = &*it;
    }
    if (!list->is_array()) throw ParseError("assertions must be a JSON array");
    AssertionSet set;
    for (std::size_t i = 0; i < list->size(); ++i) {
        try {
            set.assertions.push_back(make_assertion((*list)[i], contest, cvrs));
        } catch (const ParseError& e) {
            throw ParseError("assertion " + std::to_string(i) + ": " + e.what());
        }
    }
    for (const auto& a : set.assertions) {
        if (a.margin <= 0) {
            throw InfeasibleError("assertion " + a.assorter.label() + " has margin " + to_string(a.margin) +
                                  " <= 0 on the CVRs and cannot be confirmed");
        }
    }
    return set;
}

AssertionSet plurality_assertions(const Contest& contest, std::span<const Vote> cvrs) {
    if (contest.kind != ContestKind::plurality) throw Error("plurality assertions need a plurality contest");
    auto tally = tabulate_plurality(cvrs, contest);
    if (tally.outcome.tie) throw InfeasibleError("reported plurality outcome is a tie");
    CandidateIndex winner = tally.outcome.winners.front();
    AssertionSet set;
    for (int c = 0; c < contest.candidate_count(); ++c) {
        if (c == winner) continue;
        Assorter a = plurality_assorter(winner, c, contest);
        Rational nu = assorter_margin(a, cvrs);
        set.assertions.push_back({std::move(a), "plurality", nu, winner, c});
    }
    return set;
}

json to_json(const AssertionSet& set) {
    json out = json::array();
    for (const auto& a : set.assertions) {
        out.push_back({{"label", a.assorter.label()},
                       {"semantics", a.semantics},
                       {"margin", to_string(a.margin)},
                       {"margin_float", to_double(a.margin)}});
    }
    return out;
}

}  // namespace rla
