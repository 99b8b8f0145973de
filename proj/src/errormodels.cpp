#include "rla/errormodels.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "rla/error.hpp"
#include "rla/riskengine.hpp"
#include "rla/socialchoice.hpp"

namespace rla {

using nlohmann::json;

std::string_view to_string(ErrorModel model) {
    switch (model) {
        case ErrorModel::two_under: return "two_under";
        case ErrorModel::two_over: return "two_over";
        case ErrorModel::random_100_0: return "random_100_0";
        case ErrorModel::random_20_80: return "random_20_80";
        case ErrorModel::irv_under: return "under";
        case ErrorModel::irv_over: return "over";
        case ErrorModel::irv_truncate: return "truncate";
        case ErrorModel::irv_random: return "random";
        case ErrorModel::stv_flip: return "flip";
    }
    return "?";
}

ErrorModel error_model_from_string(std::string_view text, ContestKind kind) {
    switch (kind) {
        case ContestKind::plurality:
            if (text == "two_under") return ErrorModel::two_under;
            if (text == "two_over") return ErrorModel::two_over;
            if (text == "random_100_0") return ErrorModel::random_100_0;
            if (text == "random_20_80") return ErrorModel::random_20_80;
            break;
        case ContestKind::irv:
            if (text == "under") return ErrorModel::irv_under;
            if (text == "over") return ErrorModel::irv_over;
            if (text == "truncate") return ErrorModel::irv_truncate;
            if (text == "random") return ErrorModel::irv_random;
            break;
        case ContestKind::stv:
            if (text == "flip") return ErrorModel::stv_flip;
            break;
    }
    throw ParseError("error model '" + std::string(text) + "' is not defined for " + std::string(to_string(kind)) +
                     " contests");
}

std::int64_t scaled_count(const Rational& rate, std::int64_t N) {
    return round_half_even(rate * N).convert_to<std::int64_t>();
}

Rational rational_from_json(const json& j) {
    if (j.is_string()) return parse_rational(j.get<std::string>());
    if (j.is_number_integer()) return Rational(j.get<std::int64_t>());
    if (j.is_number()) return parse_rational(j.dump());  // shortest round-trip decimal
    throw ParseError("expected a number, got " + j.dump());
}

namespace {

std::string format_rate(const Rational& r) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", to_double(r));
    return buf;
}

std::string card_id(std::int64_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "card-%07lld", static_cast<long long>(i + 1));
    return buf;
}

/// `count` distinct entries of `pool`, uniformly at random, returned in pool order.
std::vector<std::size_t> choose(std::mt19937_64& rng, std::vector<std::size_t> pool, std::size_t count) {
    for (std::size_t i = 0; i < count; ++i) {
        std::size_t j = i + static_cast<std::size_t>(uniform_below(rng, pool.size() - i));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(count);
    std::sort(pool.begin(), pool.end());
    return pool;
}

std::vector<std::string> ids_for(std::size_t n) {
    std::vector<std::string> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = card_id(static_cast<std::int64_t>(i));
    return ids;
}

}  // namespace

std::string ScenarioSpec::id() const {
    std::string s = std::string(to_string(kind)) + "-" + std::string(to_string(model));
    switch (kind) {
        case ContestKind::plurality:
            s += "-N" + std::to_string(N) + "-v" + format_rate(v_target);
            break;
        case ContestKind::irv:
            s += "-" + cvrs_path.stem().string();
            break;
        case ContestKind::stv:
            s += "-N" + std::to_string(N) + "-V" + std::to_string(V_minus);
            break;
    }
    return s + "-m" + format_rate(m_target);
}

ScenarioSpec scenario_from_json(const json& j, const std::filesystem::path& base_dir) {
    ScenarioSpec s;
    auto path = [&](const char* key) {
        std::filesystem::path p = j.at(key).get<std::string>();
        return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
    };
    try {
        s.kind = contest_kind_from_string(j.value("kind", std::string("plurality")));
        const char* default_model = s.kind == ContestKind::plurality ? "two_over" : s.kind == ContestKind::irv ? "over" : "flip";
        s.model = error_model_from_string(j.value("model", std::string(default_model)), s.kind);
        s.m_target = j.contains("m") ? rational_from_json(j.at("m")) : Rational(0);
        s.seed = j.value("seed", std::uint64_t{0});
        switch (s.kind) {
            case ContestKind::plurality:
                s.N = j.at("N").get<std::int64_t>();
                s.v_target = rational_from_json(j.at("v"));
                break;
            case ContestKind::irv:
                s.contest_path = path("contest");
                s.cvrs_path = path("cvrs");
                s.assertions_path = path("assertions");
                if (j.contains("margin")) s.irv_margin = j.at("margin").get<std::int64_t>();
                s.irv_max_radius = j.value("max_radius", 2);
                break;
            case ContestKind::stv:
                s.N = j.at("N").get<std::int64_t>();
                s.V_minus = j.at("V_minus").get<std::int64_t>();
                s.stv_candidates = j.value("candidates", 4);
                s.stv_seats = j.value("seats", 2);
                if (s.N > 0) s.v_target = Rational(BigInt(s.V_minus), BigInt(s.N));
                break;
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("scenario: ") + e.what());
    }
    if (s.m_target < 0 || s.m_target >= 1) throw ParseError("scenario: mismatch rate must lie in [0, 1)");
    if (s.kind == ContestKind::plurality && (s.v_target <= 0 || s.v_target >= 1)) {
        throw ParseError("scenario: margin proportion must lie in (0, 1)");
    }
    return s;
}

json to_json(const ScenarioSpec& spec) {
    json j{{"kind", std::string(to_string(spec.kind))},
           {"model", std::string(to_string(spec.model))},
           {"m", to_double(spec.m_target)},
           {"seed", spec.seed}};
    switch (spec.kind) {
        case ContestKind::plurality:
            j["N"] = spec.N;
            j["v"] = to_double(spec.v_target);
            break;
        case ContestKind::irv:
            j["contest"] = spec.contest_path.string();
            j["cvrs"] = spec.cvrs_path.string();
            j["assertions"] = spec.assertions_path.string();
            if (spec.irv_margin) j["margin"] = *spec.irv_margin;
            j["max_radius"] = spec.irv_max_radius;
            break;
        case ContestKind::stv:
            j["N"] = spec.N;
            j["V_minus"] = spec.V_minus;
            j["candidates"] = spec.stv_candidates;
            j["seats"] = spec.stv_seats;
            break;
    }
    return j;
}

GeneratedInstance gen_plurality(const ScenarioSpec& spec) {
    if (spec.kind != ContestKind::plurality) throw Error("gen_plurality needs a plurality scenario");
    const std::int64_t N = spec.N;
    if (N <= 0) throw InfeasibleError("N must be positive");
    const std::int64_t V = scaled_count(spec.v_target, N);
    const std::int64_t M = scaled_count(spec.m_target, N);
    if (V < 1) throw InfeasibleError("round(v N) = 0: the contest would be tied");

    // Winner-minus-loser vote margin is 2V; nulls fill the rest (as few as parity allows,
    // or 80% of the cards for random_20_80).
    std::int64_t nulls = spec.model == ErrorModel::random_20_80 ? scaled_count(make_rational(4, 5), N) : 0;
    if ((N - nulls - 2 * V) % 2 != 0) nulls += 1;
    const std::int64_t losers = (N - nulls - 2 * V) / 2;
    const std::int64_t winners = losers + 2 * V;
    if (losers < 0 || nulls > N) {
        throw InfeasibleError("margin 2V = " + std::to_string(2 * V) + " votes does not fit in N = " + std::to_string(N) +
                              " cards with " + std::to_string(nulls) + " null votes");
    }

    Contest contest{"plurality", ContestKind::plurality, {"Ali", "Bob"}, 1};
    const Vote ali = Vote::plurality(0);
    const Vote bob = Vote::plurality(1);
    std::vector<Vote> cvrs;
    cvrs.reserve(static_cast<std::size_t>(N));
    cvrs.insert(cvrs.end(), static_cast<std::size_t>(winners), ali);
    cvrs.insert(cvrs.end(), static_cast<std::size_t>(losers), bob);
    cvrs.insert(cvrs.end(), static_cast<std::size_t>(nulls), Vote::null());
    std::vector<Vote> ballots = cvrs;

    std::mt19937_64 rng(spec.seed);
    std::vector<std::size_t> pool;
    switch (spec.model) {
        case ErrorModel::two_under:
            if (M > losers) {
                throw InfeasibleError("two_under needs M = " + std::to_string(M) + " <= loser CVRs = " + std::to_string(losers));
            }
            pool.resize(static_cast<std::size_t>(losers));
            std::iota(pool.begin(), pool.end(), static_cast<std::size_t>(winners));
            for (std::size_t i : choose(rng, pool, static_cast<std::size_t>(M))) ballots[i] = ali;
            break;
        case ErrorModel::two_over:
            if (M > winners) {
                throw InfeasibleError("two_over needs M = " + std::to_string(M) + " <= winner CVRs = " + std::to_string(winners));
            }
            pool.resize(static_cast<std::size_t>(winners));
            std::iota(pool.begin(), pool.end(), std::size_t{0});
            for (std::size_t i : choose(rng, pool, static_cast<std::size_t>(M))) ballots[i] = bob;
            break;
        case ErrorModel::random_100_0:
        case ErrorModel::random_20_80: {
            pool.resize(static_cast<std::size_t>(N));
            std::iota(pool.begin(), pool.end(), std::size_t{0});
            const std::vector<Vote> alphabet{ali, bob, Vote::null()};
            for (std::size_t i : choose(rng, pool, static_cast<std::size_t>(M))) {
                std::vector<Vote> others;
                for (const auto& v : alphabet) {
                    if (v != cvrs[i]) others.push_back(v);
                }
                ballots[i] = others[uniform_below(rng, others.size())];
            }
            break;
        }
        default:
            throw Error("error model " + std::string(to_string(spec.model)) + " does not apply to plurality contests");
    }

    GeneratedInstance out;
    out.instance.contest = contest;
    out.instance.card_ids = ids_for(static_cast<std::size_t>(N));
    out.instance.cvrs = std::move(cvrs);
    out.instance.ballots = std::move(ballots);
    auto reported = tabulate_plurality(out.instance.cvrs, contest);
    out.margin = plurality_cvr_margin(reported.tallies, N, contest);
    out.margin.source = "generated";
    out.assertions = plurality_assertions(contest, out.instance.cvrs);
    out.reported_outcome_correct = outcome_equal(reported.outcome, tabulate_plurality(out.instance.ballots, contest).outcome);
    return out;
}

namespace {

/// `promoted` moved to the front of the ranking.
Vote promote(CandidateIndex promoted, const Vote& vote) {
    std::vector<CandidateIndex> prefs{promoted};
    for (CandidateIndex c : vote.preferences()) {
        if (c != promoted) prefs.push_back(c);
    }
    return Vote::ranking(std::move(prefs));
}

Vote random_ranking(std::mt19937_64& rng, int candidates, std::size_t length) {
    std::vector<CandidateIndex> all(static_cast<std::size_t>(candidates));
    std::iota(all.begin(), all.end(), 0);
    for (std::size_t i = 0; i < length; ++i) {
        std::size_t j = i + static_cast<std::size_t>(uniform_below(rng, all.size() - i));
        std::swap(all[i], all[j]);
    }
    all.resize(length);
    return Vote::ranking(std::move(all));
}

}  // namespace

LinkedInstance gen_irv(const Contest& contest, const CvrSet& base_cvrs, const AssertionSet& assertions,
                       const Rational& m_target, ErrorModel model, std::uint64_t seed) {
    if (contest.kind != ContestKind::irv) throw Error("gen_irv needs an IRV contest");
    LinkedInstance inst;
    inst.contest = contest;
    for (const auto& r : base_cvrs) {
        inst.card_ids.push_back(r.card_id);
        inst.cvrs.push_back(r.vote);
    }
    inst.ballots = inst.cvrs;
    const std::size_t N = inst.size();
    const auto M = static_cast<std::size_t>(scaled_count(m_target, static_cast<std::int64_t>(N)));
    if (M == 0) return inst;
    std::mt19937_64 rng(seed);

    switch (model) {
        case ErrorModel::irv_under:
        case ErrorModel::irv_over: {
            const Assertion& target = assertions.assertions.at(assertions.min_margin_index());
            const bool over = model == ErrorModel::irv_over;
            const Rational full = over ? Rational(1) : Rational(0);
            const Rational half = make_rational(1, 2);
            std::vector<std::size_t> two_vote, one_vote;
            for (std::size_t i = 0; i < N; ++i) {
                Rational x = target.assorter.value(inst.cvrs[i]);
                if (x == full) two_vote.push_back(i);
                else if (x == half) one_vote.push_back(i);
            }
            if (M > two_vote.size() + one_vote.size()) {
                throw InfeasibleError("only " + std::to_string(two_vote.size() + one_vote.size()) + " CVRs can carry an " +
                                      (over ? "overstatement" : "understatement") + " of " + target.assorter.label() +
                                      ", M = " + std::to_string(M));
            }
            two_vote.insert(two_vote.end(), one_vote.begin(), one_vote.end());
            const CandidateIndex promoted = over ? target.loser : target.winner;
            for (std::size_t k = 0; k < M; ++k) {
                std::size_t i = two_vote[k];
                inst.ballots[i] = promote(promoted, inst.cvrs[i]);
            }
            break;
        }
        case ErrorModel::irv_truncate: {
            std::vector<std::size_t> pool(N);
            std::iota(pool.begin(), pool.end(), std::size_t{0});
            for (std::size_t i : choose(rng, pool, M)) {
                const Vote& c = inst.cvrs[i];
                if (c.is_null()) {
                    inst.ballots[i] = Vote::ranking({static_cast<CandidateIndex>(uniform_below(rng, static_cast<std::uint64_t>(contest.candidate_count())))});
                    continue;
                }
                const auto prefs = c.preferences();
                const std::size_t keep = static_cast<std::size_t>(uniform_below(rng, prefs.size()));
                inst.ballots[i] = Vote::ranking(std::vector<CandidateIndex>(prefs.begin(), prefs.begin() + static_cast<std::ptrdiff_t>(keep)));
            }
            break;
        }
        case ErrorModel::irv_random: {
            std::vector<std::size_t> pool(N);
            std::iota(pool.begin(), pool.end(), std::size_t{0});
            for (std::size_t i : choose(rng, pool, M)) {
                bool replaced = false;
                for (int attempt = 0; attempt < 10'000 && !replaced; ++attempt) {
                    std::size_t length = inst.cvrs[uniform_below(rng, N)].preferences().size();
                    Vote b = random_ranking(rng, contest.candidate_count(), length);
                    if (b != inst.cvrs[i]) {
                        inst.ballots[i] = std::move(b);
                        replaced = true;
                    }
                }
                if (!replaced) throw InfeasibleError("random model could not find a ballot differing from CVR " + inst.card_ids[i]);
            }
            break;
        }
        default:
            throw Error("error model " + std::string(to_string(model)) + " does not apply to IRV contests");
    }
    return inst;
}

GeneratedInstance gen_stv(std::int64_t N, std::int64_t V_minus, const Rational& m_target, std::uint64_t seed,
                          int candidates, int seats) {
    if (N <= 0) throw InfeasibleError("N must be positive");
    if (V_minus < 0 || V_minus > N) throw InfeasibleError("V- must lie in [0, N]");
    Contest contest{"stv", ContestKind::stv, {}, seats};
    for (int c = 0; c < candidates; ++c) contest.candidates.push_back("C" + std::to_string(c + 1));
    contest.validate();

    const auto M = static_cast<std::size_t>(scaled_count(m_target, N));
    std::mt19937_64 rng(seed);
    const std::size_t max_len = static_cast<std::size_t>(std::min(candidates, 5));
    GeneratedInstance out;
    out.instance.contest = contest;
    out.instance.card_ids = ids_for(static_cast<std::size_t>(N));
    out.instance.cvrs.reserve(static_cast<std::size_t>(N));
    for (std::int64_t i = 0; i < N; ++i) {
        out.instance.cvrs.push_back(random_ranking(rng, candidates, 1 + uniform_below(rng, max_len)));
    }
    out.instance.ballots = out.instance.cvrs;
    std::vector<std::size_t> pool(static_cast<std::size_t>(N));
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    for (std::size_t i : choose(rng, pool, M)) {
        Vote b;
        do {
            b = random_ranking(rng, candidates, 1 + uniform_below(rng, max_len));
        } while (b == out.instance.cvrs[i]);
        out.instance.ballots[i] = std::move(b);
    }
    out.margin.V = V_minus;
    out.margin.N = N;
    out.margin.kind = MarginKind::lower_bound;
    out.margin.source = "scenario lower bound";
    return out;
}

GeneratedInstance generate(const ScenarioSpec& spec) {
    switch (spec.kind) {
        case ContestKind::plurality: return gen_plurality(spec);
        case ContestKind::stv:
            return gen_stv(spec.N, spec.V_minus, spec.m_target, spec.seed, spec.stv_candidates, spec.stv_seats);
        case ContestKind::irv: break;
    }
    Contest contest = load_contest(spec.contest_path);
    CvrSet cvrs = parse_cvrs(spec.cvrs_path, contest);
    std::ifstream in(spec.assertions_path);
    if (!in) throw Error("cannot open " + spec.assertions_path.string());
    json assertions_json;
    try {
        in >> assertions_json;
    } catch (const json::exception& e) {
        throw ParseError(spec.assertions_path.string() + ": " + e.what());
    }
    auto votes = cvrs.votes();
    GeneratedInstance out;
    out.assertions = irv_assertion_assorters(assertions_json, contest, votes);
    if (spec.irv_margin) {
        out.margin.V = *spec.irv_margin;
        out.margin.N = static_cast<Count>(cvrs.size());
        out.margin.kind = MarginKind::lower_bound;
        out.margin.source = "scenario";
    } else {
        BruteForceOptions options;
        options.max_radius = spec.irv_max_radius;
        out.margin = hamming_margin_bruteforce(cvrs, contest, options);
    }
    out.instance = gen_irv(contest, cvrs, *out.assertions, spec.m_target, spec.model, spec.seed);
    out.reported_outcome_correct =
        outcome_equal(tabulate_irv(out.instance.cvrs, contest).outcome, tabulate_irv(out.instance.ballots, contest).outcome);
    return out;
}

void export_instance(const GeneratedInstance& generated, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const LinkedInstance& inst = generated.instance;
    {
        std::ofstream out(dir / "contest.json");
        out << to_json(inst.contest).dump(2) << '\n';
    }
    auto write = [&](const char* name, const std::vector<Vote>& votes) {
        std::vector<CardRecord> records;
        records.reserve(votes.size());
        for (std::size_t i = 0; i < votes.size(); ++i) records.push_back({inst.card_ids[i], votes[i]});
        std::ofstream out(dir / name);
        write_card_records(out, records, inst.contest);
    };
    write("cvrs.ndjson", inst.cvrs);
    write("ballots.ndjson", inst.ballots);
    std::ofstream out(dir / "margin.json");
    out << json{{"V_minus", generated.margin.V}, {"source", generated.margin.source}}.dump(2) << '\n';
}

}  // namespace rla
