#include "rla/election.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include "rla/error.hpp"

namespace rla {

using nlohmann::json;

std::string_view to_string(ContestKind kind) {
    switch (kind) {
        case ContestKind::plurality: return "plurality";
        case ContestKind::irv: return "irv";
        case ContestKind::stv: return "stv";
    }
    return "?";
}

ContestKind contest_kind_from_string(std::string_view text) {
    if (text == "plurality") return ContestKind::plurality;
    if (text == "irv") return ContestKind::irv;
    if (text == "stv") return ContestKind::stv;
    throw ParseError("unknown contest kind '" + std::string(text) + "'");
}

std::optional<CandidateIndex> Contest::index_of(std::string_view name) const {
    auto it = std::find(candidates.begin(), candidates.end(), name);
    if (it == candidates.end()) return std::nullopt;
    return static_cast<CandidateIndex>(it - candidates.begin());
}

void Contest::validate() const {
    std::set<std::string> seen;
    for (const auto& c : candidates) {
        if (c.empty()) throw ParseError("contest '" + id + "': empty candidate id");
        if (!seen.insert(c).second) throw ParseError("contest '" + id + "': duplicate candidate '" + c + "'");
    }
    if (seats < 1) throw ParseError("contest '" + id + "': seats must be positive");
    if (seats >= candidate_count()) {
        throw ParseError("contest '" + id + "': seats must be fewer than the number of candidates");
    }
    if (kind != ContestKind::stv && seats != 1) {
        throw ParseError("contest '" + id + "': plurality and IRV contests have one seat");
    }
}

Contest contest_from_json(const json& j) {
    Contest c;
    try {
        c.id = j.at("id").get<std::string>();
        c.kind = contest_kind_from_string(j.at("kind").get<std::string>());
        c.candidates = j.at("candidates").get<std::vector<std::string>>();
        c.seats = j.value("seats", 1);
    } catch (const json::exception& e) {
        throw ParseError(std::string("contest definition: ") + e.what());
    }
    c.validate();
    return c;
}

json to_json(const Contest& contest) {
    return json{{"id", contest.id},
                {"kind", std::string(to_string(contest.kind))},
                {"candidates", contest.candidates},
                {"seats", contest.seats}};
}

Contest load_contest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open contest file " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    return contest_from_json(j);
}

Vote Vote::plurality(CandidateIndex c) {
    Vote v;
    v.kind_ = Kind::plurality;
    v.prefs_ = {c};
    return v;
}

Vote Vote::ranking(std::vector<CandidateIndex> preferences) {
    Vote v;
    if (preferences.empty()) return v;
    std::vector<CandidateIndex> sorted = preferences;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
        throw ParseError("ranking repeats a candidate");
    }
    v.kind_ = Kind::ranking;
    v.prefs_ = std::move(preferences);
    return v;
}

std::optional<CandidateIndex> Vote::first() const {
    if (prefs_.empty()) return std::nullopt;
    return prefs_.front();
}

std::optional<std::size_t> Vote::rank_of(CandidateIndex c) const {
    auto it = std::find(prefs_.begin(), prefs_.end(), c);
    if (it == prefs_.end()) return std::nullopt;
    return static_cast<std::size_t>(it - prefs_.begin());
}

std::size_t VoteHash::operator()(const Vote& v) const noexcept {
    std::size_t h = static_cast<std::size_t>(v.kind()) * 0x9e3779b97f4a7c15ULL;
    for (CandidateIndex c : v.preferences()) {
        h ^= static_cast<std::size_t>(c) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    }
    return h;
}

namespace {

CandidateIndex candidate_or_throw(const json& name, const Contest& contest) {
    if (!name.is_string()) throw ParseError("candidate must be a string");
    auto idx = contest.index_of(name.get<std::string>());
    if (!idx) throw ParseError("candidate '" + name.get<std::string>() + "' not in contest '" + contest.id + "'");
    return *idx;
}

}  // namespace

Vote vote_from_json(const json& j, const Contest& contest) {
    if (j.is_null()) return Vote::null();
    if (!j.is_object() || j.size() != 1) throw ParseError("vote must be null, {\"plurality\": ...} or {\"ranking\": [...]}");
    if (auto it = j.find("plurality"); it != j.end()) {
        if (contest.kind != ContestKind::plurality) {
            throw ParseError("plurality vote in " + std::string(to_string(contest.kind)) + " contest");
        }
        return Vote::plurality(candidate_or_throw(*it, contest));
    }
    if (auto it = j.find("ranking"); it != j.end()) {
        if (contest.kind == ContestKind::plurality) throw ParseError("ranking vote in plurality contest");
        if (!it->is_array()) throw ParseError("ranking must be an array");
        if (it->size() > contest.candidates.size()) throw ParseError("ranking longer than the candidate list");
        std::vector<CandidateIndex> prefs;
        prefs.reserve(it->size());
        for (const auto& name : *it) prefs.push_back(candidate_or_throw(name, contest));
        return Vote::ranking(std::move(prefs));
    }
    throw ParseError("vote must be null, {\"plurality\": ...} or {\"ranking\": [...]}");
}

json to_json(const Vote& vote, const Contest& contest) {
    switch (vote.kind()) {
        case Vote::Kind::null: return nullptr;
        case Vote::Kind::plurality: return json{{"plurality", contest.name(vote.preferences()[0])}};
        case Vote::Kind::ranking: {
            json names = json::array();
            for (CandidateIndex c : vote.preferences()) names.push_back(contest.name(c));
            return json{{"ranking", names}};
        }
    }
    return nullptr;
}

std::string describe(const Vote& vote, const Contest& contest) {
    if (vote.is_null()) return "(null)";
    std::string s = "(";
    for (std::size_t i = 0; i < vote.preferences().size(); ++i) {
        if (i) s += ", ";
        s += contest.name(vote.preferences()[i]);
    }
    return s + ")";
}

namespace detail {

CardSet::CardSet(std::vector<CardRecord> records) : records_(std::move(records)) {
    index_.reserve(records_.size());
    for (std::size_t i = 0; i < records_.size(); ++i) {
        if (!index_.emplace(records_[i].card_id, i).second) {
            throw ParseError("duplicate card id '" + records_[i].card_id + "'");
        }
    }
}

std::optional<std::size_t> CardSet::find(std::string_view card_id) const {
    auto it = index_.find(std::string(card_id));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

std::vector<Vote> CardSet::votes() const {
    std::vector<Vote> out;
    out.reserve(records_.size());
    for (const auto& r : records_) out.push_back(r.vote);
    return out;
}

}  // namespace detail

std::size_t LinkedInstance::mismatch_count() const {
    std::size_t m = 0;
    for (std::size_t i = 0; i < cvrs.size(); ++i) m += cvrs[i] != ballots[i];
    return m;
}

LinkedInstance link(const Contest& contest, const CvrSet& cvrs, const BallotSet& ballots) {
    LinkedInstance inst;
    inst.contest = contest;
    inst.card_ids.reserve(cvrs.size());
    inst.cvrs.reserve(cvrs.size());
    inst.ballots.reserve(cvrs.size());
    for (const auto& rec : cvrs) {
        auto b = ballots.find(rec.card_id);
        if (!b) throw Error("card '" + rec.card_id + "' has a CVR but no ballot");
        inst.card_ids.push_back(rec.card_id);
        inst.cvrs.push_back(rec.vote);
        inst.ballots.push_back(ballots[*b].vote);
    }
    if (ballots.size() != cvrs.size()) {
        for (const auto& rec : ballots) {
            if (!cvrs.find(rec.card_id)) throw Error("card '" + rec.card_id + "' has a ballot but no CVR");
        }
    }
    return inst;
}

std::vector<CardRecord> parse_card_records(std::istream& in, const Contest& contest) {
    std::vector<CardRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            json j = json::parse(line);
            if (!j.is_object()) throw ParseError("record must be a JSON object");
            auto id = j.find("id");
            if (id == j.end() || !id->is_string()) throw ParseError("record needs a string \"id\"");
            auto vote = j.find("vote");
            if (vote == j.end()) throw ParseError("record needs a \"vote\"");
            out.push_back({id->get<std::string>(), vote_from_json(*vote, contest)});
        } catch (const json::exception& e) {
            throw ParseError(e.what(), lineno);
        } catch (const ParseError& e) {
            throw ParseError(e.what(), lineno);
        }
    }
    return out;
}

namespace {

std::vector<CardRecord> parse_records_file(const std::filesystem::path& path, const Contest& contest) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    try {
        return parse_card_records(in, contest);
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.what(), e.line());
    }
}

}  // namespace

CvrSet parse_cvrs(const std::filesystem::path& path, const Contest& contest) {
    return CvrSet(parse_records_file(path, contest));
}

BallotSet parse_ballots(const std::filesystem::path& path, const Contest& contest) {
    return BallotSet(parse_records_file(path, contest));
}

void write_card_records(std::ostream& out, std::span<const CardRecord> records, const Contest& contest) {
    for (const auto& r : records) {
        out << json{{"id", r.card_id}, {"vote", to_json(r.vote, contest)}}.dump() << '\n';
    }
}

std::vector<CardRecord> parse_plurality_csv(std::istream& in, const Contest& contest) {
    if (contest.kind != ContestKind::plurality) throw ParseError("CSV input is only supported for plurality contests");
    std::vector<CardRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto comma = line.find(',');
        if (comma == std::string::npos) throw ParseError("expected card_id,candidate", lineno);
        std::string id = line.substr(0, comma);
        std::string choice = line.substr(comma + 1);
        if (lineno == 1 && id == "id" && choice == "vote") continue;
        if (id.empty()) throw ParseError("empty card id", lineno);
        if (choice.empty()) {
            out.push_back({id, Vote::null()});
            continue;
        }
        auto c = contest.index_of(choice);
        if (!c) throw ParseError("candidate '" + choice + "' not in contest '" + contest.id + "'", lineno);
        out.push_back({id, Vote::plurality(*c)});
    }
    return out;
}

}  // namespace rla
