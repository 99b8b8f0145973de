#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace rla {

using CandidateIndex = int;

enum class ContestKind { plurality, irv, stv };

std::string_view to_string(ContestKind kind);
ContestKind contest_kind_from_string(std::string_view text);

/// One contest. Candidates are referred to by their position in `candidates`.
struct Contest {
    std::string id;
    ContestKind kind = ContestKind::plurality;
    std::vector<std::string> candidates;
    int seats = 1;

    std::optional<CandidateIndex> index_of(std::string_view name) const;
    const std::string& name(CandidateIndex c) const { return candidates.at(static_cast<std::size_t>(c)); }
    int candidate_count() const { return static_cast<int>(candidates.size()); }

    /// Throws ParseError unless ids are unique, seats >= 1, seats < candidates,
    /// and seats == 1 for plurality and IRV.
    void validate() const;
};

Contest contest_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Contest& contest);
Contest load_contest(const std::filesystem::path& path);

/// Interpretation of the marks on one card for one contest.
///
/// An empty ranking is normalized to the null vote on construction, so two
/// votes compare equal exactly when they tabulate identically card by card.
class Vote {
public:
    enum class Kind : std::uint8_t { null, plurality, ranking };

    Vote() = default;

    static Vote null() { return Vote{}; }
    static Vote plurality(CandidateIndex c);
    /// Preferences must be distinct; duplicates throw ParseError.
    static Vote ranking(std::vector<CandidateIndex> preferences);

    Kind kind() const noexcept { return kind_; }
    bool is_null() const noexcept { return kind_ == Kind::null; }

    /// Chosen candidate (plurality) or preference order (ranking); empty for null.
    std::span<const CandidateIndex> preferences() const noexcept { return prefs_; }
    std::optional<CandidateIndex> first() const;

    /// Position of `c` in the preference order, if ranked.
    std::optional<std::size_t> rank_of(CandidateIndex c) const;

    friend bool operator==(const Vote&, const Vote&) = default;
    friend auto operator<=>(const Vote&, const Vote&) = default;

private:
    Kind kind_ = Kind::null;
    std::vector<CandidateIndex> prefs_;
};

struct VoteHash {
    std::size_t operator()(const Vote& v) const noexcept;
};

/// Parses null | {"plurality": name} | {"ranking": [names...]} against a contest.
/// Plurality contests accept plurality and null votes; IRV/STV accept rankings and null.
Vote vote_from_json(const nlohmann::json& j, const Contest& contest);
nlohmann::json to_json(const Vote& vote, const Contest& contest);
std::string describe(const Vote& vote, const Contest& contest);

struct CardRecord {
    std::string card_id;
    Vote vote;
};

namespace detail {

/// Ordered records with unique card ids; the order defines the canonical index.
class CardSet {
public:
    CardSet() = default;
    explicit CardSet(std::vector<CardRecord> records);

    std::size_t size() const noexcept { return records_.size(); }
    bool empty() const noexcept { return records_.empty(); }
    const CardRecord& operator[](std::size_t i) const { return records_[i]; }
    std::span<const CardRecord> records() const noexcept { return records_; }
    std::optional<std::size_t> find(std::string_view card_id) const;
    std::vector<Vote> votes() const;

    auto begin() const { return records_.begin(); }
    auto end() const { return records_.end(); }

private:
    std::vector<CardRecord> records_;
    std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace detail

/// Cast vote records, committed to before the audit.
class CvrSet : public detail::CardSet {
public:
    using CardSet::CardSet;
};

/// The votes actually on the cards (what an audit board would read).
class BallotSet : public detail::CardSet {
public:
    using CardSet::CardSet;
};

/// CVRs and cards paired by card id, in CVR order.
struct LinkedInstance {
    Contest contest;
    std::vector<std::string> card_ids;
    std::vector<Vote> cvrs;
    std::vector<Vote> ballots;

    std::size_t size() const noexcept { return cvrs.size(); }
    std::size_t mismatch_count() const;
};

/// Pairs ballots with CVRs by card id. Throws Error naming the first unmatched id.
LinkedInstance link(const Contest& contest, const CvrSet& cvrs, const BallotSet& ballots);

/// Newline-delimited JSON: {"id": string, "vote": <vote>} per line. Blank lines are skipped.
std::vector<CardRecord> parse_card_records(std::istream& in, const Contest& contest);
CvrSet parse_cvrs(const std::filesystem::path& path, const Contest& contest);
BallotSet parse_ballots(const std::filesystem::path& path, const Contest& contest);
void write_card_records(std::ostream& out, std::span<const CardRecord> records, const Contest& contest);

/// Plurality-only CSV: `card_id,candidate` per line, empty candidate = null vote.
/// A first line of `id,vote` is treated as a header.
std::vector<CardRecord> parse_plurality_csv(std::istream& in, const Contest& contest);

}  // namespace rla
