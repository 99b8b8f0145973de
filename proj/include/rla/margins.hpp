#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "rla/election.hpp"
#include "rla/rational.hpp"
#include "rla/socialchoice.hpp"

namespace rla {

enum class MarginKind { exact, lower_bound, diagnostic_upper };

std::string_view to_string(MarginKind kind);

/// Replace the CVR at canonical index `card` by `replacement`.
struct CvrChange {
    std::size_t card = 0;
    Vote replacement;
};

struct MarginReport {
    Count V = 0;  // cards
    Count N = 0;
    MarginKind kind = MarginKind::exact;
    /// Present for exact results: |witness| == V and applying it changes the outcome.
    std::optional<std::vector<CvrChange>> witness;
    std::string source;

    /// V / N, exactly.
    Rational v() const { return N > 0 ? Rational(BigInt(V), BigInt(N)) : Rational(0); }
    /// V = 0: a mismatch-based audit cannot certify.
    bool degenerate() const { return V == 0; }
    /// Exact margins and lower bounds may drive a mismatch audit; diagnostics may not.
    bool usable_for_audit() const { return kind != MarginKind::diagnostic_upper && V > 0; }
};

/// V = ceil((winner - runner-up) / 2); 0 when the top tallies tie.
MarginReport plurality_cvr_margin(std::span<const Count> tallies, Count N, const Contest& contest);

/// Same, with a witness flipping the first V winner CVRs (canonical order) to the runner-up.
MarginReport plurality_cvr_margin(const CvrSet& cvrs, const Contest& contest);

/// Every vote in the Hamming ball's alphabet: candidates plus null for plurality;
/// every ordering of every nonempty candidate subset plus null for IRV (at most 6 candidates).
std::vector<Vote> default_vocabulary(const Contest& contest);

struct BruteForceOptions {
    int max_radius = 2;
    /// Replacement alphabet; empty selects default_vocabulary().
    std::vector<Vote> vocabulary;
    std::uint64_t work_budget = 100'000'000;  // tabulations
    unsigned workers = 1;
};

/// Smallest number of CVR replacements that changes the reported outcome (a tie
/// counts as a change), searched breadth-first in the radius. Returns kind=exact
/// with a witness, or kind=lower_bound with V = max_radius + 1 when no change
/// within max_radius exists. Throws InfeasibleError when the work budget runs out.
///
/// The search runs over multisets: tabulation only sees how many cards carry each
/// distinct vote, so removing r_t cards of each CVR vote type t and adding a multiset
/// of vocabulary votes covers every card-level modification of the same radius.
MarginReport hamming_margin_bruteforce(const CvrSet& cvrs, const Contest& contest, const BruteForceOptions& options);

/// Final two-candidate round gap, halved and rounded up. An upper bound on the
/// CVR margin; reported as diagnostic_upper and never usable for an audit.
MarginReport irv_last_round_margin(const IrvRounds& rounds);

/// {"V_minus": integer, "source": string}
MarginReport external_margin_from_json(const nlohmann::json& j, Count N);
MarginReport load_external_margin(const std::filesystem::path& path, Count N);

/// CVR votes with the witness applied.
std::vector<Vote> apply_changes(std::span<const Vote> votes, std::span<const CvrChange> changes);

nlohmann::json to_json(const MarginReport& report, const Contest& contest);

}  // namespace rla
