#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rla {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input that does not conform to one of the documented file formats.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line = 0)
        : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

    /// 1-based line number, 0 when not line-oriented.
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// A request that cannot be satisfied for the given inputs (infeasible scenario,
/// degenerate margin, exhausted work budget, ...).
class InfeasibleError : public Error {
public:
    using Error::Error;
};

}  // namespace rla
