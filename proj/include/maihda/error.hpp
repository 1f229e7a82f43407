#pragma once

#include <stdexcept>
#include <string>

namespace maihda {

/// Malformed input: unreadable files, bad labels, bad config.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The numerical engine cannot proceed (rank deficiency, singular systems,
/// degenerate stratum counts).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Caller passed arguments that violate an operation's precondition.
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

}  // namespace maihda
