#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace kgd {

enum class ErrorCode {
    EmptyInput,
    IsolatedNode,
    BadAlpha,
    SingularSystem,
    DimMismatch,
    RowCountMismatch,
    LexiconParseError,
    DuplicateCategory,
    TooFewCategories,
    FormatError,
    TruncatedFile,
    CorruptData,
    DegenerateBox,
    ZeroVector,
    DivergedGcn,
    DivergedStudent,
    InvalidConfig,
    IoError,
};

std::string_view to_string(ErrorCode code);

/// True for errors caused by bad user input (CLI exit code 2); false for
/// internal failures such as divergence (exit code 1).
bool is_input_error(ErrorCode code);

/// Every failure raised by the engine. what() is "<Code>: <message>".
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message);

    ErrorCode code() const noexcept { return code_; }
    /// The message without the code prefix.
    const std::string& message() const noexcept { return message_; }

private:
    ErrorCode code_;
    std::string message_;
};

enum class Warning {
    DegenerateBandwidth,
    NumericalUnderflow,
    SlowEmaRate,
};

std::string_view to_string(Warning w);

/// Collects non-fatal conditions raised during a computation. Every warning
/// is also forwarded to the logger.
class Diagnostics {
public:
    void warn(Warning w, const std::string& detail);

    const std::vector<std::pair<Warning, std::string>>& entries() const { return entries_; }
    bool has(Warning w) const;
    void clear() { entries_.clear(); }

private:
    std::vector<std::pair<Warning, std::string>> entries_;
};

/// Emits to `sink` if non-null, otherwise only logs.
void report_warning(Diagnostics* sink, Warning w, const std::string& detail);

}  // namespace kgd
