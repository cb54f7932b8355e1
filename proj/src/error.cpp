#include "kgd/error.hpp"

#include <algorithm>

#include <spdlog/spdlog.h>

namespace kgd {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::EmptyInput: return "EmptyInput";
        case ErrorCode::IsolatedNode: return "IsolatedNode";
        case ErrorCode::BadAlpha: return "BadAlpha";
        case ErrorCode::SingularSystem: return "SingularSystem";
        case ErrorCode::DimMismatch: return "DimMismatch";
        case ErrorCode::RowCountMismatch: return "RowCountMismatch";
        case ErrorCode::LexiconParseError: return "LexiconParseError";
        case ErrorCode::DuplicateCategory: return "DuplicateCategory";
        case ErrorCode::TooFewCategories: return "TooFewCategories";
        case ErrorCode::FormatError: return "FormatError";
        case ErrorCode::TruncatedFile: return "TruncatedFile";
        case ErrorCode::CorruptData: return "CorruptData";
        case ErrorCode::DegenerateBox: return "DegenerateBox";
        case ErrorCode::ZeroVector: return "ZeroVector";
        case ErrorCode::DivergedGcn: return "DivergedGcn";
        case ErrorCode::DivergedStudent: return "DivergedStudent";
        case ErrorCode::InvalidConfig: return "InvalidConfig";
        case ErrorCode::IoError: return "IoError";
    }
    return "Unknown";
}

bool is_input_error(ErrorCode code) {
    switch (code) {
        case ErrorCode::SingularSystem:
        case ErrorCode::DivergedGcn:
        case ErrorCode::DivergedStudent:
            return false;
        default:
            return true;
    }
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code), message_(message) {}

std::string_view to_string(Warning w) {
    switch (w) {
        case Warning::DegenerateBandwidth: return "DegenerateBandwidth";
        case Warning::NumericalUnderflow: return "NumericalUnderflow";
        case Warning::SlowEmaRate: return "SlowEmaRate";
    }
    return "Unknown";
}

void Diagnostics::warn(Warning w, const std::string& detail) {
    entries_.emplace_back(w, detail);
}

bool Diagnostics::has(Warning w) const {
    return std::any_of(entries_.begin(), entries_.end(),
                       [w](const auto& e) { return e.first == w; });
}

void report_warning(Diagnostics* sink, Warning w, const std::string& detail) {
    spdlog::warn("{}: {}", to_string(w), detail);
    if (sink) sink->warn(w, detail);
}

}  // namespace kgd
