#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dibrqa {

enum class Errc {
    MissingFile,
    DecodeError,
    EmptyManifest,
    InfeasibleSplit,
    InvalidParam,
    NoEligibleSegments,
    DimMismatch,
    UnknownArch,
    ShapeError,
    DataEmpty,
    NonFiniteLoss,
    ImageTooSmall,
    DegenerateRange,
    TooFewSamples,
    EmptyPatchSet,
    SolverFailure,
    LengthMismatch,
    ZeroVariance,
    EmptyGroup,
    NonPositiveBaseline,
    EmptyCorpus,
    FormatError,
};

std::string_view to_string(Errc code) noexcept;

/// Every failure raised by the library carries one of the codes above so
/// callers (and the CLI exit-code mapping) can branch without string matching.
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

} // namespace dibrqa
