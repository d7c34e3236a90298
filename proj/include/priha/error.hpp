// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace priha {

enum class Errc {
    // corpus
    MissingFrontMatter,
    MissingField,
    BadTier,
    BadDate,
    InvalidUtf8,
    EmptyDocument,
    IoError,
    // retrieval / rerank
    EmbeddingProviderError,
    RerankerUnavailable,
    UnknownChild,
    // providers
    ProviderUnreachable,
    RateLimited,
    ContextTooLong,
    NoFixture,
    InvalidUrl,
    Timeout,
    DnsFailure,
    TooManyRedirects,
    MalformedModelOutput,
    // stages
    EmptySubQueries,
    BadLine,
    DanglingCitation,
    PipelineFailed,
    SessionNotFound,
    CorruptSession,
    DuplicateId,
    NoScoredRows,
    EvalFailed,
    InvalidConfig,
    InvalidArgument,
};

constexpr std::string_view to_string(Errc code) noexcept
{
    switch (code) {
    case Errc::MissingFrontMatter: return "MissingFrontMatter";
    case Errc::MissingField: return "MissingField";
    case Errc::BadTier: return "BadTier";
    case Errc::BadDate: return "BadDate";
    case Errc::InvalidUtf8: return "InvalidUtf8";
    case Errc::EmptyDocument: return "EmptyDocument";
    case Errc::IoError: return "IoError";
    case Errc::EmbeddingProviderError: return "EmbeddingProviderError";
    case Errc::RerankerUnavailable: return "RerankerUnavailable";
    case Errc::UnknownChild: return "UnknownChild";
    case Errc::ProviderUnreachable: return "ProviderUnreachable";
    case Errc::RateLimited: return "RateLimited";
    case Errc::ContextTooLong: return "ContextTooLong";
    case Errc::NoFixture: return "NoFixture";
    case Errc::InvalidUrl: return "InvalidUrl";
    case Errc::Timeout: return "Timeout";
    case Errc::DnsFailure: return "DnsFailure";
    case Errc::TooManyRedirects: return "TooManyRedirects";
    case Errc::MalformedModelOutput: return "MalformedModelOutput";
    case Errc::EmptySubQueries: return "EmptySubQueries";
    case Errc::BadLine: return "BadLine";
    case Errc::DanglingCitation: return "DanglingCitation";
    case Errc::PipelineFailed: return "PipelineFailed";
    case Errc::SessionNotFound: return "SessionNotFound";
    case Errc::CorruptSession: return "CorruptSession";
    case Errc::DuplicateId: return "DuplicateId";
    case Errc::NoScoredRows: return "NoScoredRows";
    case Errc::EvalFailed: return "EvalFailed";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::InvalidArgument: return "InvalidArgument";
    }
    return "Unknown";
}

/// The single exception type thrown by the library. `code()` identifies the
/// failure class; `detail()` carries the human-readable context (a field
/// name, a file path, a child id, ...).
class Error : public std::runtime_error {
public:
    Error(Errc code, std::string detail)
        : std::runtime_error(std::string(to_string(code)) + ": " + detail)
        , code_(code)
        , detail_(std::move(detail))
    {}

    Errc code() const noexcept { return code_; }
    const std::string& detail() const noexcept { return detail_; }

private:
    Errc code_;
    std::string detail_;
};

/// Transport-level failures that retry wrappers may retry.
inline bool is_transient(Errc code) noexcept
{
    return code == Errc::ProviderUnreachable || code == Errc::RateLimited;
}

}  // namespace priha
