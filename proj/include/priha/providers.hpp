// SPDX-License-Identifier: Apache-2.0
#pragma once

/// Contracts for every external service the pipeline talks to (chat model,
/// embeddings, reranker, web search, page fetching) plus the transport-neutral
/// machinery around them: retries, the global in-flight cap, redirect
/// following, HTML text extraction and schema-constrained JSON replies.

#include <chrono>
#include <functional>
#include <memory>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "priha/error.hpp"
#include "priha/text.hpp"

namespace priha {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Chat
// ---------------------------------------------------------------------------

enum class Role { system, user, assistant };

inline std::string_view to_string(Role r)
{
    switch (r) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
    }
    return "user";
}

struct Message {
    Role role = Role::user;
    std::string content;
};

struct ChatRequest {
    std::vector<Message> messages;
    double temperature = 0.0;
    std::optional<std::string> response_schema;
    int max_tokens = 2048;

    std::size_t total_chars() const
    {
        std::size_t n = 0;
        for (const auto& m : messages) n += m.content.size();
        return n;
    }

    /// Machine tag (`[TAG:name]`) carried by the system message, if any.
    std::string tag() const
    {
        for (const auto& m : messages) {
            if (m.role != Role::system) continue;
            auto at = m.content.find("[TAG:");
            if (at == std::string::npos) continue;
            auto end = m.content.find(']', at);
            if (end != std::string::npos) return m.content.substr(at + 5, end - at - 5);
        }
        return {};
    }
};

struct ChatResponse {
    std::string text;
    int prompt_tokens = 0;
    int completion_tokens = 0;
    double latency_ms = 0.0;
};

class ChatModel {
public:
    virtual ~ChatModel() = default;
    virtual ChatResponse complete(const ChatRequest& req) = 0;
};

// ---------------------------------------------------------------------------
// Embeddings, reranking, search, pages
// ---------------------------------------------------------------------------

using Embedding = std::vector<double>;

class Embedder {
public:
    virtual ~Embedder() = default;
    /// One L2-normalized vector per input text.
    virtual std::vector<Embedding> embed(const std::vector<std::string>& texts) = 0;
    /// Identifies model and dimension; persisted indexes must match it.
    virtual std::string signature() const = 0;
};

class Reranker {
public:
    virtual ~Reranker() = default;
    /// One relevance score in [0,1] per document, in input order.
    virtual std::vector<double> score(std::string_view query, const std::vector<std::string>& documents) = 0;
};

struct SearchResult {
    std::string url;
    std::string title;
    std::string snippet;
    int rank = 1;
};

class SearchEngine {
public:
    virtual ~SearchEngine() = default;
    virtual std::vector<SearchResult> search(std::string_view query) = 0;
};

struct Url {
    std::string scheme;
    std::string host;  // lowercase
    int port = 0;      // 0 = scheme default
    std::string path;  // starts with '/', includes the query string

    int effective_port() const { return port != 0 ? port : (scheme == "https" ? 443 : 80); }

    std::string origin() const
    {
        std::string s = scheme + "://" + host;
        if (port != 0) s += ":" + std::to_string(port);
        return s;
    }

    std::string str() const { return origin() + path; }
};

/// Parses an absolute http(s) URL. Fragments are dropped.
inline std::optional<Url> parse_url(std::string_view s)
{
    s = text::trim(s);
    auto sep = s.find("://");
    if (sep == std::string_view::npos) return std::nullopt;
    Url u;
    u.scheme = text::lowercase(s.substr(0, sep));
    if (u.scheme != "http" && u.scheme != "https") return std::nullopt;
    auto rest = s.substr(sep + 3);
    if (auto hash = rest.find('#'); hash != std::string_view::npos) rest = rest.substr(0, hash);
    auto slash = rest.find_first_of("/?");
    auto authority = rest.substr(0, slash);
    u.path = slash == std::string_view::npos ? "/" : std::string(rest.substr(slash));
    if (u.path.front() == '?') u.path = "/" + u.path;
    if (auto at = authority.rfind('@'); at != std::string_view::npos) authority = authority.substr(at + 1);
    if (auto colon = authority.rfind(':'); colon != std::string_view::npos) {
        auto port = authority.substr(colon + 1);
        authority = authority.substr(0, colon);
        if (port.empty() || port.size() > 5) return std::nullopt;
        int p = 0;
        for (char c : port) {
            if (c < '0' || c > '9') return std::nullopt;
            p = p * 10 + (c - '0');
        }
        if (p == 0 || p > 65535) return std::nullopt;
        u.port = p;
    }
    u.host = text::lowercase(authority);
    while (!u.host.empty() && u.host.back() == '.') u.host.pop_back();
    if (u.host.empty()) return std::nullopt;
    for (char c : u.host) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '-' || c == '.' || c == '_';
        if (!ok) return std::nullopt;
    }
    for (char c : u.path) {
        if (c == ' ' || c == '\n' || c == '\r' || c == '\t') return std::nullopt;
    }
    return u;
}

/// Resolves a redirect `Location` against the URL that produced it.
inline std::optional<Url> resolve_url(const Url& base, std::string_view location)
{
    location = text::trim(location);
    if (location.find("://") != std::string_view::npos) return parse_url(location);
    if (location.starts_with("//")) return parse_url(base.scheme + ":" + std::string(location));
    Url u = base;
    if (location.starts_with("/")) {
        u.path = std::string(location);
    } else {
        auto dir = base.path.substr(0, base.path.find('?'));
        dir = dir.substr(0, dir.rfind('/') + 1);
        u.path = dir + std::string(location);
    }
    return parse_url(u.str());
}

/// Single HTTP exchange without redirect handling.
struct HttpHop {
    int status = 0;
    std::string location;
    std::string body;
    std::string content_type;
};

class PageSource {
public:
    virtual ~PageSource() = default;
    /// Throws Error{Timeout | DnsFailure | ProviderUnreachable} on transport failure.
    virtual HttpHop get(const Url& url) = 0;
};

class Clock {
public:
    virtual ~Clock() = default;
    virtual Timestamp now() const = 0;
    /// Milliseconds on a monotonic scale, for stage timings.
    virtual double monotonic_ms() const = 0;
};

class SystemClock final : public Clock {
public:
    Timestamp now() const override
    {
        return std::chrono::time_point_cast<std::chrono::seconds>(std::chrono::system_clock::now());
    }
    double monotonic_ms() const override
    {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now().time_since_epoch()).count();
    }
};

class FixedClock final : public Clock {
public:
    explicit FixedClock(Timestamp t) : t_(t) {}
    Timestamp now() const override { return t_; }
    double monotonic_ms() const override { return 0.0; }

private:
    Timestamp t_;
};

// ---------------------------------------------------------------------------
// HTML
// ---------------------------------------------------------------------------

namespace detail {

inline std::string decode_entities(std::string_view s)
{
    std::string out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] != '&') {
            out.push_back(s[i]);
            continue;
        }
        auto semi = s.find(';', i);
        if (semi == std::string_view::npos || semi - i > 10) {
            out.push_back('&');
            continue;
        }
        auto name = s.substr(i + 1, semi - i - 1);
        std::optional<char32_t> cp;
        if (name == "amp") cp = '&';
        else if (name == "lt") cp = '<';
        else if (name == "gt") cp = '>';
        else if (name == "quot") cp = '"';
        else if (name == "apos") cp = '\'';
        else if (name == "nbsp") cp = ' ';
        else if (name.size() > 1 && name[0] == '#') {
            try {
                const bool hex = name[1] == 'x' || name[1] == 'X';
                auto v = std::stoul(std::string(name.substr(hex ? 2 : 1)), nullptr, hex ? 16 : 10);
                if (v > 0 && v <= 0x10FFFF && !(v >= 0xD800 && v <= 0xDFFF)) cp = static_cast<char32_t>(v);
            } catch (...) {
            }
        }
        if (!cp) {
            out.push_back('&');
            continue;
        }
        text::append_utf8(out, *cp);
        i = semi;
    }
    return out;
}

inline bool is_block_tag(std::string_view name)
{
    static constexpr std::string_view blocks[] = {"p",  "div", "br", "li", "ul", "ol", "h1", "h2", "h3",
                                                  "h4", "h5",  "h6", "tr", "td", "th", "table", "section",
                                                  "article", "header", "footer", "main", "nav", "title",
                                                  "blockquote", "pre", "hr", "dd", "dt", "dl"};
    for (auto b : blocks) {
        if (name == b) return true;
    }
    return false;
}

}  // namespace detail

/// Tag-stripping text extraction. Script, style, noscript and template
/// elements are dropped with their content; block elements become line
/// breaks; entities are decoded; whitespace is collapsed.
inline std::string html_to_text(std::string_view html)
{
    std::string raw;
    raw.reserve(html.size());
    std::size_t i = 0;
    const auto lower = [](std::string_view v) { return text::lowercase(v); };
    while (i < html.size()) {
        if (html[i] != '<') {
            raw.push_back(html[i++]);
            continue;
        }
        if (html.substr(i, 4) == "<!--") {
            auto end = html.find("-->", i + 4);
            i = end == std::string_view::npos ? html.size() : end + 3;
            continue;
        }
        auto close = html.find('>', i);
        if (close == std::string_view::npos) {
            break;
        }
        auto inner = html.substr(i + 1, close - i - 1);
        const bool end_tag = !inner.empty() && inner[0] == '/';
        if (end_tag) inner.remove_prefix(1);
        auto name_end = inner.find_first_of(" \t\r\n/>");
        const auto name = lower(inner.substr(0, name_end));
        i = close + 1;
        if (!end_tag && (name == "script" || name == "style" || name == "noscript" || name == "template")) {
            auto lowered_rest = lower(html.substr(i));
            auto end = lowered_rest.find("</" + name);
            if (end == std::string::npos) {
                i = html.size();
            } else {
                auto gt = html.find('>', i + end);
                i = gt == std::string_view::npos ? html.size() : gt + 1;
            }
            continue;
        }
        if (detail::is_block_tag(name)) {
            raw.push_back('\n');
        } else {
            raw.push_back(' ');
        }
    }

    const auto decoded = detail::decode_entities(raw);
    std::string out;
    std::size_t pos = 0;
    while (pos <= decoded.size()) {
        auto nl = decoded.find('\n', pos);
        auto line = std::string_view(decoded).substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
        auto norm = text::normalize_whitespace(line);
        if (!norm.empty()) {
            if (!out.empty()) out.push_back('\n');
            out += norm;
        }
        if (nl == std::string::npos) break;
        pos = nl + 1;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Fetching
// ---------------------------------------------------------------------------

struct FetchOptions {
    int max_redirects = 5;
};

struct FetchOutcome {
    int status = 0;
    std::string final_url;
    std::string body;  // extracted text; empty unless 2xx
    std::string content_type;
    int redirects = 0;
};

/// GETs `url`, following up to `opts.max_redirects` redirects. Non-2xx
/// statuses are outcomes, not errors; transport failures throw.
inline FetchOutcome fetch_url(std::string_view url, PageSource& source, const FetchOptions& opts = {})
{
    auto current = parse_url(url);
    if (!current) {
        throw Error(Errc::InvalidUrl, std::string(url));
    }
    FetchOutcome out;
    for (;;) {
        auto hop = source.get(*current);
        out.status = hop.status;
        out.final_url = current->str();
        out.content_type = hop.content_type;
        const bool redirect = hop.status == 301 || hop.status == 302 || hop.status == 303 || hop.status == 307
                           || hop.status == 308;
        if (redirect && !hop.location.empty()) {
            if (out.redirects >= opts.max_redirects) {
                throw Error(Errc::TooManyRedirects, std::string(url));
            }
            auto next = resolve_url(*current, hop.location);
            if (!next) {
                throw Error(Errc::InvalidUrl, hop.location);
            }
            ++out.redirects;
            current = std::move(next);
            continue;
        }
        if (hop.status >= 200 && hop.status < 300) {
            const bool html = hop.content_type.empty() || hop.content_type.find("html") != std::string::npos;
            out.body = html ? html_to_text(hop.body) : text::normalize_whitespace(hop.body);
        }
        return out;
    }
}

// ---------------------------------------------------------------------------
// Retries and concurrency cap
// ---------------------------------------------------------------------------

struct RetryPolicy {
    int max_retries = 2;
    std::chrono::milliseconds backoff{200};
    std::size_t max_context_chars = 200000;
};

/// Runs `fn`, retrying transient failures with exponential backoff.
template <typename Fn>
auto with_retries(const RetryPolicy& policy, Fn&& fn) -> decltype(fn())
{
    for (int attempt = 0;; ++attempt) {
        try {
            return fn();
        } catch (const Error& e) {
            if (!is_transient(e.code()) || attempt >= policy.max_retries) {
                throw;
            }
            if (policy.backoff.count() > 0) {
                std::this_thread::sleep_for(policy.backoff * (1 << attempt));
            }
        }
    }
}

/// Global cap on simultaneous external calls, shared by all decorated providers.
class InFlightLimiter {
public:
    explicit InFlightLimiter(std::ptrdiff_t max_concurrent) : sem_(std::max<std::ptrdiff_t>(1, max_concurrent)) {}

    template <typename Fn>
    auto run(Fn&& fn) -> decltype(fn())
    {
        sem_.acquire();
        struct Release {
            std::counting_semaphore<>& s;
            ~Release() { s.release(); }
        } release{sem_};
        return fn();
    }

private:
    std::counting_semaphore<> sem_;
};

/// chat_complete: the retrying, capped, length-checked entry point every
/// pipeline stage uses.
class ResilientChat final : public ChatModel {
public:
    ResilientChat(std::shared_ptr<ChatModel> inner, RetryPolicy policy, std::shared_ptr<InFlightLimiter> limiter)
        : inner_(std::move(inner)), policy_(policy), limiter_(std::move(limiter))
    {}

    ChatResponse complete(const ChatRequest& req) override
    {
        if (req.total_chars() > policy_.max_context_chars) {
            throw Error(Errc::ContextTooLong, std::to_string(req.total_chars()) + " characters exceeds limit of "
                                                  + std::to_string(policy_.max_context_chars));
        }
        return with_retries(policy_, [&] {
            return limiter_ ? limiter_->run([&] { return inner_->complete(req); }) : inner_->complete(req);
        });
    }

private:
    std::shared_ptr<ChatModel> inner_;
    RetryPolicy policy_;
    std::shared_ptr<InFlightLimiter> limiter_;
};

inline ChatResponse chat_complete(ChatModel& model, const ChatRequest& req) { return model.complete(req); }

class ResilientEmbedder final : public Embedder {
public:
    ResilientEmbedder(std::shared_ptr<Embedder> inner, RetryPolicy policy, std::shared_ptr<InFlightLimiter> limiter)
        : inner_(std::move(inner)), policy_(policy), limiter_(std::move(limiter))
    {}

    std::vector<Embedding> embed(const std::vector<std::string>& texts) override
    {
        return with_retries(policy_, [&] { return limiter_->run([&] { return inner_->embed(texts); }); });
    }
    std::string signature() const override { return inner_->signature(); }

private:
    std::shared_ptr<Embedder> inner_;
    RetryPolicy policy_;
    std::shared_ptr<InFlightLimiter> limiter_;
};

class ResilientSearch final : public SearchEngine {
public:
    ResilientSearch(std::shared_ptr<SearchEngine> inner, RetryPolicy policy, std::shared_ptr<InFlightLimiter> limiter)
        : inner_(std::move(inner)), policy_(policy), limiter_(std::move(limiter))
    {}

    std::vector<SearchResult> search(std::string_view query) override
    {
        return with_retries(policy_, [&] { return limiter_->run([&] { return inner_->search(query); }); });
    }

private:
    std::shared_ptr<SearchEngine> inner_;
    RetryPolicy policy_;
    std::shared_ptr<InFlightLimiter> limiter_;
};

class CappedPages final : public PageSource {
public:
    CappedPages(std::shared_ptr<PageSource> inner, std::shared_ptr<InFlightLimiter> limiter)
        : inner_(std::move(inner)), limiter_(std::move(limiter))
    {}

    HttpHop get(const Url& url) override { return limiter_->run([&] { return inner_->get(url); }); }

private:
    std::shared_ptr<PageSource> inner_;
    std::shared_ptr<InFlightLimiter> limiter_;
};

class ResilientReranker final : public Reranker {
public:
    ResilientReranker(std::shared_ptr<Reranker> inner, RetryPolicy policy, std::shared_ptr<InFlightLimiter> limiter)
        : inner_(std::move(inner)), policy_(policy), limiter_(std::move(limiter))
    {}

    std::vector<double> score(std::string_view query, const std::vector<std::string>& docs) override
    {
        return with_retries(policy_, [&] { return limiter_->run([&] { return inner_->score(query, docs); }); });
    }

private:
    std::shared_ptr<Reranker> inner_;
    RetryPolicy policy_;
    std::shared_ptr<InFlightLimiter> limiter_;
};

// ---------------------------------------------------------------------------
// Structured output
// ---------------------------------------------------------------------------

struct SchemaViolation {
    std::string message;
    Errc code = Errc::MalformedModelOutput;
};

struct Schema {
    std::string id;
    std::string shape;  // JSON example shown to the model
    std::function<std::optional<SchemaViolation>(const json&)> validate;
};

/// Pulls the first JSON object or array out of a model reply, tolerating code
/// fences and surrounding prose.
inline std::optional<json> extract_json(std::string_view reply)
{
    auto first = reply.find_first_of("{[");
    while (first != std::string_view::npos) {
        const char open = reply[first];
        const char close = open == '{' ? '}' : ']';
        auto last = reply.rfind(close);
        while (last != std::string_view::npos && last > first) {
            auto parsed = json::parse(reply.substr(first, last - first + 1), nullptr, false);
            if (!parsed.is_discarded()) {
                return parsed;
            }
            last = last == 0 ? std::string_view::npos : reply.rfind(close, last - 1);
        }
        first = reply.find_first_of("{[", first + 1);
    }
    return std::nullopt;
}

struct Constrained {
    json value;
    int repairs = 0;
};

/// Asks for a schema-conforming JSON reply. One repair round re-prompts with
/// the validation error; a second failure throws with the violation's code.
inline Constrained constrained_json(ChatModel& model, ChatRequest req, const Schema& schema)
{
    if (!req.response_schema) {
        req.response_schema = schema.id;
    }
    for (int attempt = 0; attempt < 2; ++attempt) {
        const auto reply = model.complete(req).text;
        SchemaViolation violation;
        auto parsed = extract_json(reply);
        if (!parsed) {
            violation.message = "reply is not JSON";
        } else if (auto v = schema.validate ? schema.validate(*parsed) : std::nullopt) {
            violation = *v;
        } else {
            return {std::move(*parsed), attempt};
        }
        if (attempt == 1) {
            throw Error(violation.code, "schema " + schema.id + ": " + violation.message);
        }
        req.messages.push_back({Role::assistant, reply});
        req.messages.push_back({Role::user, "[REPAIR] Your previous reply was invalid: " + violation.message
                                                + ". Reply with a single JSON value of this shape and nothing else: "
                                                + schema.shape});
    }
    throw Error(Errc::MalformedModelOutput, schema.id);  // unreachable
}

}  // namespace priha
