// SPDX-License-Identifier: Apache-2.0
#pragma once

/// Wire-protocol clients for live services and the config-driven assembly
/// of providers and engines.
///
/// Live kinds: chat and embeddings speak the OpenAI-compatible REST shape,
/// the reranker POSTs {model, query, documents}, search talks to a SearxNG
/// JSON endpoint, and pages are fetched over plain HTTP(S) one hop at a time.
/// HTTPS needs CPPHTTPLIB_OPENSSL_SUPPORT at build time.

#include <netdb.h>
#include <sys/socket.h>

#include <memory>
#include <string>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "priha/config.hpp"
#include "priha/error.hpp"
#include "priha/mock.hpp"
#include "priha/pipeline.hpp"
#include "priha/providers.hpp"
#include "priha/retrieval.hpp"
#include "priha/web_agent.hpp"

namespace priha {
namespace live {

namespace detail {

struct Target {
    std::string origin;
    std::string path;  // without trailing slash
};

inline Target split_endpoint(const std::string& endpoint)
{
    auto u = parse_url(endpoint);
    if (!u) throw Error(Errc::InvalidConfig, "bad endpoint URL '" + endpoint + "'");
    std::string path = u->path;
    while (path.size() > 1 && path.back() == '/') path.pop_back();
    if (path == "/") path.clear();
    return {u->origin(), path};
}

inline std::unique_ptr<httplib::Client> client_for(const std::string& origin, double timeout_s)
{
    auto c = std::make_unique<httplib::Client>(origin);
    if (!c->is_valid()) {
        throw Error(Errc::InvalidConfig, "cannot create a client for " + origin
                                             + " (HTTPS requires a build with CPPHTTPLIB_OPENSSL_SUPPORT)");
    }
    const auto secs = static_cast<time_t>(timeout_s);
    const auto usecs = static_cast<time_t>((timeout_s - static_cast<double>(secs)) * 1e6);
    c->set_connection_timeout(secs, usecs);
    c->set_read_timeout(secs, usecs);
    c->set_write_timeout(secs, usecs);
    c->set_follow_location(false);
    return c;
}

inline Error transport_error(httplib::Error e, const std::string& what)
{
    if (e == httplib::Error::Read || e == httplib::Error::ConnectionTimeout) {
        return Error(Errc::Timeout, what + ": " + httplib::to_string(e));
    }
    return Error(Errc::ProviderUnreachable, what + ": " + httplib::to_string(e));
}

/// Maps HTTP status to the error contract: 429 rate limit, 5xx unreachable,
/// other non-2xx a configuration problem.
inline void check_status(int status, const std::string& body, const std::string& what)
{
    if (status >= 200 && status < 300) return;
    const auto snippet = body.substr(0, 300);
    if (status == 429) throw Error(Errc::RateLimited, what);
    if (status >= 500) throw Error(Errc::ProviderUnreachable, what + ": HTTP " + std::to_string(status));
    if (status == 400 || status == 413) {
        const auto lower = text::lowercase(snippet);
        if (lower.find("context") != std::string::npos || lower.find("too long") != std::string::npos) {
            throw Error(Errc::ContextTooLong, what + ": " + snippet);
        }
    }
    throw Error(Errc::InvalidConfig, what + ": HTTP " + std::to_string(status) + " " + snippet);
}

inline json post_json(const EndpointConfig& cfg, const std::string& suffix, const json& body)
{
    const auto t = split_endpoint(cfg.endpoint);
    auto c = client_for(t.origin, cfg.timeout_s);
    httplib::Headers headers;
    if (auto key = cfg.api_key(); !key.empty()) headers.emplace("Authorization", "Bearer " + key);
    const auto what = cfg.endpoint + suffix;
    auto res = c->Post(t.path + suffix, headers, body.dump(), "application/json");
    if (!res) throw transport_error(res.error(), what);
    check_status(res->status, res->body, what);
    auto j = json::parse(res->body, nullptr, false);
    if (j.is_discarded()) throw Error(Errc::ProviderUnreachable, what + ": response is not JSON");
    return j;
}

}  // namespace detail

class OpenAiChat final : public ChatModel {
public:
    explicit OpenAiChat(EndpointConfig cfg) : cfg_(std::move(cfg)) {}

    ChatResponse complete(const ChatRequest& req) override
    {
        json messages = json::array();
        for (const auto& m : req.messages) messages.push_back({{"role", to_string(m.role)}, {"content", m.content}});
        json body = {{"model", cfg_.model},
                     {"messages", std::move(messages)},
                     {"temperature", req.temperature},
                     {"max_tokens", req.max_tokens}};
        if (req.response_schema) body["response_format"] = {{"type", "json_object"}};
        auto j = detail::post_json(cfg_, "/chat/completions", body);
        ChatResponse out;
        try {
            out.text = j.at("choices").at(0).at("message").at("content").get<std::string>();
            if (j.contains("usage")) {
                out.prompt_tokens = j["usage"].value("prompt_tokens", 0);
                out.completion_tokens = j["usage"].value("completion_tokens", 0);
            }
        } catch (const json::exception& e) {
            throw Error(Errc::ProviderUnreachable, std::string("unexpected chat response shape: ") + e.what());
        }
        return out;
    }

private:
    EndpointConfig cfg_;
};

class OpenAiEmbedder final : public Embedder {
public:
    explicit OpenAiEmbedder(EndpointConfig cfg) : cfg_(std::move(cfg)) {}

    std::vector<Embedding> embed(const std::vector<std::string>& texts) override
    {
        if (texts.empty()) throw Error(Errc::InvalidArgument, "embed_texts requires at least one text");
        auto j = detail::post_json(cfg_, "/embeddings", {{"model", cfg_.model}, {"input", texts}});
        std::vector<Embedding> out(texts.size());
        try {
            const auto& data = j.at("data");
            if (data.size() != texts.size()) throw Error(Errc::EmbeddingProviderError, "embedding count mismatch");
            for (std::size_t i = 0; i < data.size(); ++i) {
                const auto idx = data[i].value("index", i);
                if (idx >= out.size()) throw Error(Errc::EmbeddingProviderError, "embedding index out of range");
                out[idx] = l2_normalized(data[i].at("embedding").get<Embedding>());
            }
        } catch (const json::exception& e) {
            throw Error(Errc::EmbeddingProviderError, e.what());
        }
        return out;
    }

    std::string signature() const override { return "openai:" + cfg_.model; }

private:
    EndpointConfig cfg_;
};

class HttpReranker final : public Reranker {
public:
    explicit HttpReranker(EndpointConfig cfg) : cfg_(std::move(cfg)) {}

    std::vector<double> score(std::string_view query, const std::vector<std::string>& documents) override
    {
        auto j = detail::post_json(cfg_, "", {{"model", cfg_.model}, {"query", query}, {"documents", documents}});
        std::vector<double> out(documents.size(), 0.0);
        try {
            if (j.contains("scores")) return j.at("scores").get<std::vector<double>>();
            for (const auto& r : j.at("results")) {
                const auto idx = r.at("index").get<std::size_t>();
                if (idx < out.size()) out[idx] = r.at("relevance_score").get<double>();
            }
        } catch (const json::exception& e) {
            throw Error(Errc::RerankerUnavailable, e.what());
        }
        return out;
    }

private:
    EndpointConfig cfg_;
};

class SearxngSearch final : public SearchEngine {
public:
    explicit SearxngSearch(EndpointConfig cfg) : cfg_(std::move(cfg)) {}

    std::vector<SearchResult> search(std::string_view query) override
    {
        if (text::trim(query).empty()) throw Error(Errc::InvalidArgument, "web_search requires a non-empty query");
        const auto t = detail::split_endpoint(cfg_.endpoint);
        auto c = detail::client_for(t.origin, cfg_.timeout_s);
        httplib::Params params{{"q", std::string(query)}, {"format", "json"}};
        auto res = c->Get(t.path + "/search", params, httplib::Headers{});
        if (!res) throw detail::transport_error(res.error(), "search");
        detail::check_status(res->status, res->body, "search");
        auto j = json::parse(res->body, nullptr, false);
        if (j.is_discarded() || !j.contains("results")) throw Error(Errc::ProviderUnreachable, "bad search reply");
        std::vector<SearchResult> out;
        int rank = 0;
        for (const auto& r : j["results"]) {
            if (!r.contains("url") || !r["url"].is_string()) continue;
            out.push_back({r["url"], r.value("title", ""), r.value("content", ""), ++rank});
        }
        return out;
    }

private:
    EndpointConfig cfg_;
};

/// One GET per hop; redirects are left to fetch_url so every hop is checked.
class HttpPages final : public PageSource {
public:
    explicit HttpPages(double timeout_s) : timeout_s_(timeout_s) {}

    HttpHop get(const Url& url) override
    {
        addrinfo hints{};
        hints.ai_socktype = SOCK_STREAM;
        addrinfo* found = nullptr;
        if (getaddrinfo(url.host.c_str(), nullptr, &hints, &found) != 0) throw Error(Errc::DnsFailure, url.host);
        freeaddrinfo(found);
        auto c = detail::client_for(url.origin(), timeout_s_);
        auto res = c->Get(url.path, httplib::Headers{{"User-Agent", "priha/1.0"}});
        if (!res) throw detail::transport_error(res.error(), url.str());
        HttpHop hop;
        hop.status = res->status;
        hop.location = res->get_header_value("Location");
        hop.content_type = res->get_header_value("Content-Type");
        hop.body = std::move(res->body);
        return hop;
    }

private:
    double timeout_s_;
};

}  // namespace live

// ---------------------------------------------------------------------------
// Assembly
// ---------------------------------------------------------------------------

/// Builds the provider set named by the config, wrapping every service in
/// retries and the shared in-flight cap. Mocks read `providers.fixtures_dir`.
inline ProviderSet make_providers(const PipelineConfig& cfg)
{
    const auto& pc = cfg.providers;
    RetryPolicy policy{pc.max_retries, std::chrono::milliseconds(pc.backoff_ms), pc.max_context_chars};
    auto limiter = std::make_shared<InFlightLimiter>(static_cast<std::ptrdiff_t>(pc.max_concurrent));

    std::shared_ptr<mock::ScriptedChat> scripted;
    std::shared_ptr<mock::FixtureWeb> fixture_web;
    const auto scripted_chat = [&] {
        if (!scripted) scripted = mock::ScriptedChat::from_directory(pc.fixtures_dir / "llm");
        return scripted;
    };
    const auto web_fixture = [&] {
        if (!fixture_web) fixture_web = mock::FixtureWeb::from_directory(pc.fixtures_dir);
        return fixture_web;
    };
    const auto unknown = [](const std::string& what, const std::string& kind) {
        return Error(Errc::InvalidConfig, "unknown " + what + " kind '" + kind + "'");
    };
    const auto chat_for = [&](const EndpointConfig& e) -> std::shared_ptr<ChatModel> {
        std::shared_ptr<ChatModel> inner;
        if (e.kind == "mock") {
            inner = scripted_chat();
        } else if (e.kind == "openai") {
            inner = std::make_shared<live::OpenAiChat>(e);
        } else {
            throw unknown("chat", e.kind);
        }
        return std::make_shared<ResilientChat>(inner, policy, limiter);
    };

    ProviderSet p;
    p.chat = chat_for(pc.chat);
    p.judge = pc.judge ? chat_for(*pc.judge) : p.chat;

    std::shared_ptr<Embedder> emb;
    if (pc.embeddings.kind == "hash") {
        emb = std::make_shared<mock::HashEmbedder>(pc.embeddings.dim);
    } else if (pc.embeddings.kind == "openai") {
        emb = std::make_shared<live::OpenAiEmbedder>(pc.embeddings);
    } else if (pc.embeddings.kind != "none") {
        throw unknown("embeddings", pc.embeddings.kind);
    }
    if (emb) p.embedder = std::make_shared<ResilientEmbedder>(emb, policy, limiter);

    std::shared_ptr<Reranker> rr;
    if (pc.reranker.kind == "overlap") {
        rr = std::make_shared<mock::OverlapReranker>();
    } else if (pc.reranker.kind == "http") {
        rr = std::make_shared<live::HttpReranker>(pc.reranker);
    } else if (pc.reranker.kind != "none") {
        throw unknown("reranker", pc.reranker.kind);
    }
    if (rr) p.reranker = std::make_shared<ResilientReranker>(rr, policy, limiter);

    std::shared_ptr<SearchEngine> search;
    if (pc.search.kind == "fixture") {
        search = web_fixture();
    } else if (pc.search.kind == "searxng") {
        search = std::make_shared<live::SearxngSearch>(pc.search);
    } else {
        throw unknown("search", pc.search.kind);
    }
    p.search = std::make_shared<ResilientSearch>(search, policy, limiter);

    std::shared_ptr<PageSource> pages;
    if (pc.fetch.kind == "fixture") {
        pages = web_fixture();
    } else if (pc.fetch.kind == "http") {
        pages = std::make_shared<live::HttpPages>(pc.fetch.timeout_s);
    } else {
        throw unknown("fetch", pc.fetch.kind);
    }
    p.pages = std::make_shared<CappedPages>(pages, limiter);

    if (cfg.fixed_clock) {
        p.clock = std::make_shared<FixedClock>(*cfg.fixed_clock);
    } else {
        p.clock = std::make_shared<SystemClock>();
    }
    return p;
}

/// Loads the persisted index when present, otherwise ingests the corpus.
inline std::shared_ptr<const KnowledgeBase> load_knowledge(const PipelineConfig& cfg, Embedder* embedder)
{
    auto kb = std::make_shared<KnowledgeBase>();
    std::error_code ec;
    const std::string signature = embedder ? embedder->signature() : "";
    if (!cfg.index_path.empty() && std::filesystem::exists(cfg.index_path, ec)) {
        auto [snap, idx] = load_index(cfg.index_path, signature);
        kb->snapshot = std::move(snap);
        kb->indexes = std::move(idx);
    } else if (!cfg.corpus_path.empty() && std::filesystem::is_directory(cfg.corpus_path, ec)) {
        kb->snapshot = ingest_directory(cfg.corpus_path, cfg.chunking);
        if (embedder) {
            kb->indexes = build_indexes(kb->snapshot, *embedder, cfg.retrieval.bm25);
        } else {
            std::vector<IndexedText> docs;
            for (const auto& c : kb->snapshot.children()) docs.push_back({c.child_id, kb->snapshot.indexed_text(c)});
            kb->indexes.keyword = KeywordIndex(docs, cfg.retrieval.bm25);
        }
    }
    return kb;
}

inline std::shared_ptr<Engine> make_engine(const PipelineConfig& cfg, ProviderSet providers)
{
    validate(cfg);
    auto kb = load_knowledge(cfg, providers.embedder.get());
    Safelist sl;
    std::error_code ec;
    if (!cfg.safelist_path.empty() && std::filesystem::exists(cfg.safelist_path, ec)) {
        sl = load_safelist(cfg.safelist_path);
    }
    return std::make_shared<Engine>(cfg, std::move(providers), std::move(kb), std::move(sl));
}

inline std::shared_ptr<Engine> make_engine(const PipelineConfig& cfg) { return make_engine(cfg, make_providers(cfg)); }

}  // namespace priha
