// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "priha/corpus.hpp"
#include "priha/error.hpp"
#include "priha/query_optimizer.hpp"
#include "priha/reconciler.hpp"
#include "priha/retrieval.hpp"
#include "priha/web_agent.hpp"

namespace priha {

enum class PipelineMode { zeroshot, local_only, web_only, dual };

inline std::string_view to_string(PipelineMode m)
{
    switch (m) {
    case PipelineMode::zeroshot: return "zeroshot";
    case PipelineMode::local_only: return "local_only";
    case PipelineMode::web_only: return "web_only";
    case PipelineMode::dual: return "dual";
    }
    return "dual";
}

inline PipelineMode parse_mode(std::string_view s)
{
    for (auto m : {PipelineMode::zeroshot, PipelineMode::local_only, PipelineMode::web_only, PipelineMode::dual}) {
        if (to_string(m) == s) return m;
    }
    throw Error(Errc::InvalidArgument, "unknown mode '" + std::string(s) + "' (zeroshot, local_only, web_only, dual)");
}

inline bool uses_local(PipelineMode m) { return m == PipelineMode::local_only || m == PipelineMode::dual; }
inline bool uses_web(PipelineMode m) { return m == PipelineMode::web_only || m == PipelineMode::dual; }

struct RetrievalConfig {
    std::size_t pool_size = 50;
    std::size_t k = 6;
    double min_score_rrf = 0.0;
    double min_score_reranker = 0.30;
    Bm25Params bm25;
};

/// One external service. `kind` selects the implementation: "mock" (or the
/// kind-specific mock name) for fixtures, otherwise a live wire protocol.
struct EndpointConfig {
    std::string kind;
    std::string endpoint;
    std::string model;
    std::string api_key_env;
    double timeout_s = 10.0;
    std::size_t dim = 256;  // embeddings only

    std::string api_key() const
    {
        if (api_key_env.empty()) return {};
        const char* v = std::getenv(api_key_env.c_str());
        return v ? v : "";
    }
};

struct ProvidersConfig {
    std::size_t max_concurrent = 8;
    int max_retries = 2;
    int backoff_ms = 200;
    std::size_t max_context_chars = 200000;
    std::filesystem::path fixtures_dir;
    EndpointConfig chat{"mock", "", "", "PRIHA_LLM_KEY", 60.0};
    std::optional<EndpointConfig> judge;
    EndpointConfig embeddings{"hash", "", "", "PRIHA_LLM_KEY", 60.0};
    EndpointConfig reranker{"none", "", "", "PRIHA_LLM_KEY", 10.0};
    EndpointConfig search{"fixture", "", "", "", 10.0};
    EndpointConfig fetch{"fixture", "", "", "", 10.0};
    int max_redirects = 5;
};

struct PipelineConfig {
    PipelineMode mode = PipelineMode::dual;
    std::filesystem::path corpus_path;
    std::filesystem::path safelist_path;
    std::filesystem::path index_path;
    std::filesystem::path state_dir = "state";
    ChunkingConfig chunking;
    RetrievalConfig retrieval;
    OptimizerConfig optimizer;
    AgentConfig agent;
    AssemblyConfig reconciler;
    ProvidersConfig providers;
    std::optional<Timestamp> fixed_clock;
};

namespace detail {

template <typename T>
void read_if(const json& j, const char* key, T& dst)
{
    if (j.contains(key) && !j.at(key).is_null()) dst = j.at(key).get<T>();
}

inline void read_endpoint(const json& j, EndpointConfig& e)
{
    read_if(j, "kind", e.kind);
    read_if(j, "endpoint", e.endpoint);
    read_if(j, "model", e.model);
    read_if(j, "api_key_env", e.api_key_env);
    read_if(j, "timeout_s", e.timeout_s);
    read_if(j, "dim", e.dim);
}

inline json endpoint_json(const EndpointConfig& e)
{
    return {{"kind", e.kind},       {"endpoint", e.endpoint},   {"model", e.model},
            {"api_key_env", e.api_key_env}, {"timeout_s", e.timeout_s}, {"dim", e.dim}};
}

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p)
{
    if (p.empty()) return {};
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
}

}  // namespace detail

/// Checks caps and, when `check_paths` is set, that referenced inputs exist.
inline void validate(const PipelineConfig& c, bool check_paths = true)
{
    validate(c.chunking);
    const auto cap = [](std::size_t v, const char* name) {
        if (v < 1) throw Error(Errc::InvalidConfig, std::string(name) + " must be >= 1");
    };
    cap(c.retrieval.pool_size, "retrieval.pool_size");
    cap(c.retrieval.k, "retrieval.k");
    cap(c.optimizer.max_rounds, "optimizer.max_rounds");
    cap(c.optimizer.max_subqueries, "optimizer.max_subqueries");
    cap(c.agent.max_iterations, "agent.max_iterations");
    cap(c.agent.crawl_budget, "agent.crawl_budget");
    cap(c.agent.excerpt_chars, "agent.excerpt_chars");
    cap(c.agent.max_queries_per_round, "agent.max_queries_per_round");
    cap(c.reconciler.budget_chars, "reconciler.budget_chars");
    cap(c.providers.max_concurrent, "providers.max_concurrent");
    if (c.providers.max_retries < 0) throw Error(Errc::InvalidConfig, "providers.max_retries must be >= 0");
    if (!check_paths) return;
    namespace fs = std::filesystem;
    std::error_code ec;
    if (uses_local(c.mode) && !fs::is_directory(c.corpus_path, ec) && !fs::exists(c.index_path, ec)) {
        throw Error(Errc::InvalidConfig, "corpus_path does not exist: " + c.corpus_path.string());
    }
    if (uses_web(c.mode) && !fs::exists(c.safelist_path, ec)) {
        throw Error(Errc::InvalidConfig, "safelist_path does not exist: " + c.safelist_path.string());
    }
}

/// Parses a config document; relative paths resolve against `base_dir`.
inline PipelineConfig parse_config(const json& j, const std::filesystem::path& base_dir)
{
    PipelineConfig c;
    try {
        if (j.contains("mode")) c.mode = parse_mode(j.at("mode").get<std::string>());
        if (j.contains("corpus_path")) c.corpus_path = detail::resolve(base_dir, j.at("corpus_path").get<std::string>());
        if (j.contains("safelist_path")) c.safelist_path = detail::resolve(base_dir, j.at("safelist_path").get<std::string>());
        if (j.contains("index_path")) c.index_path = detail::resolve(base_dir, j.at("index_path").get<std::string>());
        c.state_dir = detail::resolve(base_dir, j.value("state_dir", std::string("state")));
        if (auto it = j.find("chunking"); it != j.end()) {
            detail::read_if(*it, "parent_words", c.chunking.parent_words);
            detail::read_if(*it, "child_words", c.chunking.child_words);
        }
        if (auto it = j.find("retrieval"); it != j.end()) {
            detail::read_if(*it, "pool_size", c.retrieval.pool_size);
            detail::read_if(*it, "k", c.retrieval.k);
            detail::read_if(*it, "min_score_rrf", c.retrieval.min_score_rrf);
            detail::read_if(*it, "min_score_reranker", c.retrieval.min_score_reranker);
            detail::read_if(*it, "bm25_k1", c.retrieval.bm25.k1);
            detail::read_if(*it, "bm25_b", c.retrieval.bm25.b);
        }
        if (auto it = j.find("optimizer"); it != j.end()) {
            detail::read_if(*it, "max_rounds", c.optimizer.max_rounds);
            detail::read_if(*it, "max_subqueries", c.optimizer.max_subqueries);
            detail::read_if(*it, "clarification", c.optimizer.clarification);
        }
        if (auto it = j.find("agent"); it != j.end()) {
            detail::read_if(*it, "max_iterations", c.agent.max_iterations);
            detail::read_if(*it, "crawl_budget", c.agent.crawl_budget);
            detail::read_if(*it, "excerpt_chars", c.agent.excerpt_chars);
            detail::read_if(*it, "min_content_chars", c.agent.min_content_chars);
            detail::read_if(*it, "max_queries_per_round", c.agent.max_queries_per_round);
        }
        if (auto it = j.find("reconciler"); it != j.end()) {
            detail::read_if(*it, "budget_chars", c.reconciler.budget_chars);
        }
        if (auto it = j.find("providers"); it != j.end()) {
            auto& p = c.providers;
            detail::read_if(*it, "max_concurrent", p.max_concurrent);
            detail::read_if(*it, "max_retries", p.max_retries);
            detail::read_if(*it, "backoff_ms", p.backoff_ms);
            detail::read_if(*it, "max_context_chars", p.max_context_chars);
            detail::read_if(*it, "max_redirects", p.max_redirects);
            if (it->contains("fixtures_dir")) {
                p.fixtures_dir = detail::resolve(base_dir, it->at("fixtures_dir").get<std::string>());
            }
            if (it->contains("chat")) detail::read_endpoint(it->at("chat"), p.chat);
            if (it->contains("judge") && !it->at("judge").is_null()) {
                EndpointConfig judge = p.chat;
                detail::read_endpoint(it->at("judge"), judge);
                p.judge = judge;
            }
            if (it->contains("embeddings")) detail::read_endpoint(it->at("embeddings"), p.embeddings);
            if (it->contains("reranker")) detail::read_endpoint(it->at("reranker"), p.reranker);
            if (it->contains("search")) detail::read_endpoint(it->at("search"), p.search);
            if (it->contains("fetch")) detail::read_endpoint(it->at("fetch"), p.fetch);
        }
        c.agent.fetch.max_redirects = c.providers.max_redirects;
        if (j.contains("clock") && !j.at("clock").is_null()) {
            auto t = text::parse_timestamp(j.at("clock").get<std::string>());
            if (!t) throw Error(Errc::InvalidConfig, "clock must be an ISO-8601 timestamp");
            c.fixed_clock = *t;
        }
    } catch (const json::exception& e) {
        throw Error(Errc::InvalidConfig, e.what());
    }
    return c;
}

inline PipelineConfig load_config(const std::filesystem::path& path)
{
    auto j = json::parse(read_file(path), nullptr, false, true);
    if (j.is_discarded() || !j.is_object()) {
        throw Error(Errc::InvalidConfig, "config is not a JSON object: " + path.string());
    }
    auto base = path.parent_path();
    if (base.empty()) base = ".";
    return parse_config(j, base);
}

inline json config_to_json(const PipelineConfig& c)
{
    json j = {{"mode", to_string(c.mode)},
              {"corpus_path", c.corpus_path.string()},
              {"safelist_path", c.safelist_path.string()},
              {"index_path", c.index_path.string()},
              {"state_dir", c.state_dir.string()},
              {"chunking", {{"parent_words", c.chunking.parent_words}, {"child_words", c.chunking.child_words}}},
              {"retrieval",
               {{"pool_size", c.retrieval.pool_size},
                {"k", c.retrieval.k},
                {"min_score_rrf", c.retrieval.min_score_rrf},
                {"min_score_reranker", c.retrieval.min_score_reranker},
                {"bm25_k1", c.retrieval.bm25.k1},
                {"bm25_b", c.retrieval.bm25.b}}},
              {"optimizer",
               {{"max_rounds", c.optimizer.max_rounds},
                {"max_subqueries", c.optimizer.max_subqueries},
                {"clarification", c.optimizer.clarification}}},
              {"agent",
               {{"max_iterations", c.agent.max_iterations},
                {"crawl_budget", c.agent.crawl_budget},
                {"excerpt_chars", c.agent.excerpt_chars},
                {"min_content_chars", c.agent.min_content_chars},
                {"max_queries_per_round", c.agent.max_queries_per_round}}},
              {"reconciler", {{"budget_chars", c.reconciler.budget_chars}}}};
    const auto& p = c.providers;
    j["providers"] = {{"max_concurrent", p.max_concurrent},
                      {"max_retries", p.max_retries},
                      {"backoff_ms", p.backoff_ms},
                      {"max_context_chars", p.max_context_chars},
                      {"max_redirects", p.max_redirects},
                      {"fixtures_dir", p.fixtures_dir.string()},
                      {"chat", detail::endpoint_json(p.chat)},
                      {"judge", p.judge ? detail::endpoint_json(*p.judge) : json(nullptr)},
                      {"embeddings", detail::endpoint_json(p.embeddings)},
                      {"reranker", detail::endpoint_json(p.reranker)},
                      {"search", detail::endpoint_json(p.search)},
                      {"fetch", detail::endpoint_json(p.fetch)}};
    j["clock"] = c.fixed_clock ? json(text::format_timestamp(*c.fixed_clock)) : json(nullptr);
    return j;
}

}  // namespace priha
