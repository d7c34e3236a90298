// SPDX-License-Identifier: Apache-2.0
#pragma once

/// Per-question orchestration: local and web channels for every sub-query,
/// fanned out concurrently, then reconciliation into one cited answer.

#include <atomic>
#include <future>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "priha/config.hpp"
#include "priha/corpus.hpp"
#include "priha/error.hpp"
#include "priha/providers.hpp"
#include "priha/query_optimizer.hpp"
#include "priha/reconciler.hpp"
#include "priha/rerank.hpp"
#include "priha/retrieval.hpp"
#include "priha/web_agent.hpp"

namespace priha {

struct ProviderSet {
    std::shared_ptr<ChatModel> chat;
    std::shared_ptr<ChatModel> judge;  // defaults to chat when null
    std::shared_ptr<Embedder> embedder;
    std::shared_ptr<Reranker> reranker;  // null selects the RRF path
    std::shared_ptr<SearchEngine> search;
    std::shared_ptr<PageSource> pages;
    std::shared_ptr<Clock> clock;
};

/// Immutable corpus snapshot and its indexes, shared across sessions.
struct KnowledgeBase {
    RepositorySnapshot snapshot;
    Indexes indexes;
};

struct PipelineResult {
    FinalResponse response;
    json trace;
    std::vector<EvidenceItem> evidence;
};

namespace detail {

inline json scored_json(const std::vector<Scored>& v)
{
    json out = json::array();
    for (const auto& s : v) out.push_back({{"id", s.id}, {"score", s.score}});
    return out;
}

inline json error_json(const Error& e) { return {{"code", to_string(e.code())}, {"detail", e.detail()}}; }

}  // namespace detail

class Engine {
public:
    Engine(PipelineConfig cfg, ProviderSet providers, std::shared_ptr<const KnowledgeBase> kb, Safelist safelist)
        : cfg_(std::move(cfg)), p_(std::move(providers)), kb_(std::move(kb)), safelist_(std::move(safelist))
    {
        if (!p_.chat || !p_.clock) throw Error(Errc::InvalidConfig, "engine needs a chat model and a clock");
        if (!kb_) kb_ = std::make_shared<KnowledgeBase>();
    }

    const PipelineConfig& config() const { return cfg_; }
    const ProviderSet& providers() const { return p_; }
    const KnowledgeBase& knowledge() const { return *kb_; }
    const Safelist& safelist() const { return safelist_; }

    /// Local channel for one query: keyword and semantic pools, merged,
    /// scored by the reranker (or fused by RRF), thresholded, grouped into
    /// parents and cut to k.
    RankedContext retrieve_local(std::string_view query, json& trace, std::atomic<std::size_t>& index_queries) const
    {
        const auto& rc = cfg_.retrieval;
        const auto& snap = kb_->snapshot;
        ++index_queries;
        auto kw = keyword_search(kb_->indexes.keyword, query, rc.pool_size);
        std::vector<Scored> sem;
        if (p_.embedder) {
            ++index_queries;
            sem = semantic_search(kb_->indexes.vector, query, *p_.embedder, rc.pool_size);
        }
        trace["keyword_hits"] = detail::scored_json(kw);
        trace["semantic_hits"] = detail::scored_json(sem);
        auto pool = merge_pools(kw, sem);
        trace["pool_size"] = pool.size();
        if (pool.empty()) {
            trace["scoring"] = "none";
            trace["parents"] = json::array();
            return {};
        }

        std::vector<Scored> ranked;
        double threshold = rc.min_score_rrf;
        std::string scoring = "rrf";
        if (p_.reranker) {
            try {
                ranked = rerank_external(query, pool, *p_.reranker, [&](const std::string& id) {
                    const auto* child = snap.find_child(id);
                    return child ? snap.indexed_text(*child) : std::string();
                });
                threshold = rc.min_score_reranker;
                scoring = "reranker";
            } catch (const Error& e) {
                if (e.code() != Errc::RerankerUnavailable) throw;
                trace["reranker_error"] = detail::error_json(e);
            }
        }
        if (scoring == "rrf") ranked = fuse_fallback(kw, sem);
        trace["scoring"] = scoring;
        trace["threshold"] = threshold;

        auto kept = topk_filter(ranked, ranked.size(), threshold);
        auto ctx = resolve_parents(kept, snap);
        if (ctx.size() > rc.k) ctx.resize(rc.k);
        json parents = json::array();
        for (const auto& e : ctx) {
            parents.push_back({{"parent_id", e.parent.parent_id},
                               {"best_child_id", e.best_child_id},
                               {"score", e.rerank_score},
                               {"title", e.meta.title}});
        }
        trace["parents"] = std::move(parents);
        return ctx;
    }

    /// Runs the selected channels for every sub-query and reconciles.
    PipelineResult run(const ClarifiedIntent& intent, PipelineMode mode, const UserProfile& profile) const
    {
        const auto& clock = *p_.clock;
        const double t0 = clock.monotonic_ms();
        if (mode != PipelineMode::zeroshot && intent.sub_queries.empty()) {
            throw Error(Errc::InvalidArgument, "intent has no sub-queries");
        }
        const bool local = uses_local(mode);
        const bool web = uses_web(mode);
        if (web && (!p_.search || !p_.pages)) throw Error(Errc::InvalidConfig, "web channel needs search and pages");

        std::atomic<std::size_t> index_queries{0};
        const std::size_t n = mode == PipelineMode::zeroshot ? 0 : intent.sub_queries.size();

        struct Slot {
            RankedContext local;
            std::vector<WebEvidence> web;
            json local_trace = json::object();
            json web_trace = json::object();
            bool local_failed = false;
            bool web_failed = false;
            std::size_t searches = 0;
            std::size_t fetches = 0;
        };
        std::vector<Slot> slots(n);
        std::vector<std::future<void>> tasks;
        for (std::size_t i = 0; i < n; ++i) {
            const auto& sq = intent.sub_queries[i];
            auto& slot = slots[i];
            if (local) {
                tasks.push_back(std::async(std::launch::async, [&, i] {
                    (void)i;
                    try {
                        slot.local = retrieve_local(sq.text, slot.local_trace, index_queries);
                    } catch (const Error& e) {
                        slot.local_failed = true;
                        slot.local_trace["error"] = detail::error_json(e);
                    }
                }));
            }
            if (web) {
                tasks.push_back(std::async(std::launch::async, [&] {
                    try {
                        auto r = run_agent_loop(sq.text, safelist_, AgentTools{*p_.search, *p_.pages, *p_.chat, clock},
                                                cfg_.agent);
                        slot.searches = r.searches;
                        slot.fetches = r.fetches;
                        slot.web_trace = {{"rounds", r.trace}, {"evidence", r.evidence}};
                        slot.web = std::move(r.evidence);
                    } catch (const Error& e) {
                        slot.web_failed = true;
                        slot.web_trace["error"] = detail::error_json(e);
                    }
                }));
            }
        }
        for (auto& t : tasks) t.get();
        const double t_retrieval = clock.monotonic_ms();

        LocalContext local_ctx;
        WebEvidenceSet web_ctx;
        json subs = json::array();
        std::size_t searches = 0, fetches = 0, failed = 0, attempted = 0;
        for (std::size_t i = 0; i < n; ++i) {
            auto& s = slots[i];
            json entry = intent.sub_queries[i];
            if (local) {
                entry["local"] = std::move(s.local_trace);
                local_ctx.push_back(std::move(s.local));
                ++attempted;
                failed += s.local_failed;
            }
            if (web) {
                entry["web"] = std::move(s.web_trace);
                web_ctx.push_back(std::move(s.web));
                ++attempted;
                failed += s.web_failed;
            }
            searches += s.searches;
            fetches += s.fetches;
            subs.push_back(std::move(entry));
        }
        if (mode == PipelineMode::dual && attempted > 0 && failed == attempted) {
            throw Error(Errc::PipelineFailed, "every local and web channel failed");
        }

        std::vector<EvidenceItem> items;
        if (mode != PipelineMode::zeroshot) items = assemble_context(local_ctx, web_ctx, profile, cfg_.reconciler);
        auto validated = reconcile(intent, items, profile, *p_.chat, mode == PipelineMode::zeroshot);
        const double t_end = clock.monotonic_ms();

        json order = json::array();
        for (const auto& e : items) order.push_back(e);
        json trace = {{"mode", to_string(mode)},
                      {"intent", intent},
                      {"sub_queries", std::move(subs)},
                      {"reconciler", {{"evidence", std::move(order)}, {"repairs", validated.repairs}}},
                      {"calls",
                       {{"index_queries", index_queries.load()}, {"web_searches", searches}, {"web_fetches", fetches}}},
                      {"timings_ms", {{"retrieval", t_retrieval - t0}, {"reconcile", t_end - t_retrieval}}}};
        return {std::move(validated.response), std::move(trace), std::move(items)};
    }

private:
    PipelineConfig cfg_;
    ProviderSet p_;
    std::shared_ptr<const KnowledgeBase> kb_;
    Safelist safelist_;
};

/// Checks that a trace honours its mode: local_only never touches the web,
/// web_only never queries the index, zeroshot does neither.
inline bool mode_discipline_ok(const json& trace, const FinalResponse& resp)
{
    const auto mode = parse_mode(trace.at("mode").get<std::string>());
    const auto& calls = trace.at("calls");
    const auto iq = calls.at("index_queries").get<std::size_t>();
    const auto ws = calls.at("web_searches").get<std::size_t>();
    const auto wf = calls.at("web_fetches").get<std::size_t>();
    bool ok = true;
    if (!uses_local(mode)) ok = ok && iq == 0;
    if (!uses_web(mode)) ok = ok && ws == 0 && wf == 0;
    for (const auto& c : resp.references) {
        if (c.kind == Origin::local && !uses_local(mode)) ok = false;
        if (c.kind == Origin::web && !uses_web(mode)) ok = false;
    }
    return ok;
}

}  // namespace priha
