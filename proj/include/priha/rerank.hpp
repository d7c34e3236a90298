// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "priha/corpus.hpp"
#include "priha/error.hpp"
#include "priha/providers.hpp"
#include "priha/retrieval.hpp"

namespace priha {

inline constexpr double kRrfK = 60.0;

struct RankedEntry {
    ParentChunk parent;
    std::string best_child_id;
    double rerank_score = 0.0;
    DocumentMeta meta;
};

using RankedContext = std::vector<RankedEntry>;

/// Scores every hit with the cross-encoder. `child_text` maps a child id to
/// the text sent to the reranker. Any provider failure, or a reply of the
/// wrong shape, surfaces as RerankerUnavailable.
template <typename TextOf>
std::vector<Scored> rerank_external(std::string_view query, std::span<const CandidateHit> hits, Reranker& client,
                                    TextOf&& child_text)
{
    if (hits.empty()) {
        throw Error(Errc::InvalidArgument, "rerank_external requires at least one hit");
    }
    std::vector<std::string> docs;
    docs.reserve(hits.size());
    for (const auto& h : hits) docs.push_back(child_text(h.child_id));

    std::vector<double> scores;
    try {
        scores = client.score(query, docs);
    } catch (const Error& e) {
        throw Error(Errc::RerankerUnavailable, e.what());
    }
    if (scores.size() != hits.size()) {
        throw Error(Errc::RerankerUnavailable, "reranker returned " + std::to_string(scores.size())
                                                   + " scores for " + std::to_string(hits.size()) + " documents");
    }
    std::vector<Scored> out;
    out.reserve(hits.size());
    for (std::size_t i = 0; i < hits.size(); ++i) {
        out.push_back({hits[i].child_id, std::clamp(scores[i], 0.0, 1.0)});
    }
    sort_ranked(out);
    return out;
}

/// Reciprocal Rank Fusion with k = 60; ranks are 1-based positions in each
/// input list. Only the first occurrence of an id in a list counts.
inline std::vector<Scored> fuse_fallback(std::span<const Scored> kw_ranked, std::span<const Scored> sem_ranked)
{
    std::map<std::string, double> fused;
    for (const auto list : {kw_ranked, sem_ranked}) {
        std::unordered_map<std::string, bool> seen;
        for (std::size_t i = 0; i < list.size(); ++i) {
            if (!seen.emplace(list[i].id, true).second) continue;
            fused[list[i].id] += 1.0 / (kRrfK + static_cast<double>(i + 1));
        }
    }
    std::vector<Scored> out;
    out.reserve(fused.size());
    for (const auto& [id, score] : fused) out.push_back({id, score});
    sort_ranked(out);
    return out;
}

/// First `k` items (in input order) whose score is at least `min_score`.
template <typename T>
std::vector<T> topk_filter(std::span<const T> ranked, std::size_t k, double min_score)
{
    if (k < 1) {
        throw Error(Errc::InvalidArgument, "topk_filter requires k >= 1");
    }
    std::vector<T> out;
    for (const auto& item : ranked) {
        if (out.size() == k) break;
        if (item.score >= min_score) out.push_back(item);
    }
    return out;
}

inline std::vector<Scored> topk_filter(const std::vector<Scored>& ranked, std::size_t k, double min_score)
{
    return topk_filter<Scored>(std::span<const Scored>(ranked), k, min_score);
}

/// Maps children to their parents, keeping each parent once with its best
/// child. Ordered by descending best-child score, then parent id.
inline RankedContext resolve_parents(std::span<const Scored> filtered, const RepositorySnapshot& snapshot)
{
    std::map<std::string, std::size_t> slot;
    RankedContext out;
    for (const auto& s : filtered) {
        const auto* child = snapshot.find_child(s.id);
        if (!child) {
            throw Error(Errc::UnknownChild, s.id);
        }
        auto it = slot.find(child->parent_id);
        if (it != slot.end()) {
            auto& entry = out[it->second];
            if (s.score > entry.rerank_score) {
                entry.rerank_score = s.score;
                entry.best_child_id = s.id;
            }
            continue;
        }
        const auto* parent = snapshot.find_parent(child->parent_id);
        const auto* doc = parent ? snapshot.find_document(parent->doc_id) : nullptr;
        if (!parent || !doc) {
            throw Error(Errc::UnknownChild, s.id + " (dangling parent)");
        }
        slot.emplace(child->parent_id, out.size());
        out.push_back({*parent, s.id, s.score, doc->meta});
    }
    std::stable_sort(out.begin(), out.end(), [](const RankedEntry& a, const RankedEntry& b) {
        if (a.rerank_score != b.rerank_score) return a.rerank_score > b.rerank_score;
        return a.parent.parent_id < b.parent.parent_id;
    });
    return out;
}

}  // namespace priha
