// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "priha/corpus.hpp"
#include "priha/error.hpp"
#include "priha/providers.hpp"
#include "priha/text.hpp"

namespace priha {

/// A (child id, score) pair in a ranked list.
struct Scored {
    std::string id;
    double score = 0.0;

    friend bool operator==(const Scored&, const Scored&) = default;
};

/// Descending score, ascending id on ties.
inline void sort_ranked(std::vector<Scored>& v)
{
    std::sort(v.begin(), v.end(), [](const Scored& a, const Scored& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.id < b.id;
    });
}

struct IndexedText {
    std::string id;
    std::string text;
};

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;
};

/// Okapi BM25 over an inverted index of child chunks.
///
///   score(D, Q) = sum_{t in Q} idf(t) * tf(t,D) * (k1 + 1) / (tf(t,D) + k1 * (1 - b + b * |D| / avgdl))
///   idf(t)      = ln(1 + (N - n_t + 0.5) / (n_t + 0.5))
///
/// Query terms are deduplicated before scoring.
class KeywordIndex {
public:
    struct Posting {
        std::uint32_t doc;
        std::uint32_t tf;
    };

    KeywordIndex() = default;

    explicit KeywordIndex(std::span<const IndexedText> docs, Bm25Params params = {}) : params_(params)
    {
        ids_.reserve(docs.size());
        lengths_.reserve(docs.size());
        std::size_t total = 0;
        for (std::uint32_t d = 0; d < docs.size(); ++d) {
            ids_.push_back(docs[d].id);
            const auto tokens = text::tokenize(docs[d].text);
            lengths_.push_back(static_cast<std::uint32_t>(tokens.size()));
            total += tokens.size();
            std::map<std::string, std::uint32_t> tf;
            for (const auto& t : tokens) ++tf[t];
            for (const auto& [term, count] : tf) postings_[term].push_back({d, count});
        }
        avgdl_ = docs.empty() ? 0.0 : static_cast<double>(total) / static_cast<double>(docs.size());
    }

    std::size_t size() const { return ids_.size(); }
    double avgdl() const { return avgdl_; }
    const Bm25Params& params() const { return params_; }
    const std::vector<std::string>& ids() const { return ids_; }
    const std::vector<std::uint32_t>& lengths() const { return lengths_; }
    const std::unordered_map<std::string, std::vector<Posting>>& postings() const { return postings_; }

    double idf(std::size_t n_t) const
    {
        const auto N = static_cast<double>(ids_.size());
        const auto n = static_cast<double>(n_t);
        return std::log(1.0 + (N - n + 0.5) / (n + 0.5));
    }

    std::vector<Scored> search(std::string_view query, std::size_t limit) const
    {
        if (limit < 1) {
            throw Error(Errc::InvalidArgument, "keyword_search limit must be >= 1");
        }
        auto terms = text::tokenize(query);
        std::sort(terms.begin(), terms.end());
        terms.erase(std::unique(terms.begin(), terms.end()), terms.end());

        std::vector<double> acc(ids_.size(), 0.0);
        std::vector<bool> touched(ids_.size(), false);
        const double k1 = params_.k1;
        const double b = params_.b;
        for (const auto& term : terms) {
            auto it = postings_.find(term);
            if (it == postings_.end()) continue;
            const double w = idf(it->second.size());
            for (const auto& p : it->second) {
                const double tf = p.tf;
                const double norm = 1.0 - b + b * static_cast<double>(lengths_[p.doc]) / avgdl_;
                acc[p.doc] += w * tf * (k1 + 1.0) / (tf + k1 * norm);
                touched[p.doc] = true;
            }
        }
        std::vector<Scored> out;
        for (std::size_t d = 0; d < acc.size(); ++d) {
            if (touched[d] && acc[d] > 0.0) out.push_back({ids_[d], acc[d]});
        }
        sort_ranked(out);
        if (out.size() > limit) out.resize(limit);
        return out;
    }

    nlohmann::json to_json() const
    {
        nlohmann::json postings = nlohmann::json::object();
        for (const auto& [term, list] : postings_) {
            auto& arr = postings[term] = nlohmann::json::array();
            for (const auto& p : list) arr.push_back({p.doc, p.tf});
        }
        return {{"k1", params_.k1}, {"b", params_.b}, {"ids", ids_}, {"lengths", lengths_},
                {"avgdl", avgdl_}, {"postings", postings}};
    }

    static KeywordIndex from_json(const nlohmann::json& j)
    {
        KeywordIndex idx;
        idx.params_ = {j.at("k1").get<double>(), j.at("b").get<double>()};
        idx.ids_ = j.at("ids").get<std::vector<std::string>>();
        idx.lengths_ = j.at("lengths").get<std::vector<std::uint32_t>>();
        idx.avgdl_ = j.at("avgdl").get<double>();
        for (const auto& [term, arr] : j.at("postings").items()) {
            auto& list = idx.postings_[term];
            for (const auto& p : arr) list.push_back({p.at(0).get<std::uint32_t>(), p.at(1).get<std::uint32_t>()});
        }
        return idx;
    }

private:
    Bm25Params params_;
    std::vector<std::string> ids_;
    std::vector<std::uint32_t> lengths_;
    double avgdl_ = 0.0;
    std::unordered_map<std::string, std::vector<Posting>> postings_;
};

inline Embedding l2_normalized(Embedding v)
{
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm > 0.0) {
        for (double& x : v) x /= norm;
    }
    return v;
}

inline double dot(std::span<const double> a, std::span<const double> b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) s += a[i] * b[i];
    return s;
}

/// Exact cosine search by linear scan over unit vectors.
class VectorIndex {
public:
    VectorIndex() = default;

    void add(std::string id, Embedding v)
    {
        v = l2_normalized(std::move(v));
        if (dim_ == 0) {
            dim_ = v.size();
        } else if (v.size() != dim_) {
            throw Error(Errc::EmbeddingProviderError, "dimension mismatch for " + id);
        }
        ids_.push_back(std::move(id));
        vectors_.push_back(std::move(v));
    }

    std::size_t size() const { return ids_.size(); }
    std::size_t dimension() const { return dim_; }
    const std::vector<std::string>& ids() const { return ids_; }
    const std::vector<Embedding>& vectors() const { return vectors_; }

    std::vector<Scored> search(const Embedding& query, std::size_t limit) const
    {
        if (limit < 1) {
            throw Error(Errc::InvalidArgument, "semantic_search limit must be >= 1");
        }
        const auto q = l2_normalized(query);
        std::vector<Scored> out;
        out.reserve(ids_.size());
        for (std::size_t i = 0; i < ids_.size(); ++i) {
            out.push_back({ids_[i], std::clamp(dot(q, vectors_[i]), -1.0, 1.0)});
        }
        sort_ranked(out);
        if (out.size() > limit) out.resize(limit);
        return out;
    }

    nlohmann::json to_json() const { return {{"dim", dim_}, {"ids", ids_}, {"vectors", vectors_}}; }

    static VectorIndex from_json(const nlohmann::json& j)
    {
        VectorIndex idx;
        const auto ids = j.at("ids").get<std::vector<std::string>>();
        const auto vecs = j.at("vectors").get<std::vector<Embedding>>();
        // Stored vectors are already unit length; re-normalizing would perturb the last bits.
        for (std::size_t i = 0; i < ids.size(); ++i) {
            const auto& v = vecs.at(i);
            if (i == 0) idx.dim_ = v.size();
            if (v.size() != idx.dim_) throw Error(Errc::EmbeddingProviderError, "dimension mismatch for " + ids[i]);
            idx.ids_.push_back(ids[i]);
            idx.vectors_.push_back(v);
        }
        return idx;
    }

private:
    std::size_t dim_ = 0;
    std::vector<std::string> ids_;
    std::vector<Embedding> vectors_;
};

struct Indexes {
    KeywordIndex keyword;
    VectorIndex vector;
    std::string embedder_signature;
};

/// Indexes every child of the snapshot in both structures. Embedding calls
/// are batched; a failing batch is retried item by item so the error names
/// the offending child.
inline Indexes build_indexes(const RepositorySnapshot& snapshot, Embedder& embedder, Bm25Params params = {},
                             std::size_t batch = 32)
{
    std::vector<IndexedText> docs;
    docs.reserve(snapshot.children().size());
    for (const auto& child : snapshot.children()) {
        docs.push_back({child.child_id, snapshot.indexed_text(child)});
    }

    Indexes out;
    out.keyword = KeywordIndex(docs, params);
    out.embedder_signature = embedder.signature();

    for (std::size_t start = 0; start < docs.size(); start += batch) {
        const auto stop = std::min(docs.size(), start + batch);
        std::vector<std::string> texts;
        for (std::size_t i = start; i < stop; ++i) texts.push_back(docs[i].text);
        std::vector<Embedding> vecs;
        try {
            vecs = embedder.embed(texts);
            if (vecs.size() != texts.size()) {
                throw Error(Errc::EmbeddingProviderError, "provider returned wrong number of vectors");
            }
        } catch (const Error&) {
            vecs.clear();
            for (std::size_t i = start; i < stop; ++i) {
                try {
                    auto one = embedder.embed({docs[i].text});
                    if (one.size() != 1) throw Error(Errc::EmbeddingProviderError, "empty reply");
                    vecs.push_back(std::move(one[0]));
                } catch (const Error& e) {
                    throw Error(Errc::EmbeddingProviderError, "child " + docs[i].id + ": " + e.what());
                }
            }
        }
        for (std::size_t i = start; i < stop; ++i) out.vector.add(docs[i].id, std::move(vecs[i - start]));
    }
    return out;
}

inline std::vector<Scored> keyword_search(const KeywordIndex& idx, std::string_view query, std::size_t limit)
{
    return idx.search(query, limit);
}

inline std::vector<Scored> semantic_search(const VectorIndex& idx, std::string_view query, Embedder& embedder,
                                           std::size_t limit)
{
    if (limit < 1) {
        throw Error(Errc::InvalidArgument, "semantic_search limit must be >= 1");
    }
    if (idx.size() == 0) {
        return {};
    }
    std::vector<Embedding> q;
    try {
        q = embedder.embed({std::string(query)});
    } catch (const Error& e) {
        if (e.code() == Errc::ProviderUnreachable) throw;
        throw Error(Errc::EmbeddingProviderError, e.what());
    }
    if (q.size() != 1) {
        throw Error(Errc::EmbeddingProviderError, "query embedding missing");
    }
    return idx.search(q[0], limit);
}

enum class Channel : unsigned { keyword = 1, semantic = 2 };

struct CandidateHit {
    std::string child_id;
    std::optional<double> keyword_score;
    std::optional<double> semantic_score;

    bool in(Channel c) const
    {
        return c == Channel::keyword ? keyword_score.has_value() : semantic_score.has_value();
    }
};

/// Union of both candidate lists keyed by child id, returned in ascending id
/// order (final ordering is the reranker's job).
inline std::vector<CandidateHit> merge_pools(std::span<const Scored> kw, std::span<const Scored> sem)
{
    std::map<std::string, CandidateHit> by_id;
    for (const auto& s : kw) {
        auto& hit = by_id[s.id];
        hit.child_id = s.id;
        if (!hit.keyword_score) hit.keyword_score = s.score;
    }
    for (const auto& s : sem) {
        auto& hit = by_id[s.id];
        hit.child_id = s.id;
        if (!hit.semantic_score) hit.semantic_score = s.score;
    }
    std::vector<CandidateHit> out;
    out.reserve(by_id.size());
    for (auto& [id, hit] : by_id) out.push_back(std::move(hit));
    return out;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

/// Writes snapshot and both indexes as one self-describing JSON document.
inline void save_index(const std::filesystem::path& path, const RepositorySnapshot& snap, const Indexes& idx)
{
    nlohmann::json j = {{"format", "priha-index"},
                        {"version", 1},
                        {"embedder", idx.embedder_signature},
                        {"snapshot", snapshot_to_json(snap)},
                        {"keyword", idx.keyword.to_json()},
                        {"vector", idx.vector.to_json()}};
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(Errc::IoError, "cannot write " + tmp);
        out << j.dump();
        if (!out) throw Error(Errc::IoError, "write failed: " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw Error(Errc::IoError, "cannot rename " + tmp + ": " + ec.message());
}

inline std::pair<RepositorySnapshot, Indexes> load_index(const std::filesystem::path& path,
                                                         std::string_view expected_embedder)
{
    auto j = nlohmann::json::parse(read_file(path), nullptr, false);
    if (j.is_discarded() || j.value("format", "") != "priha-index") {
        throw Error(Errc::IoError, "not an index file: " + path.string());
    }
    if (j.at("embedder").get<std::string>() != expected_embedder) {
        throw Error(Errc::InvalidConfig, "index built with embedder '" + j.at("embedder").get<std::string>()
                                             + "', configured embedder is '" + std::string(expected_embedder) + "'");
    }
    try {
        Indexes idx{KeywordIndex::from_json(j.at("keyword")), VectorIndex::from_json(j.at("vector")),
                    j.at("embedder").get<std::string>()};
        return {snapshot_from_json(j.at("snapshot")), std::move(idx)};
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::IoError, "corrupt index file " + path.string() + ": " + e.what());
    }
}

}  // namespace priha
