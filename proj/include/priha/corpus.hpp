// SPDX-License-Identifier: Apache-2.0
#pragma once

/// Markdown corpus ingestion: front-matter metadata, heading-aware parent
/// chunks and fixed-size child chunks.
///
/// A parent's `text` is `context_prefix + body`, where the prefix is the
/// document title and heading path of the enclosing section. Children are
/// contiguous slices of the body part, so every child is a substring of its
/// parent and the bodies of all parents cover the document body exactly.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "priha/error.hpp"
#include "priha/text.hpp"

namespace priha {

struct DocumentMeta {
    std::string title;
    std::string source_url;
    int authority_tier = 2;  // 0 government-certified, 1 other official, 2 general
    Date updated_time{};
    std::string language = "und";

    friend bool operator==(const DocumentMeta&, const DocumentMeta&) = default;
};

struct Document {
    std::string doc_id;
    std::string path;  // relative to the corpus root, '/' separated
    DocumentMeta meta;
    std::string body;
};

struct ParentChunk {
    std::string parent_id;
    std::string doc_id;
    std::vector<std::string> heading_path;
    std::string text;
    std::size_t ordinal = 0;
    std::size_t prefix_bytes = 0;  // length of the prepended heading context in `text`

    std::string_view body() const { return std::string_view(text).substr(prefix_bytes); }
};

struct ChildChunk {
    std::string child_id;
    std::string parent_id;
    std::string text;
    std::size_t ordinal = 0;
};

struct ChunkingConfig {
    std::size_t parent_words = 800;
    std::size_t child_words = 150;
};

struct Chunks {
    std::vector<ParentChunk> parents;
    std::vector<ChildChunk> children;
};

// ---------------------------------------------------------------------------
// Front matter
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string_view> split_lines(std::string_view s)
{
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start <= s.size()) {
        auto nl = s.find('\n', start);
        if (nl == std::string_view::npos) {
            if (start < s.size()) {
                lines.push_back(s.substr(start));
            }
            break;
        }
        auto line = s.substr(start, nl - start);
        if (!line.empty() && line.back() == '\r') {
            line.remove_suffix(1);
        }
        lines.push_back(line);
        start = nl + 1;
    }
    return lines;
}

inline std::string unquote(std::string_view v)
{
    v = text::trim(v);
    if (v.size() >= 2 && ((v.front() == '"' && v.back() == '"') || (v.front() == '\'' && v.back() == '\''))) {
        v = v.substr(1, v.size() - 2);
    }
    return std::string(v);
}

}  // namespace detail

/// Splits `raw` into metadata and body. The file must open with a `---` line;
/// the block ends at the next `---` line.
inline std::pair<DocumentMeta, std::string> parse_front_matter(std::string_view raw)
{
    if (raw.starts_with("\xEF\xBB\xBF")) {
        raw.remove_prefix(3);
    }
    auto first_nl = raw.find('\n');
    auto first = text::trim(raw.substr(0, first_nl));
    if (first != "---" || first_nl == std::string_view::npos) {
        throw Error(Errc::MissingFrontMatter, "document does not start with a '---' block");
    }

    std::map<std::string, std::string> fields;
    std::size_t pos = first_nl + 1;
    bool closed = false;
    while (pos <= raw.size()) {
        auto nl = raw.find('\n', pos);
        auto line = raw.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? raw.size() + 1 : nl + 1;
        if (text::trim(line) == "---") {
            closed = true;
            break;
        }
        auto trimmed = text::trim(line);
        if (trimmed.empty() || trimmed.front() == '#') {
            continue;
        }
        auto colon = trimmed.find(':');
        if (colon == std::string_view::npos) {
            throw Error(Errc::MissingFrontMatter, "malformed front-matter line: " + std::string(trimmed));
        }
        fields[std::string(text::trim(trimmed.substr(0, colon)))] = detail::unquote(trimmed.substr(colon + 1));
    }
    if (!closed) {
        throw Error(Errc::MissingFrontMatter, "front-matter block is not closed");
    }

    const auto require = [&](const char* key) -> const std::string& {
        auto it = fields.find(key);
        if (it == fields.end() || it->second.empty()) {
            throw Error(Errc::MissingField, key);
        }
        return it->second;
    };

    DocumentMeta meta;
    meta.title = require("title");
    meta.source_url = require("source_url");
    const auto& tier = require("authority_tier");
    if (tier != "0" && tier != "1" && tier != "2") {
        throw Error(Errc::BadTier, "authority_tier must be 0, 1 or 2, got '" + tier + "'");
    }
    meta.authority_tier = tier[0] - '0';
    const auto& date = require("updated_time");
    auto parsed = text::parse_date(date);
    if (!parsed) {
        throw Error(Errc::BadDate, "updated_time is not a valid ISO-8601 date: '" + date + "'");
    }
    meta.updated_time = *parsed;
    if (auto it = fields.find("language"); it != fields.end() && !it->second.empty()) {
        meta.language = it->second;
    }

    std::string body = pos > raw.size() ? std::string() : std::string(raw.substr(pos));
    if (!text::is_valid_utf8(body)) {
        throw Error(Errc::InvalidUtf8, "document body is not valid UTF-8");
    }
    return {std::move(meta), std::move(body)};
}

inline std::string make_doc_id(std::string_view path, std::string_view body)
{
    return text::hex64(text::fnv1a64(body, text::fnv1a64(std::string(path) + '\0')));
}

// ---------------------------------------------------------------------------
// Chunking
// ---------------------------------------------------------------------------

namespace detail {

struct Section {
    std::vector<std::string> heading_path;
    std::size_t begin = 0;  // byte range within the body, heading line included
    std::size_t end = 0;
};

/// ATX heading level of a line (0 when not a heading).
inline int heading_level(std::string_view line, std::string* title)
{
    std::size_t lead = 0;
    while (lead < line.size() && lead < 3 && line[lead] == ' ') {
        ++lead;
    }
    std::size_t hashes = 0;
    while (lead + hashes < line.size() && line[lead + hashes] == '#') {
        ++hashes;
    }
    if (hashes == 0 || hashes > 6) {
        return 0;
    }
    auto rest = line.substr(lead + hashes);
    if (!rest.empty() && rest.front() != ' ' && rest.front() != '\t') {
        return 0;
    }
    auto t = text::trim(rest);
    while (!t.empty() && t.back() == '#') {
        t.remove_suffix(1);
    }
    if (title) {
        *title = std::string(text::trim(t));
    }
    return static_cast<int>(hashes);
}

inline std::vector<Section> split_sections(std::string_view body)
{
    std::vector<Section> sections;
    std::vector<std::pair<int, std::string>> stack;
    Section current;
    bool in_fence = false;
    std::size_t pos = 0;
    while (pos < body.size()) {
        auto nl = body.find('\n', pos);
        const auto line_end = nl == std::string_view::npos ? body.size() : nl;
        auto line = body.substr(pos, line_end - pos);
        auto trimmed = text::trim(line);
        if (trimmed.starts_with("```") || trimmed.starts_with("~~~")) {
            in_fence = !in_fence;
        }
        std::string title;
        const int level = in_fence ? 0 : heading_level(line, &title);
        if (level > 0) {
            current.end = pos;
            sections.push_back(current);
            while (!stack.empty() && stack.back().first >= level) {
                stack.pop_back();
            }
            stack.emplace_back(level, title);
            current = Section{};
            for (const auto& [lvl, heading] : stack) {
                current.heading_path.push_back(heading);
            }
            current.begin = pos;
        }
        pos = nl == std::string_view::npos ? body.size() : nl + 1;
    }
    current.end = body.size();
    sections.push_back(current);

    std::erase_if(sections, [&](const Section& s) { return text::word_count(body.substr(s.begin, s.end - s.begin)) == 0; });
    return sections;
}

/// Packs the tokens of one section into pieces of at most `cap` tokens,
/// preferring to break at blank-line paragraph boundaries.
inline std::vector<std::pair<std::size_t, std::size_t>>
pack_tokens(std::string_view s, const std::vector<text::TokenSpan>& spans, std::size_t cap)
{
    std::vector<std::pair<std::size_t, std::size_t>> pieces;  // token index ranges [first, last)
    std::size_t first = 0;
    std::size_t last_break = 0;  // token index after which a paragraph ends
    for (std::size_t i = 0; i < spans.size(); ++i) {
        if (i > first) {
            auto gap = s.substr(spans[i - 1].end, spans[i].begin - spans[i - 1].end);
            if (std::count(gap.begin(), gap.end(), '\n') >= 2) {
                last_break = i;
            }
        }
        if (i - first == cap) {
            const std::size_t cut = last_break > first ? last_break : i;
            pieces.emplace_back(first, cut);
            first = cut;
            last_break = first;
        }
    }
    if (first < spans.size()) {
        pieces.emplace_back(first, spans.size());
    }
    return pieces;
}

inline std::string pad_ordinal(std::size_t n)
{
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04zu", n);
    return buf;
}

}  // namespace detail

inline void validate(const ChunkingConfig& cfg)
{
    if (cfg.child_words < 20 || cfg.parent_words < 20 || cfg.child_words >= cfg.parent_words) {
        throw Error(Errc::InvalidConfig, "chunking requires 20 <= child_words < parent_words");
    }
}

inline Chunks chunk_document(const Document& doc, const ChunkingConfig& cfg)
{
    validate(cfg);
    const std::string_view body = doc.body;
    if (text::trim(body).empty()) {
        throw Error(Errc::EmptyDocument, doc.path.empty() ? doc.doc_id : doc.path);
    }

    Chunks out;
    for (const auto& section : detail::split_sections(body)) {
        const auto slice = body.substr(section.begin, section.end - section.begin);
        const auto spans = text::whitespace_spans(slice);

        std::string prefix = doc.meta.title;
        for (const auto& h : section.heading_path) {
            if (h != doc.meta.title) {
                prefix += " > " + h;
            }
        }
        prefix += "\n\n";

        for (const auto& [first, last] : detail::pack_tokens(slice, spans, cfg.parent_words)) {
            ParentChunk parent;
            parent.ordinal = out.parents.size();
            parent.parent_id = doc.doc_id + ":p" + detail::pad_ordinal(parent.ordinal);
            parent.doc_id = doc.doc_id;
            parent.heading_path = section.heading_path;
            parent.prefix_bytes = prefix.size();
            const auto b = spans[first].begin;
            const auto e = spans[last - 1].end;
            parent.text = prefix + std::string(slice.substr(b, e - b));

            const auto pbody = parent.body();
            const auto pspans = text::whitespace_spans(pbody);
            for (std::size_t c = 0, ord = 0; c < pspans.size(); c += cfg.child_words, ++ord) {
                const auto stop = std::min(c + cfg.child_words, pspans.size());
                ChildChunk child;
                child.ordinal = ord;
                child.parent_id = parent.parent_id;
                child.child_id = parent.parent_id + ":c" + detail::pad_ordinal(ord);
                child.text = std::string(pbody.substr(pspans[c].begin, pspans[stop - 1].end - pspans[c].begin));
                out.children.push_back(std::move(child));
            }
            out.parents.push_back(std::move(parent));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Repository snapshot
// ---------------------------------------------------------------------------

struct IngestError {
    std::string path;
    std::string message;
};

struct SnapshotStats {
    std::size_t documents = 0;
    std::size_t parents = 0;
    std::size_t children = 0;
    std::size_t errors = 0;
};

/// Immutable after construction; safe for concurrent readers.
class RepositorySnapshot {
public:
    RepositorySnapshot() = default;

    RepositorySnapshot(std::vector<Document> docs, Chunks chunks, std::vector<IngestError> errors)
        : docs_(std::move(docs)), chunks_(std::move(chunks)), errors_(std::move(errors))
    {
        reindex();
    }

    const std::vector<Document>& documents() const { return docs_; }
    const std::vector<ParentChunk>& parents() const { return chunks_.parents; }
    const std::vector<ChildChunk>& children() const { return chunks_.children; }
    const std::vector<IngestError>& errors() const { return errors_; }

    SnapshotStats stats() const
    {
        return {docs_.size(), chunks_.parents.size(), chunks_.children.size(), errors_.size()};
    }

    const ChildChunk* find_child(std::string_view id) const { return lookup(child_at_, chunks_.children, id); }
    const ParentChunk* find_parent(std::string_view id) const { return lookup(parent_at_, chunks_.parents, id); }
    const Document* find_document(std::string_view id) const { return lookup(doc_at_, docs_, id); }

    /// Text used for indexing a child: the parent's heading context followed
    /// by the child slice, so facts stated only in titles stay retrievable.
    std::string indexed_text(const ChildChunk& child) const
    {
        const auto* parent = find_parent(child.parent_id);
        if (!parent) {
            return child.text;
        }
        return parent->text.substr(0, parent->prefix_bytes) + child.text;
    }

private:
    template <typename T>
    static const T* lookup(const std::unordered_map<std::string, std::size_t>& at, const std::vector<T>& v,
                           std::string_view id)
    {
        auto it = at.find(std::string(id));
        return it == at.end() ? nullptr : &v[it->second];
    }

    void reindex()
    {
        for (std::size_t i = 0; i < docs_.size(); ++i) doc_at_[docs_[i].doc_id] = i;
        for (std::size_t i = 0; i < chunks_.parents.size(); ++i) parent_at_[chunks_.parents[i].parent_id] = i;
        for (std::size_t i = 0; i < chunks_.children.size(); ++i) child_at_[chunks_.children[i].child_id] = i;
    }

    std::vector<Document> docs_;
    Chunks chunks_;
    std::vector<IngestError> errors_;
    std::unordered_map<std::string, std::size_t> doc_at_;
    std::unordered_map<std::string, std::size_t> parent_at_;
    std::unordered_map<std::string, std::size_t> child_at_;
};

inline std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(Errc::IoError, "cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline Document load_document(const std::filesystem::path& file, std::string relative_path)
{
    auto [meta, body] = parse_front_matter(read_file(file));
    Document doc;
    doc.doc_id = make_doc_id(relative_path, body);
    doc.path = std::move(relative_path);
    doc.meta = std::move(meta);
    doc.body = std::move(body);
    return doc;
}

/// Loads every `.md` file under `root` (recursively) in lexicographic order
/// of relative path. Per-file failures are recorded in the snapshot and do
/// not abort the batch.
inline RepositorySnapshot ingest_directory(const std::filesystem::path& root, const ChunkingConfig& cfg)
{
    namespace fs = std::filesystem;
    validate(cfg);
    std::error_code ec;
    if (!fs::is_directory(root, ec)) {
        throw Error(Errc::IoError, "corpus directory does not exist: " + root.string());
    }

    std::vector<std::string> files;
    for (auto it = fs::recursive_directory_iterator(root, ec); !ec && it != fs::recursive_directory_iterator();
         it.increment(ec)) {
        if (it->is_regular_file() && it->path().extension() == ".md") {
            files.push_back(fs::relative(it->path(), root).generic_string());
        }
    }
    if (ec) {
        throw Error(Errc::IoError, "cannot list " + root.string() + ": " + ec.message());
    }
    std::sort(files.begin(), files.end());

    std::vector<Document> docs;
    Chunks all;
    std::vector<IngestError> errors;
    for (const auto& rel : files) {
        try {
            auto doc = load_document(root / rel, rel);
            auto chunks = chunk_document(doc, cfg);
            std::move(chunks.parents.begin(), chunks.parents.end(), std::back_inserter(all.parents));
            std::move(chunks.children.begin(), chunks.children.end(), std::back_inserter(all.children));
            docs.push_back(std::move(doc));
        } catch (const Error& e) {
            errors.push_back({rel, e.what()});
        }
    }
    return RepositorySnapshot(std::move(docs), std::move(all), std::move(errors));
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

inline void to_json(nlohmann::json& j, const DocumentMeta& m)
{
    j = {{"title", m.title},
         {"source_url", m.source_url},
         {"authority_tier", m.authority_tier},
         {"updated_time", text::format_date(m.updated_time)},
         {"language", m.language}};
}

inline void from_json(const nlohmann::json& j, DocumentMeta& m)
{
    m.title = j.at("title").get<std::string>();
    m.source_url = j.at("source_url").get<std::string>();
    m.authority_tier = j.at("authority_tier").get<int>();
    auto d = text::parse_date(j.at("updated_time").get<std::string>());
    if (!d) {
        throw Error(Errc::BadDate, j.at("updated_time").get<std::string>());
    }
    m.updated_time = *d;
    m.language = j.value("language", "und");
}

inline nlohmann::json snapshot_to_json(const RepositorySnapshot& snap)
{
    nlohmann::json docs = nlohmann::json::array();
    for (const auto& d : snap.documents()) {
        docs.push_back({{"doc_id", d.doc_id}, {"path", d.path}, {"meta", d.meta}, {"body", d.body}});
    }
    nlohmann::json parents = nlohmann::json::array();
    for (const auto& p : snap.parents()) {
        parents.push_back({{"parent_id", p.parent_id},
                           {"doc_id", p.doc_id},
                           {"heading_path", p.heading_path},
                           {"text", p.text},
                           {"ordinal", p.ordinal},
                           {"prefix_bytes", p.prefix_bytes}});
    }
    nlohmann::json children = nlohmann::json::array();
    for (const auto& c : snap.children()) {
        children.push_back(
            {{"child_id", c.child_id}, {"parent_id", c.parent_id}, {"text", c.text}, {"ordinal", c.ordinal}});
    }
    nlohmann::json errors = nlohmann::json::array();
    for (const auto& e : snap.errors()) {
        errors.push_back({{"path", e.path}, {"message", e.message}});
    }
    return {{"documents", docs}, {"parents", parents}, {"children", children}, {"errors", errors}};
}

inline RepositorySnapshot snapshot_from_json(const nlohmann::json& j)
{
    std::vector<Document> docs;
    for (const auto& d : j.at("documents")) {
        docs.push_back({d.at("doc_id"), d.at("path"), d.at("meta").get<DocumentMeta>(), d.at("body")});
    }
    Chunks chunks;
    for (const auto& p : j.at("parents")) {
        chunks.parents.push_back({p.at("parent_id"), p.at("doc_id"), p.at("heading_path"), p.at("text"),
                                  p.at("ordinal"), p.at("prefix_bytes")});
    }
    for (const auto& c : j.at("children")) {
        chunks.children.push_back({c.at("child_id"), c.at("parent_id"), c.at("text"), c.at("ordinal")});
    }
    std::vector<IngestError> errors;
    for (const auto& e : j.at("errors")) {
        errors.push_back({e.at("path"), e.at("message")});
    }
    return RepositorySnapshot(std::move(docs), std::move(chunks), std::move(errors));
}

}  // namespace priha
