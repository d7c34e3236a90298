// SPDX-License-Identifier: Apache-2.0
#pragma once

/// Deterministic stand-ins for every provider. Each mock is a pure function
/// of its inputs and its fixture set, so identical runs produce identical
/// transcripts.
///
/// Fixture directory layout:
///
///   llm/<tag>.txt             scripted replies for prompts tagged [TAG:<tag>]
///   search/<query-slug>.json  [{"url", "title", "snippet"}, ...]
///   web/<host>/<path>.html    page body (status 200)
///   web/<host>/<path>.status  optional status code override (first line)
///   web/<host>/<path>.redirect  "<status> <location>" or "<location>"
///   web/<host>/<path>.timeout   page times out
///
/// A path maps to a fixture stem by dropping the leading '/' and any query
/// string, stripping a trailing .html/.htm, and using "index" for "/" or a
/// trailing '/'. A host without a directory is a DNS failure; a missing
/// stem is a 404.
///
/// Script files hold rules separated by header lines:
///
///   === match: needle one && needle two
///   reply text...
///   === default
///   fallback reply...
///
/// The first rule whose needles all occur in the concatenated prompt wins.
/// A reply of `!!unreachable`, `!!ratelimit` or `!!toolong` raises the
/// corresponding provider error. `{{cite:needle}}` in a reply expands to the
/// `[n]` marker of the evidence block whose header line contains `needle`;
/// `{{json:prefix}}` expands to the JSON-escaped remainder of the first prompt
/// line that starts with `prefix`.
///
/// search/_fallback.json, if present, answers queries without their own file.

#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "priha/corpus.hpp"
#include "priha/error.hpp"
#include "priha/providers.hpp"
#include "priha/retrieval.hpp"
#include "priha/text.hpp"

namespace priha::mock {

// ---------------------------------------------------------------------------
// Chat
// ---------------------------------------------------------------------------

struct ScriptRule {
    std::vector<std::string> needles;  // empty = default
    std::string reply;
};

inline std::vector<ScriptRule> parse_script(std::string_view src)
{
    std::vector<ScriptRule> rules;
    ScriptRule* current = nullptr;
    std::string body;
    const auto flush = [&] {
        if (current) {
            while (!body.empty() && (body.back() == '\n' || body.back() == '\r')) body.pop_back();
            current->reply = body;
        }
        body.clear();
    };
    for (auto line : detail::split_lines(src)) {
        if (line.starts_with("=== ")) {
            flush();
            ScriptRule rule;
            auto header = text::trim(line.substr(4));
            if (header.starts_with("match:")) {
                auto rest = header.substr(6);
                std::size_t pos = 0;
                while (pos <= rest.size()) {
                    auto amp = rest.find("&&", pos);
                    auto needle = text::trim(rest.substr(pos, amp == std::string_view::npos ? rest.npos : amp - pos));
                    if (!needle.empty()) rule.needles.emplace_back(needle);
                    if (amp == std::string_view::npos) break;
                    pos = amp + 2;
                }
            } else if (header != "default") {
                throw Error(Errc::InvalidConfig, "bad script header: " + std::string(line));
            }
            rules.push_back(std::move(rule));
            current = &rules.back();
            continue;
        }
        if (current) {
            body.append(line);
            body.push_back('\n');
        }
    }
    flush();
    return rules;
}

/// Expands `{{cite:needle}}` placeholders against evidence headers of the
/// form `[n] (tier ...` found in the prompt.
inline std::string expand_citations(std::string reply, std::string_view prompt)
{
    for (;;) {
        auto open = reply.find("{{cite:");
        if (open == std::string::npos) break;
        auto close = reply.find("}}", open);
        if (close == std::string::npos) break;
        const auto needle = reply.substr(open + 7, close - open - 7);
        std::string marker = "[?]";
        for (auto line : detail::split_lines(prompt)) {
            if (line.starts_with("[") && line.find("] (tier") != std::string_view::npos
                && line.find(needle) != std::string_view::npos) {
                marker = std::string(line.substr(0, line.find(']') + 1));
                break;
            }
        }
        reply.replace(open, close + 2 - open, marker);
    }
    return reply;
}

/// Expands `{{json:prefix}}` placeholders from prompt lines.
inline std::string expand_fields(std::string reply, std::string_view prompt)
{
    for (std::size_t from = 0;;) {
        auto open = reply.find("{{json:", from);
        if (open == std::string::npos) break;
        auto close = reply.find("}}", open);
        if (close == std::string::npos) break;
        const auto prefix = reply.substr(open + 7, close - open - 7);
        std::string value;
        for (auto line : detail::split_lines(prompt)) {
            if (line.starts_with(prefix)) {
                value = std::string(text::trim(line.substr(prefix.size())));
                break;
            }
        }
        auto escaped = nlohmann::json(value).dump();
        escaped = escaped.substr(1, escaped.size() - 2);
        reply.replace(open, close + 2 - open, escaped);
        from = open + escaped.size();
    }
    return reply;
}

using ChatHandler = std::function<std::string(const ChatRequest&)>;

/// Replies are looked up by the request's `[TAG:...]`. Handlers registered
/// with `on_tag` take precedence over script rules.
class ScriptedChat final : public ChatModel {
public:
    ScriptedChat() = default;

    static std::shared_ptr<ScriptedChat> from_directory(const std::filesystem::path& dir)
    {
        auto chat = std::make_shared<ScriptedChat>();
        std::error_code ec;
        if (!std::filesystem::is_directory(dir, ec)) return chat;
        for (const auto& entry : std::filesystem::directory_iterator(dir)) {
            if (entry.path().extension() == ".txt") {
                chat->script(entry.path().stem().string(), parse_script(read_file(entry.path())));
            }
        }
        return chat;
    }

    ScriptedChat& script(std::string tag, std::vector<ScriptRule> rules)
    {
        auto& dst = rules_[std::move(tag)];
        std::move(rules.begin(), rules.end(), std::back_inserter(dst));
        return *this;
    }

    ScriptedChat& on(std::string tag, std::vector<std::string> needles, std::string reply)
    {
        rules_[std::move(tag)].push_back({std::move(needles), std::move(reply)});
        return *this;
    }

    ScriptedChat& on_tag(std::string tag, ChatHandler handler)
    {
        handlers_[std::move(tag)] = std::move(handler);
        return *this;
    }

    std::size_t calls() const
    {
        std::lock_guard lock(mu_);
        return calls_;
    }

    std::size_t calls(const std::string& tag) const
    {
        std::lock_guard lock(mu_);
        auto it = per_tag_.find(tag);
        return it == per_tag_.end() ? 0 : it->second;
    }

    ChatResponse complete(const ChatRequest& req) override
    {
        const auto tag = req.tag();
        {
            std::lock_guard lock(mu_);
            ++calls_;
            ++per_tag_[tag];
        }
        std::string reply;
        if (auto h = handlers_.find(tag); h != handlers_.end()) {
            reply = h->second(req);
        } else {
            reply = lookup(tag, req);
        }
        if (reply == "!!unreachable") throw Error(Errc::ProviderUnreachable, "scripted outage for " + tag);
        if (reply == "!!ratelimit") throw Error(Errc::RateLimited, "scripted rate limit for " + tag);
        if (reply == "!!toolong") throw Error(Errc::ContextTooLong, "scripted context overflow for " + tag);
        ChatResponse resp;
        resp.text = std::move(reply);
        resp.prompt_tokens = static_cast<int>(req.total_chars() / 4);
        resp.completion_tokens = static_cast<int>(resp.text.size() / 4);
        return resp;
    }

private:
    std::string lookup(const std::string& tag, const ChatRequest& req) const
    {
        auto it = rules_.find(tag);
        if (it == rules_.end()) {
            throw Error(Errc::NoFixture, "no scripted replies for tag '" + tag + "'");
        }
        std::string prompt;
        for (const auto& m : req.messages) {
            prompt += m.content;
            prompt += '\n';
        }
        for (const auto& rule : it->second) {
            const bool hit = std::all_of(rule.needles.begin(), rule.needles.end(),
                                         [&](const std::string& n) { return prompt.find(n) != std::string::npos; });
            if (hit) return expand_citations(expand_fields(rule.reply, prompt), prompt);
        }
        throw Error(Errc::NoFixture, "no scripted reply matched for tag '" + tag + "'");
    }

    std::map<std::string, std::vector<ScriptRule>> rules_;
    std::map<std::string, ChatHandler> handlers_;
    mutable std::mutex mu_;
    std::size_t calls_ = 0;
    std::map<std::string, std::size_t> per_tag_;
};

// ---------------------------------------------------------------------------
// Embeddings
// ---------------------------------------------------------------------------

/// Hashed bag-of-words: each token goes to bucket fnv1a64(token) % dim,
/// counts accumulate, and the vector is L2-normalized. A text without tokens
/// hashes its raw bytes into a single bucket.
class HashEmbedder final : public Embedder {
public:
    explicit HashEmbedder(std::size_t dim = 256) : dim_(dim) {}

    static std::size_t bucket(std::string_view token, std::size_t dim) { return text::fnv1a64(token) % dim; }

    std::vector<Embedding> embed(const std::vector<std::string>& texts) override
    {
        if (texts.empty()) {
            throw Error(Errc::InvalidArgument, "embed_texts requires at least one text");
        }
        std::vector<Embedding> out;
        out.reserve(texts.size());
        for (const auto& t : texts) {
            Embedding v(dim_, 0.0);
            const auto tokens = text::tokenize(t);
            if (tokens.empty()) {
                v[bucket(t, dim_)] = 1.0;
            }
            for (const auto& tok : tokens) v[bucket(tok, dim_)] += 1.0;
            out.push_back(l2_normalized(std::move(v)));
        }
        return out;
    }

    std::string signature() const override { return "hash-bow-" + std::to_string(dim_); }

private:
    std::size_t dim_;
};

// ---------------------------------------------------------------------------
// Reranker
// ---------------------------------------------------------------------------

/// Scores documents by the fraction of distinct query tokens they contain.
class OverlapReranker final : public Reranker {
public:
    std::vector<double> score(std::string_view query, const std::vector<std::string>& documents) override
    {
        auto q = text::tokenize(query);
        std::set<std::string> terms(q.begin(), q.end());
        std::vector<double> out;
        for (const auto& d : documents) {
            auto toks = text::tokenize(d);
            std::set<std::string> present(toks.begin(), toks.end());
            std::size_t overlap = 0;
            for (const auto& t : terms) overlap += present.count(t);
            out.push_back(terms.empty() ? 0.0 : static_cast<double>(overlap) / static_cast<double>(terms.size()));
        }
        return out;
    }
};

// ---------------------------------------------------------------------------
// Web
// ---------------------------------------------------------------------------

struct Page {
    int status = 200;
    std::string body;
    std::string location;  // for redirects
    std::string content_type = "text/html";
    bool timeout = false;
};

inline std::string page_stem(std::string_view path)
{
    auto p = path.substr(0, path.find('?'));
    while (!p.empty() && p.front() == '/') p.remove_prefix(1);
    std::string stem(p);
    if (stem.empty() || stem.back() == '/') stem += "index";
    for (std::string_view ext : {".html", ".htm"}) {
        if (stem.size() > ext.size() && stem.ends_with(ext)) {
            stem.resize(stem.size() - ext.size());
            break;
        }
    }
    return stem;
}

/// In-memory web: search results keyed by query slug, pages keyed by host
/// and path stem. Serves both the SearchEngine and PageSource contracts.
class FixtureWeb final : public SearchEngine, public PageSource {
public:
    FixtureWeb() = default;

    static std::shared_ptr<FixtureWeb> from_directory(const std::filesystem::path& dir)
    {
        namespace fs = std::filesystem;
        auto web = std::make_shared<FixtureWeb>();
        std::error_code ec;
        if (fs::is_directory(dir / "search", ec)) {
            for (const auto& entry : fs::directory_iterator(dir / "search")) {
                if (entry.path().extension() != ".json") continue;
                auto j = nlohmann::json::parse(read_file(entry.path()), nullptr, false);
                if (j.is_discarded() || !j.is_array()) {
                    throw Error(Errc::InvalidConfig, "bad search fixture " + entry.path().string());
                }
                std::vector<SearchResult> results;
                for (const auto& r : j) {
                    results.push_back({r.at("url"), r.value("title", ""), r.value("snippet", ""), 1});
                }
                if (entry.path().stem() == "_fallback") {
                    web->set_search_fallback([results](std::string_view) { return results; });
                } else {
                    web->add_results_for_slug(entry.path().stem().string(), std::move(results));
                }
            }
        }
        if (fs::is_directory(dir / "web", ec)) {
            for (const auto& host_dir : fs::directory_iterator(dir / "web")) {
                if (!host_dir.is_directory()) continue;
                const auto host = host_dir.path().filename().string();
                web->hosts_.insert(host);
                for (const auto& f : fs::recursive_directory_iterator(host_dir.path())) {
                    if (!f.is_regular_file()) continue;
                    auto rel = fs::relative(f.path(), host_dir.path()).generic_string();
                    const auto ext = f.path().extension().string();
                    auto stem = rel.substr(0, rel.size() - ext.size());
                    auto& page = web->pages_[host + "/" + stem];
                    if (ext == ".html" || ext == ".htm") {
                        page.body = read_file(f.path());
                    } else if (ext == ".txt") {
                        page.body = read_file(f.path());
                        page.content_type = "text/plain";
                    } else if (ext == ".status") {
                        page.status = std::stoi(std::string(text::trim(read_file(f.path()))));
                    } else if (ext == ".redirect") {
                        auto redirect = std::string(text::trim(read_file(f.path())));
                        page.status = 301;
                        if (auto sp = redirect.find(' '); sp != std::string::npos && sp <= 3) {
                            page.status = std::stoi(redirect.substr(0, sp));
                            redirect = std::string(text::trim(redirect.substr(sp + 1)));
                        }
                        page.location = redirect;
                    } else if (ext == ".timeout") {
                        page.timeout = true;
                    }
                }
            }
        }
        return web;
    }

    void add_results(std::string_view query, std::vector<SearchResult> results)
    {
        add_results_for_slug(text::slugify(query), std::move(results));
    }

    void add_results_for_slug(std::string slug, std::vector<SearchResult> results)
    {
        for (std::size_t i = 0; i < results.size(); ++i) results[i].rank = static_cast<int>(i + 1);
        results_[std::move(slug)] = std::move(results);
    }

    void add_page(std::string_view url, Page page)
    {
        auto u = parse_url(url);
        if (!u) throw Error(Errc::InvalidUrl, std::string(url));
        hosts_.insert(u->host);
        pages_[u->host + "/" + page_stem(u->path)] = std::move(page);
    }

    void add_host(std::string host) { hosts_.insert(std::move(host)); }

    /// Fallback for queries without a fixture (used by randomized tests).
    void set_search_fallback(std::function<std::vector<SearchResult>(std::string_view)> fn)
    {
        fallback_ = std::move(fn);
    }

    std::vector<SearchResult> search(std::string_view query) override
    {
        {
            std::lock_guard lock(mu_);
            ++searches_;
        }
        if (text::trim(query).empty()) {
            throw Error(Errc::InvalidArgument, "web_search requires a non-empty query");
        }
        auto it = results_.find(text::slugify(query));
        if (it != results_.end()) return it->second;
        if (fallback_) {
            auto r = fallback_(query);
            for (std::size_t i = 0; i < r.size(); ++i) r[i].rank = static_cast<int>(i + 1);
            return r;
        }
        throw Error(Errc::NoFixture, "no search fixture for '" + std::string(query) + "' (slug "
                                         + text::slugify(query) + ")");
    }

    HttpHop get(const Url& url) override
    {
        {
            std::lock_guard lock(mu_);
            ++gets_;
        }
        if (!hosts_.count(url.host)) {
            throw Error(Errc::DnsFailure, url.host);
        }
        auto it = pages_.find(url.host + "/" + page_stem(url.path));
        if (it == pages_.end()) {
            return {404, "", "", "text/html"};
        }
        const auto& page = it->second;
        if (page.timeout) {
            throw Error(Errc::Timeout, url.str());
        }
        return {page.status, page.location, page.body, page.content_type};
    }

    std::size_t search_calls() const
    {
        std::lock_guard lock(mu_);
        return searches_;
    }
    std::size_t get_calls() const
    {
        std::lock_guard lock(mu_);
        return gets_;
    }

private:
    std::map<std::string, std::vector<SearchResult>> results_;
    std::map<std::string, Page> pages_;
    std::set<std::string> hosts_;
    std::function<std::vector<SearchResult>(std::string_view)> fallback_;
    mutable std::mutex mu_;
    std::size_t searches_ = 0;
    std::size_t gets_ = 0;
};

}  // namespace priha::mock
