// SPDX-License-Identifier: Apache-2.0
#pragma once

/// The dynamic retrieval channel: a bounded plan, search, safelist filter,
/// LLM rerank, crawl/validate, assess loop per sub-query. Every evidence item
/// it returns came from a 2xx fetch whose final URL is on the safelist.

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "priha/corpus.hpp"
#include "priha/error.hpp"
#include "priha/providers.hpp"
#include "priha/text.hpp"

namespace priha {

struct SafelistPattern {
    std::string suffix;  // registrable-domain suffix, lowercase, no scheme or path
    int tier = 0;
};

class Safelist {
public:
    Safelist() = default;
    explicit Safelist(std::vector<SafelistPattern> patterns) : patterns_(std::move(patterns)) {}

    const std::vector<SafelistPattern>& patterns() const { return patterns_; }
    bool empty() const { return patterns_.empty(); }

    /// Most specific pattern matching `host` exactly or at a label boundary.
    std::optional<SafelistPattern> match_host(std::string_view host) const
    {
        std::string h = text::lowercase(host);
        while (!h.empty() && h.back() == '.') h.pop_back();
        std::optional<SafelistPattern> best;
        for (const auto& p : patterns_) {
            const bool hit = h == p.suffix || (h.size() > p.suffix.size() && h.ends_with(p.suffix)
                                               && h[h.size() - p.suffix.size() - 1] == '.');
            if (hit && (!best || p.suffix.size() > best->suffix.size())) best = p;
        }
        return best;
    }

    std::optional<SafelistPattern> match_url(std::string_view url) const
    {
        auto u = parse_url(url);
        return u ? match_host(u->host) : std::nullopt;
    }

private:
    std::vector<SafelistPattern> patterns_;
};

/// `pattern<TAB>tier` per line; `#` comments and blank lines are skipped.
inline Safelist parse_safelist(std::string_view src)
{
    std::vector<SafelistPattern> out;
    std::size_t n = 0;
    for (auto line : detail::split_lines(src)) {
        ++n;
        auto t = text::trim(line);
        if (t.empty() || t.front() == '#') continue;
        auto tab = line.find('\t');
        if (tab == std::string_view::npos) {
            throw Error(Errc::BadLine, "line " + std::to_string(n) + ": expected 'pattern<TAB>tier'");
        }
        auto pattern = text::lowercase(text::trim(line.substr(0, tab)));
        auto tier = text::trim(line.substr(tab + 1));
        if (tier != "0" && tier != "1") {
            throw Error(Errc::BadLine, "line " + std::to_string(n) + ": tier must be 0 or 1");
        }
        const bool bad = pattern.empty() || pattern.find("://") != std::string::npos
                      || pattern.find('/') != std::string::npos || pattern.find(' ') != std::string::npos;
        if (bad) {
            throw Error(Errc::BadLine, "line " + std::to_string(n) + ": pattern must be a bare domain suffix");
        }
        out.push_back({pattern, tier[0] - '0'});
    }
    return Safelist(std::move(out));
}

inline Safelist load_safelist(const std::filesystem::path& path) { return parse_safelist(read_file(path)); }

inline std::vector<SearchResult> filter_safelist(const std::vector<SearchResult>& results, const Safelist& sl)
{
    std::vector<SearchResult> out;
    for (const auto& r : results) {
        if (sl.match_url(r.url)) out.push_back(r);
    }
    return out;
}

struct WebEvidence {
    std::string url;
    std::string final_url;
    std::string title;
    std::string excerpt;
    Timestamp fetched_at{};
    int authority_tier = 0;
    std::string validation_status = "valid";

    friend bool operator==(const WebEvidence&, const WebEvidence&) = default;
};

struct AgentConfig {
    std::size_t max_iterations = 3;
    std::size_t crawl_budget = 3;
    std::size_t excerpt_chars = 2000;
    std::size_t min_content_chars = 50;
    std::size_t max_queries_per_round = 1;
    FetchOptions fetch;
};

struct AgentState {
    std::string goal;
    std::size_t iteration = 0;
    std::string plan_notes;
    std::vector<WebEvidence> evidence;
    std::vector<std::string> gaps;
};

namespace prompts {

inline constexpr std::string_view web_rerank = R"([TAG:web_rerank]
You rank web search results for a healthcare research goal. Every result is already from an
approved domain. Prefer official and certified sources (government departments, the Hospital
Authority, statutory bodies) over others, then the most specific and most recent pages.
Reply with JSON only: {"order": [result numbers, best first]}.)";

inline constexpr std::string_view assess = R"([TAG:assess]
You check whether collected web evidence is sufficient to answer a healthcare research goal.
If information is missing or unreliable, list short web search queries that would fill the gaps.
Reply with JSON only: {"sufficient": true|false, "missing": ["query", ...]}.)";

}  // namespace prompts

/// Result numbers in the prompt are 1-based. Invalid or repeated numbers are
/// dropped; the ordered subset is capped at `budget`. Malformed output falls
/// back to engine order.
inline std::vector<SearchResult> llm_rerank_results(std::string_view goal, const std::vector<SearchResult>& results,
                                                    ChatModel& llm, std::size_t budget)
{
    if (results.empty()) return {};
    std::string user = "Goal: " + std::string(goal) + "\nResults:\n";
    for (std::size_t i = 0; i < results.size(); ++i) {
        user += std::to_string(i + 1) + ". " + results[i].title + " | " + results[i].url + "\n   " + results[i].snippet
              + "\n";
    }
    const Schema schema{"web_rerank", R"({"order": [int]})", [](const json& j) -> std::optional<SchemaViolation> {
                            if (!j.is_object() || !j.contains("order") || !j["order"].is_array()) {
                                return SchemaViolation{"missing array field 'order'"};
                            }
                            for (const auto& v : j["order"]) {
                                if (!v.is_number_integer()) return SchemaViolation{"'order' must contain integers"};
                            }
                            return std::nullopt;
                        }};
    ChatRequest req;
    req.messages = {{Role::system, std::string(prompts::web_rerank)}, {Role::user, user}};
    std::vector<SearchResult> out;
    try {
        auto r = constrained_json(llm, req, schema);
        std::set<long long> seen;
        for (const auto& v : r.value["order"]) {
            const auto idx = v.get<long long>();
            if (idx < 1 || idx > static_cast<long long>(results.size()) || !seen.insert(idx).second) continue;
            out.push_back(results[static_cast<std::size_t>(idx - 1)]);
            if (out.size() == budget) break;
        }
    } catch (const Error& e) {
        if (e.code() != Errc::MalformedModelOutput) throw;
        out.assign(results.begin(), results.begin() + static_cast<std::ptrdiff_t>(std::min(budget, results.size())));
    }
    return out;
}

enum class RejectReason { broken, off_list_redirect, empty_content, timeout };

inline std::string_view to_string(RejectReason r)
{
    switch (r) {
    case RejectReason::broken: return "Broken";
    case RejectReason::off_list_redirect: return "OffListRedirect";
    case RejectReason::empty_content: return "EmptyContent";
    case RejectReason::timeout: return "Timeout";
    }
    return "Broken";
}

struct Rejection {
    RejectReason reason = RejectReason::broken;
    int status = 0;
    std::string url;
    std::string final_url;
    std::string note;
};

using CrawlOutcome = std::variant<WebEvidence, Rejection>;

/// Fetches one result and accepts it only if it answered 2xx, its final URL
/// is still on the safelist, and it yielded enough text.
inline CrawlOutcome crawl_validate(const SearchResult& result, const Safelist& sl, PageSource& pages,
                                   const Clock& clock, const AgentConfig& cfg = {})
{
    FetchOutcome fetched;
    try {
        fetched = fetch_url(result.url, pages, cfg.fetch);
    } catch (const Error& e) {
        if (e.code() == Errc::Timeout) return Rejection{RejectReason::timeout, 0, result.url, "", e.what()};
        if (e.code() == Errc::DnsFailure || e.code() == Errc::TooManyRedirects || e.code() == Errc::InvalidUrl
            || e.code() == Errc::ProviderUnreachable) {
            return Rejection{RejectReason::broken, 0, result.url, "", e.what()};
        }
        throw;
    }
    if (fetched.status < 200 || fetched.status >= 300) {
        return Rejection{RejectReason::broken, fetched.status, result.url, fetched.final_url, ""};
    }
    auto pattern = sl.match_url(fetched.final_url);
    if (!pattern) {
        return Rejection{RejectReason::off_list_redirect, fetched.status, result.url, fetched.final_url, ""};
    }
    if (text::utf8_length(fetched.body) < cfg.min_content_chars) {
        return Rejection{RejectReason::empty_content, fetched.status, result.url, fetched.final_url, ""};
    }
    WebEvidence ev;
    ev.url = result.url;
    ev.final_url = fetched.final_url;
    ev.title = result.title.empty() ? fetched.final_url : result.title;
    ev.excerpt = text::utf8_prefix(fetched.body, cfg.excerpt_chars);
    ev.fetched_at = clock.now();
    ev.authority_tier = pattern->tier;
    return ev;
}

struct Sufficiency {
    bool sufficient = true;
    std::vector<std::string> missing;
};

/// Malformed verdicts count as sufficient, ending the loop.
inline Sufficiency assess_sufficiency(const AgentState& state, ChatModel& llm)
{
    std::string user = "Goal: " + state.goal + "\nIteration: " + std::to_string(state.iteration) + "\n";
    if (state.evidence.empty()) {
        user += "Evidence: none yet\n";
    }
    for (std::size_t i = 0; i < state.evidence.size(); ++i) {
        const auto& e = state.evidence[i];
        user += "Evidence " + std::to_string(i + 1) + ": " + e.title + " | " + e.final_url + "\n"
              + text::utf8_prefix(e.excerpt, 400) + "\n";
    }
    const Schema schema{"assess", R"({"sufficient": bool, "missing": [string]})",
                        [](const json& j) -> std::optional<SchemaViolation> {
                            if (!j.is_object() || !j.contains("sufficient") || !j["sufficient"].is_boolean()) {
                                return SchemaViolation{"missing boolean field 'sufficient'"};
                            }
                            if (j.contains("missing") && !j["missing"].is_array()) {
                                return SchemaViolation{"'missing' must be an array"};
                            }
                            return std::nullopt;
                        }};
    ChatRequest req;
    req.messages = {{Role::system, std::string(prompts::assess)}, {Role::user, user}};
    try {
        auto r = constrained_json(llm, req, schema);
        Sufficiency s;
        s.sufficient = r.value["sufficient"].get<bool>();
        if (r.value.contains("missing")) {
            for (const auto& m : r.value["missing"]) {
                if (m.is_string() && !text::trim(m.get<std::string>()).empty()) {
                    s.missing.emplace_back(text::trim(m.get<std::string>()));
                }
            }
        }
        return s;
    } catch (const Error& e) {
        if (e.code() != Errc::MalformedModelOutput) throw;
        return Sufficiency{true, {}};
    }
}

struct AgentRun {
    std::vector<WebEvidence> evidence;
    std::size_t rounds = 0;
    std::size_t searches = 0;
    std::size_t fetches = 0;
    json trace = json::array();
};

struct AgentTools {
    SearchEngine& search;
    PageSource& pages;
    ChatModel& llm;
    const Clock& clock;
};

/// Runs up to `cfg.max_iterations` rounds for one sub-query. Rejected pages
/// and empty rounds are normal outcomes; only transport failures of search
/// or the model abort (by throwing).
inline AgentRun run_agent_loop(std::string_view sub_query, const Safelist& sl, AgentTools tools,
                               const AgentConfig& cfg = {})
{
    AgentRun run;
    AgentState state;
    state.goal = std::string(sub_query);
    state.plan_notes = "round 1 searches the sub-query; later rounds search the gaps reported by the assessor";

    std::vector<std::string> queries{state.goal};
    std::set<std::string> attempted_urls;
    std::set<std::string> final_urls;

    while (state.iteration < cfg.max_iterations && !queries.empty()) {
        ++state.iteration;
        json round = {{"round", state.iteration}, {"queries", queries}};

        std::vector<SearchResult> candidates;
        std::set<std::string> candidate_urls;
        for (const auto& q : queries) {
            ++run.searches;
            for (auto& r : tools.search.search(q)) {
                if (candidate_urls.insert(r.url).second) candidates.push_back(std::move(r));
            }
        }
        round["results"] = candidates.size();

        auto listed = filter_safelist(candidates, sl);
        std::erase_if(listed, [&](const SearchResult& r) { return attempted_urls.count(r.url) > 0; });
        round["safelisted"] = listed.size();

        auto chosen = llm_rerank_results(state.goal, listed, tools.llm, cfg.crawl_budget);
        json crawls = json::array();
        for (const auto& r : chosen) {
            attempted_urls.insert(r.url);
            ++run.fetches;
            auto outcome = crawl_validate(r, sl, tools.pages, tools.clock, cfg);
            if (auto* ev = std::get_if<WebEvidence>(&outcome)) {
                json c = {{"url", r.url}, {"final_url", ev->final_url}, {"accepted", true}, {"tier", ev->authority_tier}};
                if (final_urls.insert(ev->final_url).second) {
                    state.evidence.push_back(std::move(*ev));
                } else {
                    c["duplicate"] = true;
                }
                crawls.push_back(std::move(c));
            } else {
                const auto& rej = std::get<Rejection>(outcome);
                crawls.push_back({{"url", r.url},
                                  {"final_url", rej.final_url},
                                  {"accepted", false},
                                  {"reason", to_string(rej.reason)},
                                  {"status", rej.status}});
            }
        }
        round["crawls"] = std::move(crawls);

        queries.clear();
        if (state.iteration < cfg.max_iterations) {
            auto verdict = assess_sufficiency(state, tools.llm);
            round["sufficient"] = verdict.sufficient;
            round["missing"] = verdict.missing;
            if (!verdict.sufficient) {
                state.gaps = verdict.missing;
                for (const auto& m : verdict.missing) {
                    if (queries.size() == cfg.max_queries_per_round) break;
                    queries.push_back(m);
                }
                if (queries.empty()) queries.push_back(state.goal);
            }
        }
        run.trace.push_back(std::move(round));
    }
    run.rounds = state.iteration;
    run.evidence = std::move(state.evidence);
    return run;
}

inline void to_json(json& j, const WebEvidence& e)
{
    j = {{"url", e.url},
         {"final_url", e.final_url},
         {"title", e.title},
         {"excerpt", e.excerpt},
         {"fetched_at", text::format_timestamp(e.fetched_at)},
         {"authority_tier", e.authority_tier},
         {"validation_status", e.validation_status}};
}

inline void from_json(const json& j, WebEvidence& e)
{
    e.url = j.at("url").get<std::string>();
    e.final_url = j.at("final_url").get<std::string>();
    e.title = j.at("title").get<std::string>();
    e.excerpt = j.at("excerpt").get<std::string>();
    e.fetched_at = text::parse_timestamp(j.at("fetched_at").get<std::string>()).value_or(Timestamp{});
    e.authority_tier = j.at("authority_tier").get<int>();
    e.validation_status = j.value("validation_status", "valid");
}

}  // namespace priha
