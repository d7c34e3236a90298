// SPDX-License-Identifier: Apache-2.0
#pragma once

/// Evidence reconciliation. The mechanical half (precedence ordering,
/// override instructions, citation validation) is deterministic and fully
/// testable; the generative half is a single synthesis call.

#include <algorithm>
#include <compare>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "priha/corpus.hpp"
#include "priha/error.hpp"
#include "priha/providers.hpp"
#include "priha/query_optimizer.hpp"
#include "priha/rerank.hpp"
#include "priha/text.hpp"
#include "priha/web_agent.hpp"

namespace priha {

using LocalContext = std::vector<RankedContext>;            // one list per sub-query
using WebEvidenceSet = std::vector<std::vector<WebEvidence>>;  // one list per sub-query

struct UserProfile {
    std::vector<std::string> stated_priorities;
    std::vector<std::string> background_facts;
    std::vector<std::string> locale_hints;
};

/// Built from the current session's clarified intent only.
inline UserProfile profile_from_intent(const ClarifiedIntent& intent, std::string_view original_text)
{
    UserProfile p;
    p.stated_priorities = intent.priorities;
    p.background_facts = intent.background_facts;
    p.locale_hints.push_back(text::contains_cjk(original_text) ? "zh-HK" : "en-HK");
    return p;
}

enum class Origin { local, web };

inline std::string_view to_string(Origin o) { return o == Origin::local ? "local" : "web"; }

struct EvidenceItem {
    int eid = 0;
    Origin origin = Origin::local;
    std::string title;
    std::string locator;
    int authority_tier = 2;
    Date date{};
    std::string text;
};

struct PrecedenceKey {
    int tier;
    long long neg_days;  // newer first
    int origin;          // local before web
    int eid;

    friend auto operator<=>(const PrecedenceKey&, const PrecedenceKey&) = default;
};

/// Lower key = higher precedence: authority tier, then recency, then local
/// before web, then eid.
inline PrecedenceKey precedence_key(const EvidenceItem& e)
{
    const auto days = std::chrono::sys_days{e.date}.time_since_epoch().count();
    return {e.authority_tier, -static_cast<long long>(days), e.origin == Origin::local ? 0 : 1, e.eid};
}

struct AssemblyConfig {
    std::size_t budget_chars = 24000;
};

/// Flattens both channels into one precedence-ordered evidence list.
///
/// Items sharing a locator collapse to one: parents of the same local
/// document are merged into a single item (texts joined in rank order),
/// repeated web pages keep their first copy, and a locator present in both
/// channels keeps the higher-precedence copy. Items are then sorted, eids
/// assigned 1..M, and the list truncated to the character budget by dropping
/// whole trailing items (the first item is always kept).
inline std::vector<EvidenceItem> assemble_context(const LocalContext& local, const WebEvidenceSet& web,
                                                  const UserProfile& /*profile*/, const AssemblyConfig& cfg = {})
{
    std::vector<EvidenceItem> items;
    std::map<std::pair<std::string, int>, std::size_t> by_locator;  // (locator, origin) -> index
    std::map<std::pair<std::string, int>, std::set<std::string>> merged_parents;

    for (const auto& ranked : local) {
        for (const auto& entry : ranked) {
            const auto key = std::make_pair(entry.meta.source_url, 0);
            auto it = by_locator.find(key);
            if (it == by_locator.end()) {
                by_locator.emplace(key, items.size());
                merged_parents[key].insert(entry.parent.parent_id);
                items.push_back({0, Origin::local, entry.meta.title, entry.meta.source_url, entry.meta.authority_tier,
                                 entry.meta.updated_time, entry.parent.text});
            } else if (merged_parents[key].insert(entry.parent.parent_id).second) {
                items[it->second].text += "\n\n" + std::string(entry.parent.body());
            }
        }
    }
    for (const auto& list : web) {
        for (const auto& ev : list) {
            const auto key = std::make_pair(ev.final_url, 1);
            if (by_locator.count(key)) continue;
            by_locator.emplace(key, items.size());
            items.push_back({0, Origin::web, ev.title, ev.final_url, ev.authority_tier,
                             Date{std::chrono::floor<std::chrono::days>(ev.fetched_at)}, ev.excerpt});
        }
    }

    const auto before = [](const EvidenceItem& a, const EvidenceItem& b) {
        const auto ka = precedence_key(a);
        const auto kb = precedence_key(b);
        if (ka != kb) return ka < kb;
        if (a.locator != b.locator) return a.locator < b.locator;
        return a.text < b.text;
    };

    // Same locator in both channels: keep only the precedence winner.
    std::vector<EvidenceItem> unique;
    for (auto& item : items) {
        if (item.origin == Origin::web) {
            auto other = by_locator.find({item.locator, 0});
            if (other != by_locator.end() && !before(item, items[other->second])) continue;
        } else {
            auto other = by_locator.find({item.locator, 1});
            if (other != by_locator.end() && before(items[other->second], item)) continue;
        }
        unique.push_back(item);
    }

    std::sort(unique.begin(), unique.end(), before);
    std::vector<EvidenceItem> out;
    std::size_t used = 0;
    for (auto& item : unique) {
        const auto len = text::utf8_length(item.text);
        if (!out.empty() && used + len > cfg.budget_chars) break;
        used += len;
        item.eid = static_cast<int>(out.size() + 1);
        out.push_back(std::move(item));
    }
    return out;
}

struct Citation {
    int eid = 0;
    std::string title;
    std::string locator;
    Origin kind = Origin::local;
    Date date{};

    friend bool operator==(const Citation&, const Citation&) = default;
};

struct FinalResponse {
    std::string answer;
    std::vector<Citation> references;
    std::vector<std::string> disclaimers;

    friend bool operator==(const FinalResponse&, const FinalResponse&) = default;
};

inline constexpr std::string_view kMedicalDisclaimer =
    "This answer is general information, not medical advice. Please consult a doctor or pharmacist about your own situation.";
inline constexpr std::string_view kZeroShotDisclaimer =
    "No sources were consulted for this answer; it is based on general knowledge only.";

// ---------------------------------------------------------------------------
// Citation markers
// ---------------------------------------------------------------------------

/// Every number cited as `[n]` or `[n, m, ...]`, in order of first use.
inline std::vector<int> citation_markers(std::string_view answer)
{
    std::vector<int> out;
    std::set<int> seen;
    for (std::size_t i = 0; i < answer.size(); ++i) {
        if (answer[i] != '[') continue;
        auto close = answer.find(']', i);
        if (close == std::string_view::npos) break;
        auto inner = answer.substr(i + 1, close - i - 1);
        if (inner.empty() || inner.size() > 40) continue;
        std::vector<int> nums;
        bool ok = true;
        std::size_t pos = 0;
        while (pos < inner.size() && ok) {
            while (pos < inner.size() && inner[pos] == ' ') ++pos;
            std::size_t start = pos;
            long long v = 0;
            while (pos < inner.size() && inner[pos] >= '0' && inner[pos] <= '9') {
                v = std::min<long long>(v * 10 + (inner[pos] - '0'), 1000000000);
                ++pos;
            }
            if (pos == start) {
                ok = false;
                break;
            }
            nums.push_back(static_cast<int>(v));
            while (pos < inner.size() && inner[pos] == ' ') ++pos;
            if (pos < inner.size()) {
                if (inner[pos] != ',') ok = false;
                ++pos;
            }
        }
        if (!ok || nums.empty()) continue;
        for (int n : nums) {
            if (seen.insert(n).second) out.push_back(n);
        }
        i = close;
    }
    return out;
}

/// Cuts a model-authored reference section (a line reading "References",
/// "Sources", ... optionally as a heading or bold) and everything after it.
inline std::string strip_reference_section(std::string_view answer)
{
    std::size_t pos = 0;
    while (pos < answer.size()) {
        auto nl = answer.find('\n', pos);
        auto line = answer.substr(pos, nl == std::string_view::npos ? answer.npos : nl - pos);
        std::string key;
        for (char c : line) {
            if (c == '#' || c == '*' || c == ':' || c == '_' || c == ' ' || c == '\t' || c == '\r') continue;
            key.push_back(c);
        }
        key = text::lowercase(key);
        if (key == "references" || key == "reference" || key == "sources" || key == "source" || key == "citations"
            || key == "bibliography" || key == "參考資料" || key == "参考资料") {
            return std::string(text::trim(answer.substr(0, pos)));
        }
        if (nl == std::string_view::npos) break;
        pos = nl + 1;
    }
    return std::string(text::trim(answer));
}

// ---------------------------------------------------------------------------
// Synthesis
// ---------------------------------------------------------------------------

namespace prompts {

inline constexpr std::string_view synthesize = R"([TAG:synthesize]
You are a primary healthcare assistant for Hong Kong residents. Write one answer from the
numbered evidence.
Rules:
- Evidence is listed in precedence order: official certified sources before others, newer
  before older. When two items disagree, the higher-listed item wins.
- Never assert both sides of a contradiction. Present the higher-listed position as the
  current or updated guidance and mention the lower-listed one as superseded, citing both.
- Cite every factual statement with the evidence number in square brackets, e.g. [1] or [2, 3].
  Use only the numbers shown. Do not write a reference list; it is generated for you.
- The user profile is context for tailoring the answer, not a source; never cite it.
- Prefer community-based primary care options (family doctors, district health centres,
  subsidised schemes) where relevant.
- Format as a short report: Summary, Details, Next steps. Use plain, warm language.)";

inline constexpr std::string_view synthesize_zero_shot = R"([TAG:synthesize]
You are a primary healthcare assistant for Hong Kong residents. No sources are available for
this question: answer from general knowledge, do not cite anything and do not invent
references. Format as a short report: Summary, Details, Next steps. Use plain, warm language.)";

}  // namespace prompts

struct SynthesisDraft {
    ChatRequest request;
    FinalResponse response;  // answer only; references are filled by validate_citations
    int repairs = 0;
};

inline std::string render_evidence_block(const EvidenceItem& e)
{
    return "[" + std::to_string(e.eid) + "] (tier " + std::to_string(e.authority_tier) + ", dated "
         + text::format_date(e.date) + ") " + e.title + " | " + e.locator + " | " + std::string(to_string(e.origin))
         + "\n" + e.text + "\n";
}

inline ChatRequest synthesis_request(const ClarifiedIntent& intent, const std::vector<EvidenceItem>& items,
                                     const UserProfile& profile, bool zero_shot)
{
    std::string user = "User profile (context only, not a citable source):\n";
    const auto list = [&](const char* label, const std::vector<std::string>& v) {
        user += std::string("- ") + label + ": ";
        if (v.empty()) user += "none stated";
        for (std::size_t i = 0; i < v.size(); ++i) user += (i ? "; " : "") + v[i];
        user += "\n";
    };
    list("Priorities", profile.stated_priorities);
    list("Background", profile.background_facts);
    list("Locale", profile.locale_hints);
    user += "\nQuestion: " + intent.intent_text + "\n";
    if (!zero_shot && !intent.sub_queries.empty()) {
        user += "Search focus:\n";
        for (const auto& q : intent.sub_queries) user += "- " + q.text + "\n";
    }
    if (zero_shot) {
        user += "\nEvidence: none (answer from general knowledge, no citations)\n";
    } else if (items.empty()) {
        user += "\nEvidence: none was found. Say that no verified source was found and suggest where to ask.\n";
    } else {
        user += "\nEvidence (highest precedence first):\n";
        for (const auto& e : items) user += render_evidence_block(e) + "\n";
    }
    ChatRequest req;
    req.messages.push_back({Role::system, std::string(zero_shot ? prompts::synthesize_zero_shot : prompts::synthesize)});
    req.messages.push_back({Role::user, std::move(user)});
    req.max_tokens = 4096;
    return req;
}

/// One synthesis call (plus one repair if the answer comes back empty).
inline SynthesisDraft synthesize(const ClarifiedIntent& intent, const std::vector<EvidenceItem>& items,
                                 const UserProfile& profile, ChatModel& llm, bool zero_shot = false)
{
    SynthesisDraft draft;
    draft.request = synthesis_request(intent, items, profile, zero_shot);
    for (int attempt = 0; attempt < 2; ++attempt) {
        const auto reply = llm.complete(draft.request).text;
        auto answer = strip_reference_section(reply);
        if (!answer.empty()) {
            draft.request.messages.push_back({Role::assistant, reply});
            draft.response.answer = std::move(answer);
            draft.response.disclaimers.emplace_back(kMedicalDisclaimer);
            if (zero_shot) draft.response.disclaimers.emplace_back(kZeroShotDisclaimer);
            draft.repairs = attempt;
            return draft;
        }
        draft.request.messages.push_back({Role::assistant, reply});
        draft.request.messages.push_back({Role::user, "[REPAIR] Your reply contained no answer text. Write the answer now."});
    }
    throw Error(Errc::MalformedModelOutput, "synthesis produced no answer");
}

/// Returns a rewritten answer given feedback about invalid markers.
using CitationRepair = std::function<std::string(const std::string& feedback)>;

struct Validated {
    FinalResponse response;
    int repairs = 0;
};

/// Checks every inline marker against the assembled evidence and rebuilds
/// the reference list from the markers actually used (ascending eid). Unknown
/// markers trigger one repair round, then DanglingCitation.
inline Validated validate_citations(FinalResponse resp, const std::vector<EvidenceItem>& items,
                                    const CitationRepair& repair = {})
{
    std::map<int, const EvidenceItem*> by_eid;
    for (const auto& e : items) by_eid[e.eid] = &e;

    for (int attempt = 0;; ++attempt) {
        resp.answer = strip_reference_section(resp.answer);
        const auto markers = citation_markers(resp.answer);
        std::vector<int> dangling;
        for (int m : markers) {
            if (!by_eid.count(m)) dangling.push_back(m);
        }
        if (dangling.empty() && !resp.answer.empty()) {
            std::vector<int> used = markers;
            std::sort(used.begin(), used.end());
            resp.references.clear();
            for (int m : used) {
                const auto& e = *by_eid.at(m);
                resp.references.push_back({e.eid, e.title, e.locator, e.origin, e.date});
            }
            return {std::move(resp), attempt};
        }
        std::string feedback;
        if (resp.answer.empty()) {
            feedback = "The answer is empty.";
        } else {
            feedback = "The answer cites";
            for (int d : dangling) feedback += " [" + std::to_string(d) + "]";
            feedback += " which do not exist. ";
            feedback += items.empty() ? std::string("No evidence is available, so remove all citation markers.")
                                      : "Valid evidence numbers are 1 to " + std::to_string(items.size())
                                            + ". Rewrite the answer citing only those.";
        }
        if (attempt >= 1 || !repair) {
            throw Error(Errc::DanglingCitation, feedback);
        }
        resp.answer = repair(feedback);
    }
}

/// synthesize + validate_citations, wiring the repair round back to the
/// same conversation.
inline Validated reconcile(const ClarifiedIntent& intent, const std::vector<EvidenceItem>& items,
                           const UserProfile& profile, ChatModel& llm, bool zero_shot = false)
{
    auto draft = synthesize(intent, items, profile, llm, zero_shot);
    auto request = draft.request;
    CitationRepair repair = [&](const std::string& feedback) {
        request.messages.push_back({Role::user, "[REPAIR] " + feedback});
        auto reply = llm.complete(request).text;
        request.messages.push_back({Role::assistant, reply});
        return reply;
    };
    auto validated = validate_citations(std::move(draft.response), items, repair);
    validated.repairs += draft.repairs;
    return validated;
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

inline void to_json(json& j, const Citation& c)
{
    j = {{"n", c.eid}, {"title", c.title}, {"locator", c.locator}, {"kind", to_string(c.kind)},
         {"date", text::format_date(c.date)}};
}

inline void from_json(const json& j, Citation& c)
{
    c.eid = j.at("n").get<int>();
    c.title = j.at("title").get<std::string>();
    c.locator = j.at("locator").get<std::string>();
    c.kind = j.at("kind").get<std::string>() == "web" ? Origin::web : Origin::local;
    c.date = text::parse_date(j.at("date").get<std::string>()).value_or(Date{});
}

inline void to_json(json& j, const FinalResponse& r)
{
    j = {{"answer", r.answer}, {"references", r.references}, {"disclaimers", r.disclaimers}};
}

inline void from_json(const json& j, FinalResponse& r)
{
    r.answer = j.at("answer").get<std::string>();
    r.references = j.at("references").get<std::vector<Citation>>();
    r.disclaimers = j.at("disclaimers").get<std::vector<std::string>>();
}

inline void to_json(json& j, const EvidenceItem& e)
{
    j = {{"eid", e.eid},
         {"origin", to_string(e.origin)},
         {"title", e.title},
         {"locator", e.locator},
         {"authority_tier", e.authority_tier},
         {"date", text::format_date(e.date)},
         {"chars", text::utf8_length(e.text)}};
}

}  // namespace priha
