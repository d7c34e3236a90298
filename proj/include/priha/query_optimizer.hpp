// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <set>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "priha/error.hpp"
#include "priha/providers.hpp"
#include "priha/text.hpp"

namespace priha {

struct UserInput {
    std::string text;
    Timestamp timestamp{};
    std::string session_id;
};

enum class IntentLabel { simple, complex };

inline std::string_view to_string(IntentLabel l) { return l == IntentLabel::simple ? "SIMPLE" : "COMPLEX"; }

enum class ClarificationStatus { pending, done };

struct ClarificationState {
    std::size_t rounds_used = 0;
    std::vector<std::string> asked_questions;
    std::vector<std::string> user_answers;
    ClarificationStatus status = ClarificationStatus::pending;

    friend bool operator==(const ClarificationState&, const ClarificationState&) = default;
};

enum class SubQueryPurpose { guideline, community_service, scheme, logistics, other };

inline std::string_view to_string(SubQueryPurpose p)
{
    switch (p) {
    case SubQueryPurpose::guideline: return "guideline";
    case SubQueryPurpose::community_service: return "community_service";
    case SubQueryPurpose::scheme: return "scheme";
    case SubQueryPurpose::logistics: return "logistics";
    case SubQueryPurpose::other: return "other";
    }
    return "other";
}

inline std::optional<SubQueryPurpose> parse_purpose(std::string_view s)
{
    for (auto p : {SubQueryPurpose::guideline, SubQueryPurpose::community_service, SubQueryPurpose::scheme,
                   SubQueryPurpose::logistics, SubQueryPurpose::other}) {
        if (to_string(p) == s) return p;
    }
    return std::nullopt;
}

struct SubQuery {
    std::string text;
    SubQueryPurpose purpose = SubQueryPurpose::other;

    bool community_oriented() const
    {
        return purpose == SubQueryPurpose::community_service || purpose == SubQueryPurpose::scheme;
    }

    friend bool operator==(const SubQuery&, const SubQuery&) = default;
};

struct ClarifiedIntent {
    std::string intent_text;
    std::vector<std::string> priorities;
    std::vector<std::string> background_facts;
    std::vector<SubQuery> sub_queries;

    friend bool operator==(const ClarifiedIntent&, const ClarifiedIntent&) = default;
};

struct OptimizerConfig {
    std::size_t max_rounds = 3;
    std::size_t max_subqueries = 6;
    bool clarification = true;
};

inline constexpr std::size_t kMaxSubQueryChars = 200;

namespace prompts {

inline constexpr std::string_view classify = R"([TAG:classify]
You triage questions sent to a primary healthcare assistant for Hong Kong residents.
Label the user's message:
- SIMPLE: a direct question with a clear intent that can be answered without follow-up
  (for example "What is the address of Queen Mary Hospital?").
- COMPLEX: the need, background or priorities are ambiguous and must be clarified first
  (for example "Which clinic has better dental services?").
Reply with JSON only: {"label": "SIMPLE"} or {"label": "COMPLEX"}.)";

inline constexpr std::string_view clarify = R"([TAG:clarify]
You help a primary healthcare assistant understand what a user needs before searching.
Given the user's question and the clarification dialogue so far, decide whether the user's
intention, background and priorities are clear enough to search for an answer.
If they are clear, reply {"clear": true}.
Otherwise ask exactly one short, friendly clarifying question (older users may find long
questions hard to follow). When the answer is a choice between a few options, list them.
Reply with JSON only: {"clear": false, "question": "...", "options": ["...", "..."]}.)";

inline constexpr std::string_view finalize = R"([TAG:finalize]
Summarise what the user of a primary healthcare assistant actually wants, using the original
question and the clarification dialogue.
Reply with JSON only:
{"intent": "one-sentence statement of the clarified need",
 "priorities": ["short tags such as affordability, proximity, waiting_time"],
 "background_facts": ["facts the user stated about themselves"]})";

inline constexpr std::string_view generalize = R"([TAG:generalize]
You turn a clarified healthcare need into atomic web and knowledge-base search queries.
Rules:
- Each query targets one concrete piece of information implied by the intent; do not merely
  paraphrase the question.
- Steer toward primary care: whenever the need is health related, include at least one query
  about community resources (district health centres, family doctors, NGO services) or
  government-subsidised schemes, tagged "community_service" or "scheme".
- At most 6 queries, each under 200 characters, no duplicates.
- purpose is one of guideline, community_service, scheme, logistics, other.
Reply with JSON only:
{"health_topical": true,
 "sub_queries": [{"text": "...", "purpose": "guideline"}]})";

}  // namespace prompts

namespace detail {

inline ChatRequest tagged_request(std::string_view system, std::string user)
{
    ChatRequest req;
    req.messages.push_back({Role::system, std::string(system)});
    req.messages.push_back({Role::user, std::move(user)});
    return req;
}

inline std::string dialogue(const UserInput& input, const ClarificationState& state)
{
    std::string s = "Original question: " + input.text + "\n";
    for (std::size_t i = 0; i < state.asked_questions.size(); ++i) {
        s += "Assistant asked: " + state.asked_questions[i] + "\n";
        if (i < state.user_answers.size()) s += "User answered: " + state.user_answers[i] + "\n";
    }
    return s;
}

inline std::vector<std::string> string_list(const json& j, const char* key)
{
    std::vector<std::string> out;
    if (j.contains(key) && j.at(key).is_array()) {
        for (const auto& v : j.at(key)) {
            if (v.is_string() && !text::trim(v.get<std::string>()).empty()) out.emplace_back(text::trim(v.get<std::string>()));
        }
    }
    return out;
}

}  // namespace detail

inline void validate(const UserInput& input)
{
    if (text::trim(input.text).empty()) {
        throw Error(Errc::InvalidArgument, "user input is empty");
    }
}

inline const Schema& classify_schema()
{
    static const Schema s{"classify", R"({"label": "SIMPLE" | "COMPLEX"})", [](const json& j) -> std::optional<SchemaViolation> {
                              if (!j.is_object() || !j.contains("label") || !j["label"].is_string()) {
                                  return SchemaViolation{"missing string field 'label'"};
                              }
                              const auto l = j["label"].get<std::string>();
                              if (l != "SIMPLE" && l != "COMPLEX") return SchemaViolation{"label must be SIMPLE or COMPLEX"};
                              return std::nullopt;
                          }};
    return s;
}

/// Triage. Malformed model output falls back to SIMPLE; transport errors
/// propagate.
inline IntentLabel classify_intent(const UserInput& input, ChatModel& llm)
{
    validate(input);
    try {
        auto r = constrained_json(llm, detail::tagged_request(prompts::classify, "User message: " + input.text),
                                  classify_schema());
        return r.value["label"] == "COMPLEX" ? IntentLabel::complex : IntentLabel::simple;
    } catch (const Error& e) {
        if (e.code() == Errc::MalformedModelOutput) return IntentLabel::simple;
        throw;
    }
}

struct Question {
    std::string text;
    std::vector<std::string> options;
};

struct Done {};

using ClarificationStep = std::variant<Question, Done>;

inline const Schema& clarify_schema()
{
    static const Schema s{"clarify", R"({"clear": bool, "question": string, "options": [string]})",
                          [](const json& j) -> std::optional<SchemaViolation> {
                              if (!j.is_object() || !j.contains("clear") || !j["clear"].is_boolean()) {
                                  return SchemaViolation{"missing boolean field 'clear'"};
                              }
                              if (!j["clear"].get<bool>()) {
                                  if (!j.contains("question") || !j["question"].is_string()
                                      || text::trim(j["question"].get<std::string>()).empty()) {
                                      return SchemaViolation{"'question' is required when clear is false"};
                                  }
                              }
                              return std::nullopt;
                          }};
    return s;
}

/// One clarification turn. Returns Done when the model judges the intent
/// clear or the round cap is reached (no model call is made at the cap).
inline ClarificationStep next_clarification(ClarificationState& state, const UserInput& input, ChatModel& llm,
                                            const OptimizerConfig& cfg = {})
{
    if (state.status != ClarificationStatus::pending) {
        throw Error(Errc::InvalidArgument, "clarification already finished");
    }
    if (state.rounds_used >= cfg.max_rounds) {
        state.status = ClarificationStatus::done;
        return Done{};
    }
    json reply;
    try {
        reply = constrained_json(llm, detail::tagged_request(prompts::clarify, detail::dialogue(input, state)),
                                 clarify_schema())
                    .value;
    } catch (const Error& e) {
        if (e.code() != Errc::MalformedModelOutput) throw;
        state.status = ClarificationStatus::done;
        return Done{};
    }
    if (reply["clear"].get<bool>()) {
        state.status = ClarificationStatus::done;
        return Done{};
    }
    Question q{std::string(text::trim(reply["question"].get<std::string>())), detail::string_list(reply, "options")};
    state.asked_questions.push_back(q.text);
    ++state.rounds_used;
    return q;
}

inline const Schema& finalize_schema()
{
    static const Schema s{"finalize", R"({"intent": string, "priorities": [string], "background_facts": [string]})",
                          [](const json& j) -> std::optional<SchemaViolation> {
                              if (!j.is_object() || !j.contains("intent") || !j["intent"].is_string()
                                  || text::trim(j["intent"].get<std::string>()).empty()) {
                                  return SchemaViolation{"missing non-empty string field 'intent'"};
                              }
                              for (const char* key : {"priorities", "background_facts"}) {
                                  if (j.contains(key) && !j[key].is_array()) {
                                      return SchemaViolation{std::string("'") + key + "' must be an array"};
                                  }
                              }
                              return std::nullopt;
                          }};
    return s;
}

/// Records the clarified intent. SIMPLE inputs pass through unchanged with a
/// single seed sub-query; COMPLEX inputs are summarised by the model.
inline ClarifiedIntent finalize_intent(const UserInput& input, const ClarificationState& state, IntentLabel label,
                                       ChatModel& llm)
{
    validate(input);
    ClarifiedIntent intent;
    if (label == IntentLabel::simple || state.asked_questions.empty()) {
        intent.intent_text = std::string(text::trim(input.text));
        intent.sub_queries.push_back({intent.intent_text, SubQueryPurpose::other});
        return intent;
    }
    if (state.status != ClarificationStatus::done) {
        throw Error(Errc::InvalidArgument, "clarification still pending");
    }
    auto r = constrained_json(llm, detail::tagged_request(prompts::finalize, detail::dialogue(input, state)),
                              finalize_schema());
    intent.intent_text = std::string(text::trim(r.value["intent"].get<std::string>()));
    intent.priorities = detail::string_list(r.value, "priorities");
    intent.background_facts = detail::string_list(r.value, "background_facts");
    intent.sub_queries.push_back({intent.intent_text, SubQueryPurpose::other});
    return intent;
}

namespace detail {

/// Parsed, deduplicated and capped sub-queries, or the first violation.
inline std::variant<std::vector<SubQuery>, SchemaViolation> read_sub_queries(const json& j, std::size_t cap)
{
    if (!j.is_object() || !j.contains("sub_queries") || !j["sub_queries"].is_array()) {
        return SchemaViolation{"missing array field 'sub_queries'"};
    }
    std::vector<SubQuery> out;
    std::set<std::string> seen;
    for (const auto& item : j["sub_queries"]) {
        if (!item.is_object() || !item.contains("text") || !item["text"].is_string()) {
            return SchemaViolation{"each sub-query needs a string 'text'"};
        }
        SubQuery q;
        q.text = std::string(text::trim(item["text"].get<std::string>()));
        if (q.text.empty()) return SchemaViolation{"sub-query text is empty"};
        if (text::utf8_length(q.text) > kMaxSubQueryChars) {
            return SchemaViolation{"sub-query longer than 200 characters: " + text::utf8_prefix(q.text, 40) + "..."};
        }
        const auto purpose = item.value("purpose", std::string("other"));
        auto p = parse_purpose(purpose);
        if (!p) return SchemaViolation{"unknown purpose '" + purpose + "'"};
        q.purpose = *p;
        if (seen.insert(q.text).second) out.push_back(std::move(q));
    }
    if (out.empty()) {
        return SchemaViolation{"no sub-queries returned", Errc::EmptySubQueries};
    }
    if (out.size() > cap) out.resize(cap);
    const bool topical = !j.contains("health_topical") || !j["health_topical"].is_boolean()
                      || j["health_topical"].get<bool>();
    if (topical && std::none_of(out.begin(), out.end(), [](const SubQuery& q) { return q.community_oriented(); })) {
        return SchemaViolation{"health-related intent requires a community_service or scheme sub-query within the first "
                               + std::to_string(cap)};
    }
    return out;
}

}  // namespace detail

/// Expands the intent into atomic sub-queries, at least one of them
/// community-oriented for health topics. Deduplicated and capped in model order.
inline ClarifiedIntent generalize(ClarifiedIntent intent, ChatModel& llm, const OptimizerConfig& cfg = {})
{
    if (text::trim(intent.intent_text).empty()) {
        throw Error(Errc::InvalidArgument, "intent_text is empty");
    }
    std::string user = "Clarified intent: " + intent.intent_text + "\n";
    if (!intent.priorities.empty()) {
        user += "Priorities:";
        for (const auto& p : intent.priorities) user += " " + p + ";";
        user += "\n";
    }
    if (!intent.background_facts.empty()) {
        user += "Background:";
        for (const auto& b : intent.background_facts) user += " " + b + ";";
        user += "\n";
    }
    Schema schema{"generalize", R"({"health_topical": bool, "sub_queries": [{"text": string, "purpose": string}]})",
                  [&](const json& j) -> std::optional<SchemaViolation> {
                      auto r = detail::read_sub_queries(j, cfg.max_subqueries);
                      if (auto* v = std::get_if<SchemaViolation>(&r)) return *v;
                      return std::nullopt;
                  }};
    auto r = constrained_json(llm, detail::tagged_request(prompts::generalize, user), schema);
    intent.sub_queries = std::get<std::vector<SubQuery>>(detail::read_sub_queries(r.value, cfg.max_subqueries));
    return intent;
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

inline void to_json(json& j, const SubQuery& q) { j = {{"text", q.text}, {"purpose", to_string(q.purpose)}}; }

inline void from_json(const json& j, SubQuery& q)
{
    q.text = j.at("text").get<std::string>();
    q.purpose = parse_purpose(j.at("purpose").get<std::string>()).value_or(SubQueryPurpose::other);
}

inline void to_json(json& j, const ClarifiedIntent& i)
{
    j = {{"intent_text", i.intent_text},
         {"priorities", i.priorities},
         {"background_facts", i.background_facts},
         {"sub_queries", i.sub_queries}};
}

inline void from_json(const json& j, ClarifiedIntent& i)
{
    i.intent_text = j.at("intent_text").get<std::string>();
    i.priorities = j.at("priorities").get<std::vector<std::string>>();
    i.background_facts = j.at("background_facts").get<std::vector<std::string>>();
    i.sub_queries = j.at("sub_queries").get<std::vector<SubQuery>>();
}

inline void to_json(json& j, const ClarificationState& s)
{
    j = {{"rounds_used", s.rounds_used},
         {"asked_questions", s.asked_questions},
         {"user_answers", s.user_answers},
         {"status", s.status == ClarificationStatus::done ? "done" : "pending"}};
}

inline void from_json(const json& j, ClarificationState& s)
{
    s.rounds_used = j.at("rounds_used").get<std::size_t>();
    s.asked_questions = j.at("asked_questions").get<std::vector<std::string>>();
    s.user_answers = j.at("user_answers").get<std::vector<std::string>>();
    s.status = j.at("status").get<std::string>() == "done" ? ClarificationStatus::done : ClarificationStatus::pending;
}

}  // namespace priha
