// SPDX-License-Identifier: Apache-2.0
#pragma once

/// Multi-turn sessions: classification, clarification, answering, and a
/// file-backed store with per-session serialization.

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "priha/error.hpp"
#include "priha/pipeline.hpp"
#include "priha/query_optimizer.hpp"
#include "priha/reconciler.hpp"

namespace priha {

enum class Phase { awaiting_input, clarifying, answered };

inline std::string_view to_string(Phase p)
{
    switch (p) {
    case Phase::awaiting_input: return "awaiting_input";
    case Phase::clarifying: return "clarifying";
    case Phase::answered: return "answered";
    }
    return "awaiting_input";
}

inline std::optional<Phase> parse_phase(std::string_view s)
{
    for (auto p : {Phase::awaiting_input, Phase::clarifying, Phase::answered}) {
        if (to_string(p) == s) return p;
    }
    return std::nullopt;
}

struct TranscriptEntry {
    std::string role;  // "user" or "assistant"
    std::string kind;  // reply kind for assistant turns, "message" for user turns
    std::string text;

    friend bool operator==(const TranscriptEntry&, const TranscriptEntry&) = default;
};

struct SessionState {
    std::string session_id;
    Phase phase = Phase::awaiting_input;
    std::vector<TranscriptEntry> transcript;
    ClarificationState clarification;
    IntentLabel label = IntentLabel::simple;
    UserInput input;
    std::optional<ClarifiedIntent> intent;
    std::optional<FinalResponse> last_response;
    json traces = json::array();  // append-only, one object per reply

    bool operator==(const SessionState& o) const
    {
        return session_id == o.session_id && phase == o.phase && transcript == o.transcript
            && clarification == o.clarification && label == o.label && input.text == o.input.text
            && input.timestamp == o.input.timestamp && input.session_id == o.input.session_id && intent == o.intent
            && last_response.has_value() == o.last_response.has_value()
            && (!last_response || json(*last_response) == json(*o.last_response)) && traces == o.traces;
    }
};

enum class ReplyKind { clarifying_question, final_answer, error };

inline std::string_view to_string(ReplyKind k)
{
    switch (k) {
    case ReplyKind::clarifying_question: return "clarifying_question";
    case ReplyKind::final_answer: return "final_answer";
    case ReplyKind::error: return "error";
    }
    return "error";
}

struct ServerReply {
    ReplyKind kind = ReplyKind::final_answer;
    std::string text;
    std::vector<std::string> options;
    std::vector<Citation> references;
    std::vector<std::string> disclaimers;
    std::string trace_id;
    std::optional<Errc> error;
};

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

inline void to_json(json& j, const TranscriptEntry& t) { j = {{"role", t.role}, {"kind", t.kind}, {"text", t.text}}; }

inline void from_json(const json& j, TranscriptEntry& t)
{
    t.role = j.at("role").get<std::string>();
    t.kind = j.at("kind").get<std::string>();
    t.text = j.at("text").get<std::string>();
}

inline void to_json(json& j, const SessionState& s)
{
    j = {{"session_id", s.session_id},
         {"phase", to_string(s.phase)},
         {"transcript", s.transcript},
         {"clarification", s.clarification},
         {"label", to_string(s.label)},
         {"input",
          {{"text", s.input.text},
           {"timestamp", text::format_timestamp(s.input.timestamp)},
           {"session_id", s.input.session_id}}},
         {"intent", s.intent ? json(*s.intent) : json(nullptr)},
         {"last_response", s.last_response ? json(*s.last_response) : json(nullptr)},
         {"traces", s.traces}};
}

inline void from_json(const json& j, SessionState& s)
{
    s.session_id = j.at("session_id").get<std::string>();
    auto phase = parse_phase(j.at("phase").get<std::string>());
    if (!phase) throw Error(Errc::CorruptSession, s.session_id + ": unknown phase");
    s.phase = *phase;
    s.transcript = j.at("transcript").get<std::vector<TranscriptEntry>>();
    s.clarification = j.at("clarification").get<ClarificationState>();
    s.label = j.at("label").get<std::string>() == "COMPLEX" ? IntentLabel::complex : IntentLabel::simple;
    const auto& in = j.at("input");
    s.input.text = in.at("text").get<std::string>();
    s.input.timestamp = text::parse_timestamp(in.at("timestamp").get<std::string>()).value_or(Timestamp{});
    s.input.session_id = in.at("session_id").get<std::string>();
    s.intent.reset();
    if (!j.at("intent").is_null()) s.intent = j.at("intent").get<ClarifiedIntent>();
    s.last_response.reset();
    if (!j.at("last_response").is_null()) s.last_response = j.at("last_response").get<FinalResponse>();
    s.traces = j.at("traces");
    if (!s.traces.is_array()) throw Error(Errc::CorruptSession, s.session_id + ": traces is not an array");
}

inline json reply_json(const ServerReply& r)
{
    json j = {{"kind", to_string(r.kind)}, {"text", r.text}, {"trace_id", r.trace_id}};
    if (r.kind == ReplyKind::final_answer) {
        j["references"] = r.references;
        j["disclaimers"] = r.disclaimers;
    }
    if (!r.options.empty()) j["options"] = r.options;
    if (r.error) j["error"] = to_string(*r.error);
    return j;
}

// ---------------------------------------------------------------------------
// Answering
// ---------------------------------------------------------------------------

struct DirectAnswer {
    ClarifiedIntent intent;
    PipelineResult result;
};

/// Answers without clarification: finalize as SIMPLE, generalize (skipped
/// for zeroshot), then run the pipeline.
inline DirectAnswer answer_direct(const Engine& engine, const UserInput& input, PipelineMode mode)
{
    auto& chat = *engine.providers().chat;
    auto intent = finalize_intent(input, {}, IntentLabel::simple, chat);
    if (mode != PipelineMode::zeroshot) intent = generalize(std::move(intent), chat, engine.config().optimizer);
    auto result = engine.run(intent, mode, profile_from_intent(intent, input.text));
    return {std::move(intent), std::move(result)};
}

namespace detail {

inline std::string next_trace_id(const SessionState& s)
{
    return s.session_id + "-t" + std::to_string(s.traces.size() + 1);
}

inline ServerReply finish(SessionState& s, const Engine& engine, PipelineMode mode, json& record)
{
    auto& chat = *engine.providers().chat;
    auto intent = finalize_intent(s.input, s.clarification, s.label, chat);
    if (mode != PipelineMode::zeroshot) intent = generalize(std::move(intent), chat, engine.config().optimizer);
    auto result = engine.run(intent, mode, profile_from_intent(intent, s.input.text));
    record["pipeline"] = std::move(result.trace);
    s.intent = intent;
    s.last_response = result.response;
    s.phase = Phase::answered;
    ServerReply r;
    r.kind = ReplyKind::final_answer;
    r.text = result.response.answer;
    r.references = result.response.references;
    r.disclaimers = result.response.disclaimers;
    return r;
}

inline ServerReply ask(SessionState& s, const Question& q)
{
    s.phase = Phase::clarifying;
    ServerReply r;
    r.kind = ReplyKind::clarifying_question;
    r.text = q.text;
    r.options = q.options;
    return r;
}

}  // namespace detail

/// One user turn. Provider failures yield an `error` reply and leave the
/// session as it was before the turn (apart from the transcript and trace).
inline ServerReply handle_message(SessionState& session, std::string_view user_text, const Engine& engine,
                                  std::optional<PipelineMode> mode_override = std::nullopt)
{
    const auto mode = mode_override.value_or(engine.config().mode);
    const auto& ocfg = engine.config().optimizer;
    auto& chat = *engine.providers().chat;
    const std::string text(text::trim(user_text));
    if (text.empty()) throw Error(Errc::InvalidArgument, "message text is empty");

    const SessionState before = session;
    const auto trace_id = detail::next_trace_id(session);
    json record = {{"trace_id", trace_id}, {"message", text}};
    ServerReply reply;
    try {
        if (session.phase == Phase::clarifying) {
            session.clarification.user_answers.push_back(text);
            auto step = next_clarification(session.clarification, session.input, chat, ocfg);
            record["stage"] = "clarify";
            if (auto* q = std::get_if<Question>(&step)) {
                reply = detail::ask(session, *q);
            } else {
                reply = detail::finish(session, engine, mode, record);
            }
        } else {
            session.input = {text, engine.providers().clock->now(), session.session_id};
            session.clarification = {};
            session.intent.reset();
            session.label = ocfg.clarification ? classify_intent(session.input, chat) : IntentLabel::simple;
            record["stage"] = "classify";
            record["label"] = to_string(session.label);
            if (session.label == IntentLabel::simple) {
                reply = detail::finish(session, engine, mode, record);
            } else {
                auto step = next_clarification(session.clarification, session.input, chat, ocfg);
                if (auto* q = std::get_if<Question>(&step)) {
                    reply = detail::ask(session, *q);
                } else {
                    reply = detail::finish(session, engine, mode, record);
                }
            }
        }
        record["clarification"] = session.clarification;
    } catch (const Error& e) {
        session = before;
        reply = ServerReply{};
        reply.kind = ReplyKind::error;
        reply.error = e.code();
        reply.text = "Sorry, the assistant could not complete this request (" + std::string(to_string(e.code()))
                   + "). Please try again.";
        record["error"] = detail::error_json(e);
    }
    reply.trace_id = trace_id;
    record["reply_kind"] = to_string(reply.kind);
    session.transcript.push_back({"user", "message", text});
    session.transcript.push_back({"assistant", std::string(to_string(reply.kind)), reply.text});
    session.traces.push_back(std::move(record));
    return reply;
}

// ---------------------------------------------------------------------------
// Store
// ---------------------------------------------------------------------------

inline bool valid_session_id(std::string_view id)
{
    if (id.empty() || id.size() > 64) return false;
    for (char c : id) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-'
                     || c == '_';
        if (!ok) return false;
    }
    return true;
}

/// One JSON file per session under a directory; writes are atomic renames.
class SessionStore {
public:
    explicit SessionStore(std::filesystem::path dir) : dir_(std::move(dir))
    {
        std::error_code ec;
        std::filesystem::create_directories(dir_, ec);
        if (ec) throw Error(Errc::IoError, "cannot create state_dir " + dir_.string() + ": " + ec.message());
    }

    const std::filesystem::path& dir() const { return dir_; }

    void save(const SessionState& s) const
    {
        if (!valid_session_id(s.session_id)) throw Error(Errc::InvalidArgument, "bad session id");
        const auto path = file_for(s.session_id);
        const auto tmp = path.string() + ".tmp";
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            out << json(s).dump();
            if (!out) throw Error(Errc::IoError, "cannot write " + tmp);
        }
        std::error_code ec;
        std::filesystem::rename(tmp, path, ec);
        if (ec) throw Error(Errc::IoError, "cannot replace " + path.string() + ": " + ec.message());
    }

    SessionState load(const std::string& id) const
    {
        if (!valid_session_id(id)) throw Error(Errc::SessionNotFound, id);
        const auto path = file_for(id);
        std::error_code ec;
        if (!std::filesystem::exists(path, ec)) throw Error(Errc::SessionNotFound, id);
        auto j = json::parse(read_file(path), nullptr, false);
        if (j.is_discarded()) throw Error(Errc::CorruptSession, id);
        try {
            auto s = j.get<SessionState>();
            if (s.session_id != id) throw Error(Errc::CorruptSession, id + ": id mismatch");
            return s;
        } catch (const json::exception& e) {
            throw Error(Errc::CorruptSession, id + ": " + e.what());
        }
    }

    bool exists(const std::string& id) const
    {
        std::error_code ec;
        return valid_session_id(id) && std::filesystem::exists(file_for(id), ec);
    }

private:
    std::filesystem::path file_for(const std::string& id) const { return dir_ / (id + ".json"); }

    std::filesystem::path dir_;
};

inline std::string random_session_id()
{
    static std::mutex mu;
    static std::mt19937_64 rng{std::random_device{}()};
    std::lock_guard lock(mu);
    return text::hex64(rng()).substr(0, 16);
}

/// Serializes requests per session; different sessions proceed in parallel.
class SessionManager {
public:
    SessionManager(std::shared_ptr<const Engine> engine, SessionStore store)
        : engine_(std::move(engine)), store_(std::move(store))
    {}

    const Engine& engine() const { return *engine_; }
    const SessionStore& store() const { return store_; }

    SessionState create(std::optional<std::string> id = std::nullopt)
    {
        SessionState s;
        s.session_id = id ? *id : random_session_id();
        auto lock = lock_for(s.session_id);
        store_.save(s);
        return s;
    }

    ServerReply message(const std::string& id, std::string_view text)
    {
        auto lock = lock_for(id);
        auto s = store_.load(id);
        auto reply = handle_message(s, text, *engine_);
        store_.save(s);
        return reply;
    }

    SessionState get(const std::string& id)
    {
        auto lock = lock_for(id);
        return store_.load(id);
    }

    /// Looks a trace up by id (`<session>-t<n>`).
    json trace(const std::string& trace_id)
    {
        const auto dash = trace_id.rfind("-t");
        if (dash == std::string::npos) throw Error(Errc::SessionNotFound, trace_id);
        const auto s = get(trace_id.substr(0, dash));
        for (const auto& t : s.traces) {
            if (t.at("trace_id") == trace_id) return t;
        }
        throw Error(Errc::SessionNotFound, trace_id);
    }

private:
    std::unique_lock<std::mutex> lock_for(const std::string& id)
    {
        std::shared_ptr<std::mutex> m;
        {
            std::lock_guard g(map_mu_);
            auto& slot = locks_[id];
            if (!slot) slot = std::make_shared<std::mutex>();
            m = slot;
        }
        return std::unique_lock<std::mutex>(*m);
    }

    std::shared_ptr<const Engine> engine_;
    SessionStore store_;
    std::mutex map_mu_;
    std::map<std::string, std::shared_ptr<std::mutex>> locks_;
};

}  // namespace priha
