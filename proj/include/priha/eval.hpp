// SPDX-License-Identifier: Apache-2.0
#pragma once

/// QA dataset loading, batch answering under a pipeline mode, LLM-as-judge
/// scoring on five Likert metrics, and aggregation into a report.

#include <array>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "priha/error.hpp"
#include "priha/pipeline.hpp"
#include "priha/session.hpp"

namespace priha {

struct QAPair {
    std::string id;
    std::string category;
    std::string question;
    std::string reference_answer;
    std::string source_url;
};

inline constexpr std::array<std::string_view, 5> kMetrics{"accuracy", "completeness", "trustworthiness", "clarity",
                                                          "relevance"};

struct JudgeScore {
    std::array<int, 5> values{};  // in kMetrics order, each 0..5
};

/// Parses JSONL. Each non-blank line is an object with exactly the five
/// QAPair fields; ids must be unique.
inline std::vector<QAPair> parse_dataset(std::string_view src)
{
    if (src.starts_with("\xEF\xBB\xBF")) src.remove_prefix(3);
    static const std::set<std::string> fields{"id", "category", "question", "reference_answer", "source_url"};
    std::vector<QAPair> out;
    std::set<std::string> ids;
    std::size_t line_no = 0;
    for (auto line : detail::split_lines(src)) {
        ++line_no;
        if (text::trim(line).empty()) continue;
        const auto bad = [&](const std::string& why) {
            return Error(Errc::BadLine, "line " + std::to_string(line_no) + ": " + why);
        };
        auto j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) throw bad("not a JSON object");
        for (const auto& f : fields) {
            if (!j.contains(f)) throw bad("missing field '" + f + "'");
            if (!j[f].is_string()) throw bad("field '" + f + "' must be a string");
        }
        for (const auto& [k, v] : j.items()) {
            if (!fields.count(k)) throw bad("unexpected field '" + k + "'");
        }
        QAPair p{j["id"], j["category"], j["question"], j["reference_answer"], j["source_url"]};
        if (text::trim(p.id).empty()) throw bad("id is empty");
        if (text::trim(p.question).empty()) throw bad("question is empty");
        if (text::trim(p.reference_answer).empty()) throw bad("reference_answer is empty");
        if (!ids.insert(p.id).second) throw Error(Errc::DuplicateId, p.id);
        out.push_back(std::move(p));
    }
    return out;
}

inline std::vector<QAPair> load_dataset(const std::filesystem::path& path) { return parse_dataset(read_file(path)); }

// ---------------------------------------------------------------------------
// Judge
// ---------------------------------------------------------------------------

namespace prompts {

inline constexpr std::string_view judge = R"([TAG:judge]
You are an expert evaluator of answers given by a primary healthcare assistant for Hong Kong residents.
Score the response against the ground-truth answer on five metrics, each an integer from 0 (worst) to 5 (best).
Accuracy: The answer is factually correct and consistent with ground truth.
Completeness: The response covers all aspects of the query and provides the necessary context.
Trustworthiness: The response cites specific, verifiable, and authoritative sources.
Clarity: The response uses clear, simple language, adopts an empathetic tone, and is well-structured and easy to read.
Relevance: The response directly and completely addresses the specific question asked.
Reply with JSON only:
{"accuracy": 0, "completeness": 0, "trustworthiness": 0, "clarity": 0, "relevance": 0})";

}  // namespace prompts

struct JudgeOutcome {
    std::optional<JudgeScore> score;  // empty when the judge output stayed malformed
    std::vector<std::string> warnings;
};

inline ChatRequest judge_request(const QAPair& pair, const FinalResponse& resp)
{
    std::string user = "Question: " + pair.question + "\n\nGround truth: " + pair.reference_answer
                     + "\n\nResponse:\n" + resp.answer + "\n";
    if (!resp.references.empty()) {
        user += "\nReferences:\n";
        for (const auto& c : resp.references) {
            user += "[" + std::to_string(c.eid) + "] " + c.title + " | " + c.locator + " | "
                  + text::format_date(c.date) + "\n";
        }
    }
    ChatRequest req;
    req.messages.push_back({Role::system, std::string(prompts::judge)});
    req.messages.push_back({Role::user, std::move(user)});
    req.max_tokens = 256;
    return req;
}

inline JudgeOutcome judge_response(const QAPair& pair, const FinalResponse& resp, ChatModel& judge)
{
    const Schema schema{"judge", R"({"accuracy": int, "completeness": int, "trustworthiness": int, "clarity": int, "relevance": int})",
                        [](const json& j) -> std::optional<SchemaViolation> {
                            if (!j.is_object()) return SchemaViolation{"expected an object"};
                            for (auto m : kMetrics) {
                                const std::string key(m);
                                if (!j.contains(key) || !j[key].is_number()) {
                                    return SchemaViolation{"missing numeric field '" + key + "'"};
                                }
                                const double v = j[key].get<double>();
                                if (std::floor(v) != v) return SchemaViolation{"'" + key + "' must be an integer"};
                            }
                            return std::nullopt;
                        }};
    JudgeOutcome out;
    json value;
    try {
        value = constrained_json(judge, judge_request(pair, resp), schema).value;
    } catch (const Error& e) {
        if (e.code() != Errc::MalformedModelOutput) throw;
        out.warnings.push_back("judge output malformed: " + e.detail());
        return out;
    }
    JudgeScore s;
    for (std::size_t i = 0; i < kMetrics.size(); ++i) {
        const std::string key(kMetrics[i]);
        const double v = value[key].get<double>();
        const double c = std::clamp(v, 0.0, 5.0);
        if (c != v) {
            std::ostringstream w;
            w << key << " " << v << " clamped to " << c;
            out.warnings.push_back(w.str());
        }
        s.values[i] = static_cast<int>(c);
    }
    out.score = s;
    return out;
}

// ---------------------------------------------------------------------------
// Rows and aggregation
// ---------------------------------------------------------------------------

struct EvalRow {
    QAPair pair;
    std::optional<FinalResponse> response;
    std::optional<std::string> error;
    std::optional<JudgeScore> score;
    std::vector<std::string> warnings;
};

struct EvalReport {
    std::string mode;
    std::size_t n = 0;
    std::size_t scored = 0;
    std::size_t missing_scores = 0;
    std::size_t errors = 0;
    std::array<double, 5> metric_means{};
    double overall = 0.0;
    std::vector<EvalRow> rows;
};

/// Half-up rounding to `places` decimals, for display.
inline double round_half_up(double x, int places = 2)
{
    const double scale = std::pow(10.0, places);
    return std::floor(x * scale + 0.5 + 1e-9) / scale;
}

inline std::string format_2dp(double x)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", round_half_up(x, 2));
    return buf;
}

/// Overall mean as the arithmetic mean of per-metric means.
inline double overall_mean(const std::array<double, 5>& metric_means)
{
    double s = 0.0;
    for (double m : metric_means) s += m;
    return s / static_cast<double>(metric_means.size());
}

/// Per-metric means over rows that carry a score; missing scores are
/// excluded rather than zero-filled.
inline EvalReport aggregate_scores(std::vector<EvalRow> rows, std::string mode = "")
{
    EvalReport r;
    r.mode = std::move(mode);
    r.n = rows.size();
    std::array<double, 5> sums{};
    for (const auto& row : rows) {
        if (row.error) ++r.errors;
        if (!row.score) {
            if (!row.error) ++r.missing_scores;
            continue;
        }
        ++r.scored;
        for (std::size_t i = 0; i < 5; ++i) sums[i] += row.score->values[i];
    }
    if (r.scored == 0) throw Error(Errc::NoScoredRows, "no row carries a judge score");
    for (std::size_t i = 0; i < 5; ++i) r.metric_means[i] = sums[i] / static_cast<double>(r.scored);
    r.overall = overall_mean(r.metric_means);
    r.rows = std::move(rows);
    return r;
}

inline std::string response_digest(const FinalResponse& resp) { return text::hex64(text::fnv1a64(json(resp).dump())); }

inline json report_json(const EvalReport& r)
{
    json means = json::object();
    for (std::size_t i = 0; i < 5; ++i) means[std::string(kMetrics[i])] = r.metric_means[i];
    json rows = json::array();
    for (const auto& row : r.rows) {
        json j = {{"id", row.pair.id}, {"category", row.pair.category}};
        if (row.score) {
            json s = json::object();
            for (std::size_t i = 0; i < 5; ++i) s[std::string(kMetrics[i])] = row.score->values[i];
            j["scores"] = std::move(s);
        } else {
            j["scores"] = nullptr;
        }
        j["response_digest"] = row.response ? json(response_digest(*row.response)) : json(nullptr);
        if (row.response) j["references"] = row.response->references.size();
        if (row.error) j["error"] = *row.error;
        if (!row.warnings.empty()) j["warnings"] = row.warnings;
        rows.push_back(std::move(j));
    }
    return {{"mode", r.mode},
            {"n", r.n},
            {"scored", r.scored},
            {"missing_scores", r.missing_scores},
            {"errors", r.errors},
            {"metric_means", std::move(means)},
            {"overall", r.overall},
            {"overall_display", format_2dp(r.overall)},
            {"rows", std::move(rows)}};
}

inline std::string report_markdown(const EvalReport& r)
{
    std::string md = "# Evaluation report\n\nMode: `" + r.mode + "`, N = " + std::to_string(r.n) + " (scored "
                   + std::to_string(r.scored) + ", missing scores " + std::to_string(r.missing_scores) + ", errors "
                   + std::to_string(r.errors) + ")\n\n";
    md += "| System | Accuracy | Completeness | Trustworthiness | Clarity | Relevance | Overall |\n";
    md += "|---|---|---|---|---|---|---|\n| " + r.mode;
    for (double m : r.metric_means) md += " | " + format_2dp(m);
    md += " | " + format_2dp(r.overall) + " |\n";
    return md;
}

inline void write_report(const EvalReport& r, const std::filesystem::path& out)
{
    const auto write = [](const std::filesystem::path& p, const std::string& body) {
        std::ofstream f(p, std::ios::binary | std::ios::trunc);
        f << body;
        if (!f) throw Error(Errc::IoError, "cannot write " + p.string());
    };
    if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
    write(out.string() + ".json", report_json(r).dump(2) + "\n");
    write(out.string() + ".md", report_markdown(r));
}

// ---------------------------------------------------------------------------
// Running
// ---------------------------------------------------------------------------

/// Answers every pair (clarification off) and judges it. Pairs run
/// concurrently up to `workers`; rows keep dataset order. A failing pair
/// becomes an error row; EvalFailed only if every pair fails.
inline std::vector<EvalRow> run_system_under_mode(const std::vector<QAPair>& pairs, PipelineMode mode,
                                                  const Engine& engine, std::size_t workers = 0)
{
    std::vector<EvalRow> rows(pairs.size());
    ChatModel& judge = engine.providers().judge ? *engine.providers().judge : *engine.providers().chat;
    if (workers == 0) workers = engine.config().providers.max_concurrent;
    workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(1, pairs.size()));

    std::atomic<std::size_t> next{0};
    const auto work = [&] {
        for (std::size_t i = next++; i < pairs.size(); i = next++) {
            auto& row = rows[i];
            row.pair = pairs[i];
            try {
                UserInput input{pairs[i].question, engine.providers().clock->now(), "eval-" + pairs[i].id};
                row.response = answer_direct(engine, input, mode).result.response;
            } catch (const Error& e) {
                row.error = e.what();
                continue;
            }
            try {
                auto verdict = judge_response(pairs[i], *row.response, judge);
                row.score = verdict.score;
                row.warnings = std::move(verdict.warnings);
            } catch (const Error& e) {
                row.warnings.push_back(std::string("judge failed: ") + e.what());
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < workers; ++t) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();

    if (!pairs.empty() && std::all_of(rows.begin(), rows.end(), [](const EvalRow& r) { return r.error.has_value(); })) {
        throw Error(Errc::EvalFailed, "every question failed; first error: " + *rows.front().error);
    }
    return rows;
}

inline EvalReport run_eval(const std::vector<QAPair>& pairs, PipelineMode mode, const Engine& engine,
                           std::size_t workers = 0)
{
    return aggregate_scores(run_system_under_mode(pairs, mode, engine, workers), std::string(to_string(mode)));
}

}  // namespace priha
