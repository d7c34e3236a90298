// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <random>

#include "fixture_engine.hpp"
#include "priha/mock.hpp"
#include "published_scores.hpp"

using namespace priha;
using namespace priha::testing;

namespace {

FinalResponse cited_response()
{
    FinalResponse r;
    r.answer = "Vouchers cover dental care [1].";
    Citation c;
    c.eid = 1;
    c.title = "Dental";
    c.locator = "https://www.hcv.gov.hk/dental";
    c.kind = Origin::web;
    r.references.push_back(c);
    return r;
}

QAPair pair()
{
    return {"q1", "voucher", "Can vouchers pay for dental care?", "Yes, at enrolled dentists.", "https://www.hcv.gov.hk"};
}

JudgeOutcome judge_with(const std::string& reply)
{
    mock::ScriptedChat chat;
    chat.on("judge", {}, reply);
    return judge_response(pair(), cited_response(), chat);
}

}  // namespace

TEST(Dataset, ParsesAndRejects)
{
    const std::string good = "\xEF\xBB\xBF"
                             R"({"id":"a","category":"c","question":"q?","reference_answer":"r","source_url":""})"
                             "\n\n"
                             R"({"id":"b","category":"c","question":"q2?","reference_answer":"r2","source_url":"u"})"
                             "\n";
    auto ds = parse_dataset(good);
    ASSERT_EQ(ds.size(), 2u);
    EXPECT_EQ(ds[1].source_url, "u");

    const auto err = [](const std::string& src) {
        try {
            parse_dataset(src);
        } catch (const Error& e) {
            return std::string(to_string(e.code())) + " " + e.detail();
        }
        return std::string("ok");
    };
    EXPECT_EQ(err("{\"id\":\"a\"}"), "BadLine line 1: missing field 'category'");
    EXPECT_EQ(err("\nnot json"), "BadLine line 2: not a JSON object");
    EXPECT_EQ(err(R"({"id":"a","category":"c","question":"q","reference_answer":"r","source_url":"","x":"y"})"),
              "BadLine line 1: unexpected field 'x'");
    EXPECT_EQ(err(R"({"id":"a","category":"c","question":" ","reference_answer":"r","source_url":""})"),
              "BadLine line 1: question is empty");
    EXPECT_EQ(err(R"({"id":1,"category":"c","question":"q","reference_answer":"r","source_url":""})"),
              "BadLine line 1: field 'id' must be a string");
    const std::string dup = R"({"id":"a","category":"c","question":"q","reference_answer":"r","source_url":""})";
    EXPECT_EQ(err(dup + "\n" + dup), "DuplicateId a");
    EXPECT_EQ(load_dataset(fixtures() / "eval" / "questions.jsonl").size(), 80u);
}

TEST(Judge, PromptCarriesDefinitionsAndReferences)
{
    auto req = judge_request(pair(), cited_response());
    const auto& sys = req.messages.at(0).content;
    for (const char* def : {
             "Accuracy: The answer is factually correct and consistent with ground truth.",
             "Completeness: The response covers all aspects of the query and provides the necessary context.",
             "Trustworthiness: The response cites specific, verifiable, and authoritative sources.",
             "Clarity: The response uses clear, simple language, adopts an empathetic tone, and is well-structured and "
             "easy to read.",
             "Relevance: The response directly and completely addresses the specific question asked.",
         }) {
        EXPECT_NE(sys.find(def), std::string::npos) << def;
    }
    const auto& user = req.messages.at(1).content;
    EXPECT_NE(user.find("Ground truth: Yes, at enrolled dentists."), std::string::npos);
    EXPECT_NE(user.find("References:\n[1] Dental | https://www.hcv.gov.hk/dental"), std::string::npos);
    EXPECT_EQ(judge_request(pair(), FinalResponse{"x", {}, {}}).messages.at(1).content.find("References:"),
              std::string::npos);
}

TEST(Judge, ScoresClampsAndRejects)
{
    auto ok = judge_with(R"({"accuracy": 4, "completeness": 3, "trustworthiness": 5, "clarity": 4, "relevance": 2})");
    ASSERT_TRUE(ok.score);
    EXPECT_EQ(ok.score->values, (std::array<int, 5>{4, 3, 5, 4, 2}));
    EXPECT_TRUE(ok.warnings.empty());

    auto clamped = judge_with(R"({"accuracy": 7, "completeness": -1, "trustworthiness": 5, "clarity": 4, "relevance": 2})");
    ASSERT_TRUE(clamped.score);
    EXPECT_EQ(clamped.score->values, (std::array<int, 5>{5, 0, 5, 4, 2}));
    EXPECT_EQ(clamped.warnings.size(), 2u);

    auto fractional = judge_with(R"({"accuracy": 3.5, "completeness": 3, "trustworthiness": 5, "clarity": 4, "relevance": 2})");
    EXPECT_FALSE(fractional.score);
    EXPECT_EQ(fractional.warnings.size(), 1u);

    auto garbage = judge_with("I think it is pretty good.");
    EXPECT_FALSE(garbage.score);

    // One repair round is allowed.
    mock::ScriptedChat chat;
    int calls = 0;
    chat.on_tag("judge", [&](const ChatRequest&) {
        return ++calls == 1 ? std::string("{accuracy: 4")
                            : std::string(R"({"accuracy": 4, "completeness": 4, "trustworthiness": 4, "clarity": 4, "relevance": 4})");
    });
    auto repaired = judge_response(pair(), cited_response(), chat);
    EXPECT_TRUE(repaired.score);
    EXPECT_EQ(calls, 2);
}

TEST(Aggregate, RoundingAndFormatting)
{
    EXPECT_EQ(format_2dp(3.736), "3.74");
    EXPECT_EQ(format_2dp(3.735), "3.74");
    EXPECT_EQ(format_2dp(2.675), "2.68");
    EXPECT_EQ(format_2dp(3.866), "3.87");
    EXPECT_EQ(format_2dp(4.2), "4.20");
    EXPECT_EQ(format_2dp(0.0), "0.00");
    EXPECT_EQ(errc_of([] { aggregate_scores({}); }), Errc::NoScoredRows);
}

TEST(Aggregate, MatchesPublishedTable)
{
    for (const auto& sys : published_table()) {
        auto r = aggregate_scores(rows_with_sums(sys.metric_sums), sys.name);
        EXPECT_EQ(format_2dp(r.overall), sys.overall) << sys.name;
        double expected = 0;
        for (int s : sys.metric_sums) expected += s / 100.0;
        EXPECT_NEAR(r.overall, expected / 5, 1e-12);
        EXPECT_NEAR(r.overall, std::stod(sys.overall), 0.005) << sys.name;
    }
}

TEST(AggregateProperty, MatchesColumnMeanOracle)
{
    std::mt19937 rng(11);
    for (int iter = 0; iter < 100; ++iter) {
        const int n = 1 + static_cast<int>(rng() % 120);
        std::vector<EvalRow> rows(n);
        std::array<long, 5> sums{};
        long scored = 0, missing = 0, errors = 0;
        for (auto& row : rows) {
            const auto roll = rng() % 10;
            if (roll == 0) {
                row.error = "boom";
                ++errors;
                continue;
            }
            if (roll == 1) {
                ++missing;
                continue;
            }
            JudgeScore s;
            for (std::size_t m = 0; m < 5; ++m) {
                s.values[m] = static_cast<int>(rng() % 6);
                sums[m] += s.values[m];
            }
            row.score = s;
            ++scored;
        }
        if (scored == 0) {
            EXPECT_EQ(errc_of([&] { aggregate_scores(rows); }), Errc::NoScoredRows);
            continue;
        }
        auto r = aggregate_scores(rows);
        EXPECT_EQ(r.n, static_cast<std::size_t>(n));
        EXPECT_EQ(r.scored, static_cast<std::size_t>(scored));
        EXPECT_EQ(r.missing_scores, static_cast<std::size_t>(missing));
        EXPECT_EQ(r.errors, static_cast<std::size_t>(errors));
        long total = 0;
        for (std::size_t m = 0; m < 5; ++m) {
            EXPECT_NEAR(r.metric_means[m], static_cast<double>(sums[m]) / scored, 1e-12);
            total += sums[m];
        }
        EXPECT_NEAR(r.overall, static_cast<double>(total) / (5.0 * scored), 1e-12);
    }
}

TEST(Report, WritesJsonAndMarkdown)
{
    TempDir dir;
    auto r = aggregate_scores(rows_with_sums(published_table()[3].metric_sums), "dual");
    write_report(r, dir / "sub" / "report");
    auto j = json::parse(read_file(dir / "sub" / "report.json"));
    EXPECT_EQ(j["mode"], "dual");
    EXPECT_EQ(j["n"], 100);
    EXPECT_NEAR(j["metric_means"]["accuracy"].get<double>(), 3.95, 1e-12);
    const auto md = read_file(dir / "sub" / "report.md");
    EXPECT_NE(md.find("| 3.95 | 4.03 | 3.98 | 4.86 | 4.18 | 4.20 |"), std::string::npos) << md;
}

TEST(RunEval, SampleDatasetAllModes)
{
    auto engine = fixture_engine();
    auto pairs = load_dataset(fixtures() / "eval" / "sample.jsonl");
    auto dual = run_eval(pairs, PipelineMode::dual, *engine, 2);
    EXPECT_EQ(dual.n, 5u);
    EXPECT_EQ(dual.scored, 5u);
    EXPECT_EQ(dual.errors, 0u);
    auto zero = run_eval(pairs, PipelineMode::zeroshot, *engine, 1);
    EXPECT_EQ(zero.mode, "zeroshot");
    // The fixture judge rewards cited answers.
    EXPECT_GT(dual.overall, zero.overall);
    // Worker count does not change results.
    auto serial = run_eval(pairs, PipelineMode::dual, *engine, 1);
    EXPECT_EQ(report_json(serial).dump(), report_json(dual).dump());
}

TEST(RunEval, AllFailuresRaise)
{
    auto cfg = fixture_config();
    auto providers = make_providers(cfg);
    auto chat = std::make_shared<mock::ScriptedChat>();
    providers.chat = chat;
    providers.judge = chat;
    auto engine = make_engine(cfg, providers);
    auto pairs = load_dataset(fixtures() / "eval" / "sample.jsonl");
    EXPECT_EQ(errc_of([&] { run_eval(pairs, PipelineMode::zeroshot, *engine, 1); }), Errc::EvalFailed);
}
