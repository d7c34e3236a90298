// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <thread>

#include "fixture_engine.hpp"
#include "priha/service.hpp"

using namespace priha;
using namespace priha::testing;

namespace {

class DownEmbedder final : public Embedder {
public:
    std::vector<Embedding> embed(const std::vector<std::string>&) override
    {
        throw Error(Errc::EmbeddingProviderError, "embedder down");
    }
    std::string signature() const override { return "hash-bow-256"; }
};

class DownSearch final : public SearchEngine {
public:
    std::vector<SearchResult> search(std::string_view) override { throw Error(Errc::ProviderUnreachable, "search down"); }
};

std::set<std::string> locators(const FinalResponse& r, Origin kind)
{
    std::set<std::string> out;
    for (const auto& c : r.references) {
        if (c.kind == kind) out.insert(c.locator);
    }
    return out;
}

struct Cli {
    int code;
    std::string out;
};

Cli run_cli(const std::string& args)
{
    TempDir dir;
    const auto out = dir / "out.txt";
    const std::string cmd = std::string(PRIHA_CLI) + " " + args + " >" + out.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, read_file(out)};
}

std::string config_arg() { return "--config " + (fixtures() / "config.json").string(); }

}  // namespace

TEST(Config, FixtureParses)
{
    auto cfg = fixture_config();
    EXPECT_EQ(cfg.mode, PipelineMode::dual);
    EXPECT_EQ(cfg.chunking.parent_words, 300u);
    EXPECT_EQ(cfg.corpus_path, fixtures() / "corpus");
    ASSERT_TRUE(cfg.fixed_clock);
    EXPECT_EQ(text::format_timestamp(*cfg.fixed_clock), "2025-06-01T00:00:00Z");
    EXPECT_NO_THROW(validate(cfg));
}

TEST(Config, Errors)
{
    EXPECT_EQ(errc_of([] { parse_config(json{{"mode", "hybrid"}}, "."); }), Errc::InvalidArgument);
    EXPECT_EQ(errc_of([] { parse_config(json{{"retrieval", {{"k", "six"}}}}, "."); }), Errc::InvalidConfig);
    EXPECT_EQ(errc_of([] { parse_config(json{{"clock", "yesterday"}}, "."); }), Errc::InvalidConfig);
    auto cfg = fixture_config();
    cfg.retrieval.k = 0;
    EXPECT_EQ(errc_of([&] { validate(cfg); }), Errc::InvalidConfig);
    cfg = fixture_config();
    cfg.corpus_path = "/nonexistent";
    EXPECT_EQ(errc_of([&] { validate(cfg); }), Errc::InvalidConfig);
    cfg.mode = PipelineMode::web_only;
    EXPECT_NO_THROW(validate(cfg));
    cfg.providers.chat.kind = "carrier-pigeon";
    EXPECT_EQ(errc_of([&] { make_providers(cfg); }), Errc::InvalidConfig);
}

TEST(Pipeline, StaleLocalFreshWebDualAssertsUpdate)
{
    auto engine = fixture_engine();
    auto a = ask_fixture(*engine, kZhuhaiQuestion, PipelineMode::dual);
    const auto& r = a.result.response;
    EXPECT_NE(r.answer.find("Since January 2025"), std::string::npos) << r.answer;
    EXPECT_NE(r.answer.find("superseded"), std::string::npos);
    EXPECT_EQ(locators(r, Origin::local), std::set<std::string>{kStaleUrl});
    EXPECT_TRUE(locators(r, Origin::web).count(kFreshUrl));
    EXPECT_TRUE(mode_discipline_ok(a.result.trace, r));
    // The fresh web page outranks the stale local document.
    int fresh = 0, stale = 0;
    for (const auto& c : r.references) {
        if (c.locator == kFreshUrl) fresh = c.eid;
        if (c.locator == kStaleUrl) stale = c.eid;
    }
    EXPECT_LT(fresh, stale);
    EXPECT_EQ(a.intent.sub_queries.size(), 2u);
}

TEST(Pipeline, StaleLocalFreshWebOtherModes)
{
    auto engine = fixture_engine();
    auto local = ask_fixture(*engine, kZhuhaiQuestion, PipelineMode::local_only);
    EXPECT_EQ(locators(local.result.response, Origin::local), std::set<std::string>{kStaleUrl});
    EXPECT_TRUE(locators(local.result.response, Origin::web).empty());
    EXPECT_NE(local.result.response.answer.find("cannot be used"), std::string::npos);
    EXPECT_TRUE(mode_discipline_ok(local.result.trace, local.result.response));
    EXPECT_EQ(local.result.trace["calls"]["web_searches"], 0);

    auto web = ask_fixture(*engine, kZhuhaiQuestion, PipelineMode::web_only);
    EXPECT_FALSE(web.result.response.references.empty());
    EXPECT_TRUE(locators(web.result.response, Origin::local).empty());
    EXPECT_TRUE(mode_discipline_ok(web.result.trace, web.result.response));
    EXPECT_EQ(web.result.trace["calls"]["index_queries"], 0);

    auto zero = ask_fixture(*engine, kZhuhaiQuestion, PipelineMode::zeroshot);
    EXPECT_TRUE(zero.result.response.references.empty());
    EXPECT_EQ(zero.result.response.disclaimers.size(), 2u);
    EXPECT_TRUE(mode_discipline_ok(zero.result.trace, zero.result.response));
    EXPECT_EQ(zero.result.trace["calls"]["index_queries"], 0);
    EXPECT_EQ(zero.result.trace["calls"]["web_fetches"], 0);
}

TEST(Pipeline, WebCitationsPassedValidation)
{
    auto engine = fixture_engine();
    auto a = ask_fixture(*engine, kZhuhaiQuestion, PipelineMode::dual);
    std::set<std::string> accepted;
    for (const auto& sq : a.result.trace["sub_queries"]) {
        for (const auto& ev : sq["web"]["evidence"]) accepted.insert(ev["final_url"].get<std::string>());
    }
    for (const auto& loc : locators(a.result.response, Origin::web)) EXPECT_TRUE(accepted.count(loc)) << loc;
}

TEST(Pipeline, DeterministicAcrossRuns)
{
    std::string first_resp, first_trace;
    for (int i = 0; i < 3; ++i) {
        auto engine = fixture_engine();
        auto a = ask_fixture(*engine, kZhuhaiQuestion, PipelineMode::dual);
        const auto resp = json(a.result.response).dump();
        const auto trace = a.result.trace.dump();
        if (i == 0) {
            first_resp = resp;
            first_trace = trace;
        } else {
            EXPECT_EQ(resp, first_resp);
            EXPECT_EQ(trace, first_trace);
        }
    }
}

TEST(Pipeline, ChannelFailuresDegrade)
{
    auto cfg = fixture_config();
    auto good = make_providers(cfg);
    auto kb = load_knowledge(cfg, good.embedder.get());
    auto sl = load_safelist(cfg.safelist_path);

    auto broken = good;
    broken.embedder = std::make_shared<DownEmbedder>();
    broken.search = std::make_shared<DownSearch>();
    Engine engine(cfg, broken, kb, sl);
    UserInput input{kZhuhaiQuestion, {}, "t"};
    EXPECT_EQ(errc_of([&] { answer_direct(engine, input, PipelineMode::dual); }), Errc::PipelineFailed);

    // A single-channel mode with its channel down still answers.
    auto local = answer_direct(engine, input, PipelineMode::local_only);
    EXPECT_TRUE(local.result.response.references.empty());
    EXPECT_TRUE(local.result.trace["sub_queries"][0]["local"].contains("error"));

    // Dual with only the web channel down keeps the local evidence.
    auto half = good;
    half.search = std::make_shared<DownSearch>();
    Engine half_engine(cfg, half, kb, sl);
    auto a = answer_direct(half_engine, input, PipelineMode::dual);
    EXPECT_EQ(locators(a.result.response, Origin::local), std::set<std::string>{kStaleUrl});
}

TEST(Pipeline, RerankerPathAndFallback)
{
    auto cfg = fixture_config();
    cfg.providers.reranker.kind = "overlap";
    auto engine = make_engine(cfg);
    json trace;
    std::atomic<std::size_t> iq{0};
    auto ctx = engine->retrieve_local("elderly health care voucher Zhuhai People's Hospital", trace, iq);
    EXPECT_EQ(trace["scoring"], "reranker");
    EXPECT_EQ(iq.load(), 2u);
    ASSERT_FALSE(ctx.empty());
    for (const auto& e : ctx) EXPECT_GE(e.rerank_score, 0.30);
    EXPECT_LE(ctx.size(), 6u);
}

TEST(Session, SimpleQuestionAnswersDirectly)
{
    auto engine = fixture_engine();
    SessionState s;
    s.session_id = "s1";
    auto r = handle_message(s, kZhuhaiQuestion, *engine);
    EXPECT_EQ(r.kind, ReplyKind::final_answer);
    EXPECT_EQ(r.trace_id, "s1-t1");
    EXPECT_EQ(s.phase, Phase::answered);
    EXPECT_EQ(s.transcript.size(), 2u);
    ASSERT_EQ(s.traces.size(), 1u);
    EXPECT_EQ(s.traces[0]["label"], "SIMPLE");
    EXPECT_TRUE(s.traces[0].contains("pipeline"));
    EXPECT_FALSE(r.references.empty());
}

TEST(Session, ComplexQuestionClarifiesFirst)
{
    auto engine = fixture_engine();
    SessionState s;
    s.session_id = "s2";
    auto q = handle_message(s, "Which clinic has better dental services for my mother?", *engine);
    ASSERT_EQ(q.kind, ReplyKind::clarifying_question);
    EXPECT_EQ(q.options.size(), 3u);
    EXPECT_EQ(s.phase, Phase::clarifying);
    auto a = handle_message(s, "An elderly parent in Sha Tin", *engine);
    ASSERT_EQ(a.kind, ReplyKind::final_answer);
    ASSERT_TRUE(s.intent);
    EXPECT_EQ(s.intent->intent_text, "Find affordable dental services for an elderly parent living in Sha Tin");
    EXPECT_EQ(s.clarification.rounds_used, 1u);
    EXPECT_EQ(s.traces.size(), 2u);
    EXPECT_EQ(a.trace_id, "s2-t2");
}

TEST(Session, ProviderFailureGivesErrorReply)
{
    auto cfg = fixture_config();
    auto providers = make_providers(cfg);
    auto chat = std::make_shared<mock::ScriptedChat>();
    chat->on("classify", {}, R"({"label": "SIMPLE"})");
    chat->on("generalize", {}, R"({"sub_queries": [{"text": "voucher", "purpose": "scheme"}]})");
    chat->on("web_rerank", {}, R"({"order": [1]})");
    chat->on("assess", {}, R"({"sufficient": true})");
    chat->on("synthesize", {}, "!!unreachable");
    providers.chat = chat;
    auto engine = make_engine(cfg, providers);
    SessionState s;
    s.session_id = "s3";
    const auto before = s;
    auto r = handle_message(s, "voucher question", *engine);
    EXPECT_EQ(r.kind, ReplyKind::error);
    EXPECT_EQ(r.error, Errc::ProviderUnreachable);
    EXPECT_EQ(s.phase, before.phase);
    EXPECT_FALSE(s.last_response);
    EXPECT_EQ(s.transcript.size(), 2u);
    EXPECT_EQ(s.traces[0]["error"]["code"], "ProviderUnreachable");
    EXPECT_EQ(errc_of([&] { handle_message(s, "   ", *engine); }), Errc::InvalidArgument);
}

TEST(Session, StoreRoundTripAndErrors)
{
    TempDir dir;
    auto engine = fixture_engine();
    SessionStore store(dir.path());
    SessionState s;
    s.session_id = "abc-123";
    handle_message(s, kZhuhaiQuestion, *engine);
    store.save(s);
    EXPECT_TRUE(store.exists("abc-123"));
    EXPECT_EQ(store.load("abc-123"), s);
    EXPECT_EQ(errc_of([&] { store.load("missing"); }), Errc::SessionNotFound);
    EXPECT_EQ(errc_of([&] { store.load("../etc/passwd"); }), Errc::SessionNotFound);
    std::ofstream(dir / "bad.json") << "{oops";
    EXPECT_EQ(errc_of([&] { store.load("bad"); }), Errc::CorruptSession);
    std::ofstream(dir / "other.json") << json(s).dump();
    EXPECT_EQ(errc_of([&] { store.load("other"); }), Errc::CorruptSession);
    EXPECT_EQ(random_session_id().size(), 16u);
    EXPECT_TRUE(valid_session_id(random_session_id()));
}

TEST(Service, HttpRoundTrip)
{
    TempDir dir;
    auto cfg = fixture_config(dir.path());
    auto engine = make_engine(cfg);
    auto sessions = std::make_shared<SessionManager>(engine, SessionStore(cfg.state_dir));
    Service service(sessions);
    const int port = service.bind_any("127.0.0.1");
    ASSERT_GT(port, 0);
    std::thread server([&] { service.serve(); });
    service.wait_until_ready();

    httplib::Client cli("127.0.0.1", port);
    auto health = cli.Get("/v1/health");
    ASSERT_TRUE(health);
    EXPECT_EQ(health->status, 200);
    EXPECT_EQ(json::parse(health->body)["corpus_docs"], 14);

    auto created = cli.Post("/v1/sessions", "", "application/json");
    ASSERT_TRUE(created);
    EXPECT_EQ(created->status, 201);
    const auto id = json::parse(created->body)["session_id"].get<std::string>();

    auto msg = cli.Post("/v1/sessions/" + id + "/messages", json{{"text", kZhuhaiQuestion}}.dump(), "application/json");
    ASSERT_TRUE(msg);
    EXPECT_EQ(msg->status, 200);
    auto reply = json::parse(msg->body);
    EXPECT_EQ(reply["kind"], "final_answer");
    EXPECT_FALSE(reply["references"].empty());
    const auto trace_id = reply["trace_id"].get<std::string>();

    auto trace = cli.Get("/v1/traces/" + trace_id);
    ASSERT_TRUE(trace);
    EXPECT_EQ(trace->status, 200);
    EXPECT_EQ(json::parse(trace->body)["pipeline"]["mode"], "dual");

    auto state = cli.Get("/v1/sessions/" + id);
    ASSERT_TRUE(state);
    EXPECT_EQ(json::parse(state->body)["transcript"].size(), 2u);

    EXPECT_EQ(cli.Get("/v1/sessions/nope")->status, 404);
    EXPECT_EQ(cli.Get("/v1/traces/nope-t1")->status, 404);
    EXPECT_EQ(cli.Post("/v1/sessions/" + id + "/messages", "{}", "application/json")->status, 400);
    EXPECT_EQ(cli.Post("/v1/sessions/nope/messages", json{{"text", "hi"}}.dump(), "application/json")->status, 404);

    service.stop();
    server.join();
}

TEST(Cli, QueryJsonMatchesGolden)
{
    auto r = run_cli(config_arg() + " query \"" + kZhuhaiQuestion + "\" --json");
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_EQ(r.out, read_file(fixtures() / "golden" / "zhuhai-dual.json"));
}

TEST(Cli, Ingest)
{
    auto r = run_cli(config_arg() + " ingest --corpus " + (fixtures() / "corpus").string());
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("documents: 14\n"), std::string::npos) << r.out;
    EXPECT_NE(r.out.find("errors: 0\n"), std::string::npos);
}

TEST(Cli, ExitCodes)
{
    EXPECT_EQ(run_cli("").code, 1);
    EXPECT_EQ(run_cli("frobnicate").code, 1);
    EXPECT_EQ(run_cli(config_arg() + " query hello --mode hybrid").code, 1);
    EXPECT_EQ(run_cli("--config /nonexistent/config.json query hello").code, 1);
    EXPECT_EQ(run_cli(config_arg() + " ingest --corpus /nonexistent").code, 1);

    // A zeroshot query whose model has no scripted replies is an internal failure.
    TempDir dir;
    std::ofstream(dir / "config.json") << R"({"mode": "zeroshot", "providers": {"fixtures_dir": ".", "chat": {"kind": "mock"}, "embeddings": {"kind": "none"}}})";
    auto r = run_cli("--config " + (dir / "config.json").string() + " query hello");
    EXPECT_EQ(r.code, 2) << r.out;
    EXPECT_NE(r.out.find("NoFixture"), std::string::npos);
}

TEST(Cli, EvalWritesReport)
{
    TempDir dir;
    auto r = run_cli(config_arg() + " eval --dataset " + (fixtures() / "eval" / "sample.jsonl").string() + " --out "
                     + (dir / "report").string());
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("| dual |"), std::string::npos);
    auto j = json::parse(read_file(dir / "report.json"));
    EXPECT_EQ(j["n"], 5);
    EXPECT_TRUE(std::filesystem::exists(dir / "report.md"));
}
