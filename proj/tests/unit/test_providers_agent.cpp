// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <random>
#include <set>

#include "priha/mock.hpp"
#include "priha/query_optimizer.hpp"
#include "priha/web_agent.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace priha;
using priha::testing::errc_of;
using priha::testing::fixtures;

namespace {

ChatRequest tagged(std::string tag, std::string user)
{
    ChatRequest r;
    r.messages = {{Role::system, "[TAG:" + tag + "]\nsystem"}, {Role::user, std::move(user)}};
    return r;
}

Timestamp at(const char* s) { return *text::parse_timestamp(s); }

std::string long_text(const std::string& word) { return "<p>" + std::string(20, 'x') + " " + word + " " + std::string(60, 'y') + "</p>"; }

mock::Page body_page(int status, std::string body)
{
    mock::Page p;
    p.status = status;
    p.body = std::move(body);
    return p;
}

mock::Page redirect_page(int status, std::string location)
{
    mock::Page p;
    p.status = status;
    p.location = std::move(location);
    return p;
}

mock::Page timeout_page()
{
    mock::Page p;
    p.timeout = true;
    return p;
}

class CountingFlaky final : public ChatModel {
public:
    explicit CountingFlaky(int failures, Errc code) : failures_(failures), code_(code) {}
    ChatResponse complete(const ChatRequest&) override
    {
        ++calls;
        if (failures_-- > 0) throw Error(code_, "flaky");
        return {"ok"};
    }
    int calls = 0;

private:
    int failures_;
    Errc code_;
};

}  // namespace

TEST(Url, ParseAndResolve)
{
    auto u = parse_url("HTTPS://WWW.Gov.HK:8443/a/b.html?x=1#frag");
    ASSERT_TRUE(u);
    EXPECT_EQ(u->scheme, "https");
    EXPECT_EQ(u->host, "www.gov.hk");
    EXPECT_EQ(u->port, 8443);
    EXPECT_EQ(u->path, "/a/b.html?x=1");
    EXPECT_EQ(u->str(), "https://www.gov.hk:8443/a/b.html?x=1");
    EXPECT_FALSE(parse_url("ftp://x.org/"));
    EXPECT_FALSE(parse_url("https:///nohost"));
    EXPECT_FALSE(parse_url("https://a.org:99999/"));
    EXPECT_EQ(parse_url("http://a.org")->path, "/");

    auto base = *parse_url("https://a.gov.hk/dir/page.html");
    EXPECT_EQ(resolve_url(base, "other.html")->str(), "https://a.gov.hk/dir/other.html");
    EXPECT_EQ(resolve_url(base, "/root")->str(), "https://a.gov.hk/root");
    EXPECT_EQ(resolve_url(base, "//b.org/x")->str(), "https://b.org/x");
    EXPECT_EQ(resolve_url(base, "http://c.org/y")->str(), "http://c.org/y");
}

TEST(Html, ExtractsVisibleText)
{
    auto t = html_to_text("<html><head><style>p{}</style><script>var x='<p>';</script></head>"
                          "<body><h1>Title</h1><p>Fees &amp; charges&nbsp;apply</p><!-- hidden --><div>Two  words</div></body></html>");
    EXPECT_EQ(t, "Title\nFees & charges apply\nTwo words");
}

TEST(Fetch, FollowsRedirects)
{
    mock::FixtureWeb web;
    web.add_page("https://a.gov.hk/old", redirect_page(301, "/new"));
    web.add_page("https://a.gov.hk/new", body_page(200, "<p>fresh</p>"));
    web.add_page("https://a.gov.hk/loop", redirect_page(302, "/loop"));
    auto out = fetch_url("https://a.gov.hk/old", web);
    EXPECT_EQ(out.status, 200);
    EXPECT_EQ(out.final_url, "https://a.gov.hk/new");
    EXPECT_EQ(out.redirects, 1);
    EXPECT_EQ(out.body, "fresh");
    EXPECT_EQ(fetch_url("https://a.gov.hk/none", web).status, 404);
    EXPECT_EQ(errc_of([&] { fetch_url("https://a.gov.hk/loop", web); }), Errc::TooManyRedirects);
    EXPECT_EQ(errc_of([&] { fetch_url("https://nowhere.example/", web); }), Errc::DnsFailure);
    EXPECT_EQ(errc_of([&] { fetch_url("not a url", web); }), Errc::InvalidUrl);
}

TEST(Retry, TransientErrorsAreRetried)
{
    RetryPolicy p{2, std::chrono::milliseconds(0)};
    CountingFlaky flaky(2, Errc::RateLimited);
    EXPECT_EQ(with_retries(p, [&] { return flaky.complete({}).text; }), "ok");
    EXPECT_EQ(flaky.calls, 3);

    CountingFlaky down(5, Errc::ProviderUnreachable);
    EXPECT_EQ(errc_of([&] { with_retries(p, [&] { return down.complete({}); }); }), Errc::ProviderUnreachable);
    EXPECT_EQ(down.calls, 3);

    CountingFlaky fatal(1, Errc::ContextTooLong);
    EXPECT_EQ(errc_of([&] { with_retries(p, [&] { return fatal.complete({}); }); }), Errc::ContextTooLong);
    EXPECT_EQ(fatal.calls, 1);
}

TEST(Retry, ResilientChatEnforcesContextLimit)
{
    auto inner = std::make_shared<mock::ScriptedChat>();
    inner->on("t", {}, "fine");
    RetryPolicy p{0, std::chrono::milliseconds(0), 10};
    ResilientChat chat(inner, p, std::make_shared<InFlightLimiter>(1));
    EXPECT_EQ(errc_of([&] { chat.complete(tagged("t", "this is far too long")); }), Errc::ContextTooLong);
    EXPECT_EQ(inner->calls(), 0u);
}

TEST(StructuredOutput, ExtractJson)
{
    EXPECT_EQ(*extract_json("```json\n{\"a\": 1}\n```"), json({{"a", 1}}));
    EXPECT_EQ(*extract_json("Sure! [1, 2] done"), json({1, 2}));
    EXPECT_FALSE(extract_json("no json here {"));
}

TEST(StructuredOutput, OneRepairRound)
{
    mock::ScriptedChat chat;
    chat.on("s", {"[REPAIR]"}, R"({"label": "SIMPLE"})");
    chat.on("s", {}, "not json");
    const Schema schema{"s", "{}", [](const json& j) -> std::optional<SchemaViolation> {
                            if (!j.contains("label")) return SchemaViolation{"no label"};
                            return std::nullopt;
                        }};
    auto r = constrained_json(chat, tagged("s", "q"), schema);
    EXPECT_EQ(r.repairs, 1);
    EXPECT_EQ(r.value["label"], "SIMPLE");

    mock::ScriptedChat bad;
    bad.on("s", {}, "{\"x\": 1}");
    EXPECT_EQ(errc_of([&] { constrained_json(bad, tagged("s", "q"), schema); }), Errc::MalformedModelOutput);
    EXPECT_EQ(bad.calls("s"), 2u);
}

TEST(Mock, ScriptedChatRulesAndPlaceholders)
{
    auto rules = mock::parse_script("=== match: alpha && beta\nboth {{cite:Zhuhai}}\n=== match: alpha\n{\"q\": \"{{json:Original question: }}\"}\n=== default\n!!ratelimit\n");
    ASSERT_EQ(rules.size(), 3u);
    mock::ScriptedChat chat;
    chat.script("x", rules);
    EXPECT_EQ(chat.complete(tagged("x", "alpha beta\n[3] (tier 0, local) Zhuhai notice")).text, "both [3]");
    EXPECT_EQ(json::parse(chat.complete(tagged("x", "alpha\nOriginal question: say \"hi\"\n")).text)["q"], "say \"hi\"");
    EXPECT_EQ(errc_of([&] { chat.complete(tagged("x", "gamma")); }), Errc::RateLimited);
    EXPECT_EQ(errc_of([&] { chat.complete(tagged("unknown", "gamma")); }), Errc::NoFixture);
    EXPECT_EQ(chat.calls("x"), 3u);
    EXPECT_EQ(errc_of([] { mock::parse_script("=== bogus\n"); }), Errc::InvalidConfig);
}

TEST(Mock, FixtureWebFromDirectory)
{
    auto web = mock::FixtureWeb::from_directory(fixtures());
    auto hits = web->search("Greater Bay Area elderly health care voucher pilot hospitals");
    ASSERT_FALSE(hits.empty());
    EXPECT_EQ(hits[0].rank, 1);
    EXPECT_FALSE(web->search("something without a fixture").empty());
    auto fresh = fetch_url("https://www.hcv.gov.hk/en/gba/pilot-extension-2025.html", *web);
    EXPECT_EQ(fresh.status, 200);
    EXPECT_NE(fresh.body.find("Zhuhai"), std::string::npos);
    EXPECT_EQ(errc_of([&] { web->search("  "); }), Errc::InvalidArgument);
}

TEST(Safelist, ParseAndMatch)
{
    auto sl = parse_safelist("# comment\ngov.hk\t0\n\nelderly.org.hk\t1\nwww.special.gov.hk\t1\n");
    ASSERT_EQ(sl.patterns().size(), 3u);
    EXPECT_EQ(sl.match_host("www.hcv.gov.hk")->tier, 0);
    EXPECT_EQ(sl.match_host("GOV.HK.")->tier, 0);
    EXPECT_EQ(sl.match_host("www.special.gov.hk")->tier, 1);
    EXPECT_FALSE(sl.match_host("notgov.hk"));
    EXPECT_FALSE(sl.match_host("gov.hk.evil.com"));
    EXPECT_FALSE(sl.match_url("not a url"));
    EXPECT_EQ(errc_of([] { parse_safelist("gov.hk 0\n"); }), Errc::BadLine);
    EXPECT_EQ(errc_of([] { parse_safelist("gov.hk\t2\n"); }), Errc::BadLine);
    EXPECT_EQ(errc_of([] { parse_safelist("https://gov.hk\t0\n"); }), Errc::BadLine);
}

TEST(Crawl, ValidationOutcomes)
{
    auto sl = parse_safelist("gov.hk\t0\n");
    mock::FixtureWeb web;
    web.add_page("https://a.gov.hk/ok", body_page(200, long_text("ok")));
    web.add_page("https://a.gov.hk/short", body_page(200, "<p>tiny</p>"));
    web.add_page("https://a.gov.hk/away", redirect_page(301, "https://blog.example.com/x"));
    web.add_page("https://blog.example.com/x", body_page(200, long_text("blog")));
    web.add_page("https://a.gov.hk/slow", timeout_page());
    web.add_page("https://a.gov.hk/err", body_page(500, "boom"));
    FixedClock clock(at("2025-06-01T00:00:00Z"));
    auto check = [&](const char* url) { return crawl_validate({url, "T", "", 1}, sl, web, clock); };

    auto ok = check("https://a.gov.hk/ok");
    ASSERT_TRUE(std::holds_alternative<WebEvidence>(ok));
    EXPECT_EQ(std::get<WebEvidence>(ok).fetched_at, clock.now());
    EXPECT_EQ(std::get<WebEvidence>(ok).authority_tier, 0);
    EXPECT_EQ(std::get<Rejection>(check("https://a.gov.hk/short")).reason, RejectReason::empty_content);
    EXPECT_EQ(std::get<Rejection>(check("https://a.gov.hk/away")).reason, RejectReason::off_list_redirect);
    EXPECT_EQ(std::get<Rejection>(check("https://a.gov.hk/slow")).reason, RejectReason::timeout);
    EXPECT_EQ(std::get<Rejection>(check("https://a.gov.hk/err")).status, 500);
    EXPECT_EQ(std::get<Rejection>(check("https://a.gov.hk/missing")).status, 404);
    EXPECT_EQ(std::get<Rejection>(check("https://dns.gov.hk/")).reason, RejectReason::broken);
}

TEST(AgentProperty, RandomWebsStaySafeAndBounded)
{
    for (unsigned iter = 0; iter < 200; ++iter) EXPECT_EQ(priha::testing::agent_violation(1000 + iter), "") << "seed " << 1000 + iter;
}

TEST(Agent, SearchFailurePropagates)
{
    auto sl = parse_safelist("gov.hk\t0\n");
    mock::FixtureWeb web;
    mock::ScriptedChat llm;
    FixedClock clock(at("2025-06-01T00:00:00Z"));
    EXPECT_EQ(errc_of([&] { run_agent_loop("q", sl, {web, web, llm, clock}); }), Errc::NoFixture);
}

TEST(Optimizer, ClassifyFallsBackToSimple)
{
    mock::ScriptedChat llm;
    llm.on("classify", {"User message: Which dental"}, R"({"label": "COMPLEX"})");
    llm.on("classify", {}, "nonsense");
    EXPECT_EQ(classify_intent({"Which dental clinic?", {}, "s"}, llm), IntentLabel::complex);
    EXPECT_EQ(classify_intent({"Hotline?", {}, "s"}, llm), IntentLabel::simple);
    EXPECT_EQ(errc_of([&] { classify_intent({"   ", {}, "s"}, llm); }), Errc::InvalidArgument);
}

TEST(Optimizer, ClarificationIsCapped)
{
    mock::ScriptedChat llm;
    llm.on("clarify", {}, R"({"clear": false, "question": "Where do you live?", "options": ["HK Island", "Kowloon"]})");
    UserInput input{"Which clinic is better?", {}, "s"};
    ClarificationState st;
    OptimizerConfig cfg;
    for (int i = 0; i < 3; ++i) {
        auto step = next_clarification(st, input, llm, cfg);
        ASSERT_TRUE(std::holds_alternative<Question>(step));
        EXPECT_EQ(std::get<Question>(step).options.size(), 2u);
        st.user_answers.push_back("Kowloon");
    }
    EXPECT_TRUE(std::holds_alternative<Done>(next_clarification(st, input, llm, cfg)));
    EXPECT_EQ(st.rounds_used, 3u);
    EXPECT_EQ(llm.calls("clarify"), 3u);
    EXPECT_EQ(errc_of([&] { next_clarification(st, input, llm, cfg); }), Errc::InvalidArgument);
}

TEST(Optimizer, FinalizeAndGeneralize)
{
    mock::ScriptedChat llm;
    llm.on("finalize", {"User answered: Kowloon"},
           R"({"intent": "Compare dental clinics in Kowloon", "priorities": ["cost"], "background_facts": ["aged 70"]})");
    llm.on("generalize", {"Priorities: cost;"},
           R"({"health_topical": true, "sub_queries": [{"text": "dental clinic Kowloon fees", "purpose": "logistics"},
              {"text": "dental clinic Kowloon fees", "purpose": "logistics"},
              {"text": "elderly dental assistance scheme", "purpose": "scheme"}]})");
    UserInput input{"Which clinic is better?", {}, "s"};
    ClarificationState st;
    st.asked_questions = {"Where?"};
    st.user_answers = {"Kowloon"};
    st.rounds_used = 1;
    st.status = ClarificationStatus::done;
    auto intent = finalize_intent(input, st, IntentLabel::complex, llm);
    EXPECT_EQ(intent.intent_text, "Compare dental clinics in Kowloon");
    EXPECT_EQ(intent.priorities, std::vector<std::string>{"cost"});
    auto g = generalize(intent, llm);
    ASSERT_EQ(g.sub_queries.size(), 2u);
    EXPECT_EQ(g.sub_queries[1].purpose, SubQueryPurpose::scheme);

    auto simple = finalize_intent(input, ClarificationState{}, IntentLabel::simple, llm);
    EXPECT_EQ(simple.intent_text, input.text);
    EXPECT_EQ(llm.calls("finalize"), 1u);
}

TEST(Optimizer, GeneralizeRequiresCommunitySubQuery)
{
    mock::ScriptedChat llm;
    llm.on("generalize", {}, R"({"sub_queries": [{"text": "hypertension guideline", "purpose": "guideline"}]})");
    ClarifiedIntent intent;
    intent.intent_text = "blood pressure";
    EXPECT_EQ(errc_of([&] { generalize(intent, llm); }), Errc::MalformedModelOutput);
    EXPECT_EQ(llm.calls("generalize"), 2u);

    mock::ScriptedChat empty;
    empty.on("generalize", {}, R"({"sub_queries": []})");
    EXPECT_EQ(errc_of([&] { generalize(intent, empty); }), Errc::EmptySubQueries);

    mock::ScriptedChat offtopic;
    offtopic.on("generalize", {}, R"({"health_topical": false, "sub_queries": [{"text": "weather", "purpose": "other"}]})");
    EXPECT_EQ(generalize(intent, offtopic).sub_queries.size(), 1u);
}

TEST(Optimizer, SubQueriesAreCapped)
{
    json subs = json::array();
    for (int i = 0; i < 9; ++i) subs.push_back({{"text", "q" + std::to_string(i)}, {"purpose", i == 0 ? "scheme" : "other"}});
    mock::ScriptedChat llm;
    llm.on("generalize", {}, json{{"sub_queries", subs}}.dump());
    ClarifiedIntent intent;
    intent.intent_text = "x";
    EXPECT_EQ(generalize(intent, llm).sub_queries.size(), 6u);
}
