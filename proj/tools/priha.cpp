// SPDX-License-Identifier: Apache-2.0
// priha: ingest, query, chat, serve and eval entry points.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "priha.hpp"

namespace {

using namespace priha;

bool internal_failure(Errc c)
{
    switch (c) {
    case Errc::PipelineFailed:
    case Errc::EvalFailed:
    case Errc::ProviderUnreachable:
    case Errc::RateLimited:
    case Errc::ContextTooLong:
    case Errc::MalformedModelOutput:
    case Errc::DanglingCitation:
    case Errc::EmbeddingProviderError:
    case Errc::RerankerUnavailable:
    case Errc::NoFixture:
    case Errc::Timeout:
        return true;
    default:
        return false;
    }
}

PipelineConfig resolve_config(const std::string& flag)
{
    std::string path = flag;
    if (path.empty()) {
        if (const char* env = std::getenv("PRIHA_CONFIG")) path = env;
    }
    if (path.empty()) return PipelineConfig{};
    return load_config(path);
}

std::string render_markdown(const FinalResponse& r)
{
    std::string out = r.answer + "\n";
    if (!r.references.empty()) {
        out += "\nReferences\n";
        for (const auto& c : r.references) {
            out += "[" + std::to_string(c.eid) + "] " + c.title + " | " + c.locator + " | "
                 + text::format_date(c.date) + " (" + std::string(to_string(c.kind)) + ")\n";
        }
    }
    for (const auto& d : r.disclaimers) out += "\n_" + d + "_\n";
    return out;
}

void print_reply(const ServerReply& r)
{
    if (r.kind == ReplyKind::final_answer) {
        FinalResponse f{r.text, r.references, r.disclaimers};
        std::cout << render_markdown(f);
        return;
    }
    std::cout << r.text << "\n";
    for (std::size_t i = 0; i < r.options.size(); ++i) std::cout << "  " << i + 1 << ") " << r.options[i] << "\n";
}

int run_ingest(const PipelineConfig& cfg, const std::string& corpus, const std::string& out)
{
    validate(cfg.chunking);
    auto providers = make_providers(cfg);
    auto snap = ingest_directory(corpus, cfg.chunking);
    const auto s = snap.stats();
    std::cout << "documents: " << s.documents << "\nparents: " << s.parents << "\nchildren: " << s.children
              << "\nerrors: " << s.errors << "\n";
    for (const auto& e : snap.errors()) std::cerr << "skipped " << e.path << ": " << e.message << "\n";
    if (!out.empty()) {
        Indexes idx;
        if (providers.embedder) {
            idx = build_indexes(snap, *providers.embedder, cfg.retrieval.bm25);
        }
        save_index(out, snap, idx);
        std::cout << "index: " << out << "\n";
    }
    return 0;
}

int run_query(const PipelineConfig& cfg, const std::string& question, const std::string& mode_flag, bool as_json)
{
    auto c = cfg;
    if (!mode_flag.empty()) c.mode = parse_mode(mode_flag);
    auto engine = make_engine(c);
    UserInput input{question, engine->providers().clock->now(), "query"};
    auto answer = answer_direct(*engine, input, c.mode);
    if (as_json) {
        std::cout << json(answer.result.response).dump(2) << "\n";
    } else {
        std::cout << render_markdown(answer.result.response);
    }
    return 0;
}

int run_chat(const PipelineConfig& cfg)
{
    auto engine = make_engine(cfg);
    SessionState session;
    session.session_id = random_session_id();
    std::cout << "Ask a primary-care question (empty line or /quit to exit).\n";
    std::string line;
    while (std::cout << "> " << std::flush, std::getline(std::cin, line)) {
        const auto t = text::trim(line);
        if (t.empty() || t == "/quit") break;
        print_reply(handle_message(session, t, *engine));
    }
    return 0;
}

int run_serve(const PipelineConfig& cfg, const std::string& addr)
{
    const auto colon = addr.rfind(':');
    if (colon == std::string::npos) throw Error(Errc::InvalidArgument, "--addr must be HOST:PORT");
    const auto host = addr.substr(0, colon);
    int port = 0;
    try {
        port = std::stoi(addr.substr(colon + 1));
    } catch (const std::exception&) {
        throw Error(Errc::InvalidArgument, "bad port in --addr");
    }
    auto engine = make_engine(cfg);
    auto sessions = std::make_shared<SessionManager>(engine, SessionStore(cfg.state_dir));
    Service service(sessions);
    std::cerr << "listening on " << host << ":" << port << "\n";
    if (!service.listen(host, port)) throw Error(Errc::IoError, "cannot listen on " + addr);
    return 0;
}

int run_eval_cmd(const PipelineConfig& cfg, const std::string& dataset, const std::string& mode_flag,
                 const std::string& out, std::size_t workers)
{
    auto c = cfg;
    c.optimizer.clarification = false;
    if (!mode_flag.empty()) c.mode = parse_mode(mode_flag);
    auto pairs = load_dataset(dataset);
    auto engine = make_engine(c);
    auto report = run_eval(pairs, c.mode, *engine, workers);
    write_report(report, out);
    std::cout << report_markdown(report);
    for (const auto& row : report.rows) {
        if (row.error) std::cerr << row.pair.id << ": " << *row.error << "\n";
        for (const auto& w : row.warnings) std::cerr << row.pair.id << ": " << w << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Dual-retrieval primary healthcare assistant"};
    app.require_subcommand(1);
    std::string config_path;
    app.add_option("--config", config_path, "Config file (defaults to $PRIHA_CONFIG)");

    std::string corpus, out, question, mode, addr = "127.0.0.1:8080", dataset;
    bool as_json = false;
    std::size_t workers = 0;

    auto* ingest = app.add_subcommand("ingest", "Ingest a Markdown corpus and optionally write an index");
    ingest->add_option("--corpus", corpus, "Corpus directory")->required();
    ingest->add_option("--out", out, "Index output file");

    auto* query = app.add_subcommand("query", "Answer one question");
    query->add_option("text", question, "Question")->required();
    query->add_option("--mode", mode, "zeroshot, local_only, web_only or dual");
    query->add_flag("--json", as_json, "Print the response as JSON");

    auto* chat = app.add_subcommand("chat", "Interactive terminal chat");

    auto* serve = app.add_subcommand("serve", "Serve the HTTP API");
    serve->add_option("--addr", addr, "HOST:PORT");

    auto* eval = app.add_subcommand("eval", "Run and judge a QA dataset");
    eval->add_option("--dataset", dataset, "JSONL dataset")->required();
    eval->add_option("--mode", mode, "zeroshot, local_only, web_only or dual");
    eval->add_option("--out", out, "Report path prefix (writes .json and .md)")->required();
    eval->add_option("--workers", workers, "Concurrent questions (default providers.max_concurrent)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        if (e.get_exit_code() != 0) std::cerr << app.help();
        return 1;
    }

    try {
        const auto cfg = resolve_config(config_path);
        if (*ingest) return run_ingest(cfg, corpus, out);
        if (*query) return run_query(cfg, question, mode, as_json);
        if (*chat) return run_chat(cfg);
        if (*serve) return run_serve(cfg, addr);
        if (*eval) return run_eval_cmd(cfg, dataset, mode, out, workers);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return internal_failure(e.code()) ? 2 : 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
