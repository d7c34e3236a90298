// SPDX-License-Identifier: Apache-2.0
#pragma once

/// JSON-over-HTTP front end for the chat UI.

#include <memory>
#include <string>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "priha/error.hpp"
#include "priha/session.hpp"

namespace priha {

class Service {
public:
    explicit Service(std::shared_ptr<SessionManager> sessions) : sessions_(std::move(sessions)) { routes(); }

    httplib::Server& server() { return server_; }

    /// Binds and serves until stop(). Returns false if the address is unusable.
    bool listen(const std::string& host, int port) { return server_.listen(host, port); }

    /// Binds to an ephemeral port and returns it (0 on failure); call serve() next.
    int bind_any(const std::string& host) { return server_.bind_to_any_port(host); }
    bool serve() { return server_.listen_after_bind(); }

    void stop() { server_.stop(); }
    void wait_until_ready() { server_.wait_until_ready(); }

private:
    static void send(httplib::Response& res, int status, const json& body)
    {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    static int status_for(Errc code)
    {
        switch (code) {
        case Errc::SessionNotFound: return 404;
        case Errc::InvalidArgument: return 400;
        default: return 500;
        }
    }

    template <typename Fn>
    static void guarded(httplib::Response& res, Fn&& fn)
    {
        try {
            fn();
        } catch (const Error& e) {
            send(res, status_for(e.code()), {{"error", to_string(e.code())}, {"detail", e.detail()}});
        } catch (const std::exception& e) {
            send(res, 500, {{"error", "Internal"}, {"detail", e.what()}});
        }
    }

    void routes()
    {
        server_.Post("/v1/sessions", [this](const httplib::Request&, httplib::Response& res) {
            guarded(res, [&] { send(res, 201, {{"session_id", sessions_->create().session_id}}); });
        });

        server_.Post(R"(/v1/sessions/([^/]+)/messages)", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                auto body = json::parse(req.body, nullptr, false);
                if (body.is_discarded() || !body.is_object() || !body.contains("text") || !body["text"].is_string()) {
                    throw Error(Errc::InvalidArgument, "body must be {\"text\": string}");
                }
                auto reply = sessions_->message(req.matches[1], body["text"].get<std::string>());
                send(res, 200, reply_json(reply));
            });
        });

        server_.Get(R"(/v1/sessions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] { send(res, 200, json(sessions_->get(req.matches[1]))); });
        });

        server_.Get(R"(/v1/traces/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] { send(res, 200, sessions_->trace(req.matches[1])); });
        });

        server_.Get("/v1/health", [this](const httplib::Request&, httplib::Response& res) {
            guarded(res, [&] {
                const auto stats = sessions_->engine().knowledge().snapshot.stats();
                send(res, 200, {{"status", "ok"}, {"corpus_docs", stats.documents}, {"index_children", stats.children}});
            });
        });
    }

    std::shared_ptr<SessionManager> sessions_;
    httplib::Server server_;
};

}  // namespace priha
