#include <sstream>
#include <thread>

#include <httplib.h>

#include "srlab/interface.hpp"
#include "wire.hpp"

namespace srlab {

using wire::json;

struct HttpService::Impl {
    SessionManager& sessions;
    httplib::Server server;
    std::thread thread;

    explicit Impl(SessionManager& s) : sessions(s) { routes(); }

    static void reply(httplib::Response& res, int status, json const& body)
    {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    // Runs a handler, mapping errors to status codes.
    template <class F>
    static void guarded(httplib::Response& res, F&& f)
    {
        try {
            f();
        } catch (UnknownSession const& e) {
            reply(res, 404, {{"error", e.what()}});
        } catch (IllegalTransition const& e) {
            reply(res, 409, {{"error", e.what()}});
        } catch (SpecError const& e) {
            reply(res, 400, {{"error", e.what()}});
        } catch (SessionError const& e) {
            reply(res, 404, {{"error", e.what()}});
        } catch (json::exception const& e) {
            reply(res, 400, {{"error", std::string("malformed request: ") + e.what()}});
        } catch (std::invalid_argument const& e) {
            reply(res, 400, {{"error", std::string("bad parameter: ") + e.what()}});
        } catch (std::out_of_range const& e) {
            reply(res, 400, {{"error", std::string("bad parameter: ") + e.what()}});
        } catch (std::exception const& e) {
            reply(res, 500, {{"error", e.what()}});
        }
    }

    static auto param(httplib::Request const& req, char const* key, std::string fallback = {}) -> std::string
    {
        return req.has_param(key) ? req.get_param_value(key) : fallback;
    }

    void routes()
    {
        server.Get("/api/blocks", [](httplib::Request const&, httplib::Response& res) {
            json out = json::array();
            for (auto const& b : all_blocks()) {
                out.push_back({{"name", std::string(b.name)}, {"arity", b.arity}, {"weight", b.default_weight}});
            }
            reply(res, 200, out);
        });

        server.Post("/api/templates/validate", [](httplib::Request const& req, httplib::Response& res) {
            guarded(res, [&] {
                auto const body = json::parse(req.body);
                auto const columns = body.at("columns").get<std::vector<std::string>>();
                try {
                    auto const t = TargetTemplate::parse(body.at("template").get<std::string>(), columns,
                                                         body.value("constraints", std::vector<std::string>{}));
                    reply(res, 200, {{"ok", true}, {"target", t.target}, {"slots", t.slot_args()}});
                } catch (json::exception const&) {
                    throw;
                } catch (std::exception const& e) {
                    reply(res, 400, {{"ok", false}, {"error", e.what()}});
                }
            });
        });

        server.Post("/api/sessions", [this](httplib::Request const& req, httplib::Response& res) {
            guarded(res, [&] {
                auto const id = sessions.create(RunSpec::parse(req.body, std::filesystem::current_path()));
                reply(res, 201, wire::descriptor(sessions.describe(id)));
            });
        });

        server.Get("/api/sessions", [this](httplib::Request const&, httplib::Response& res) {
            json out = json::array();
            for (auto const& d : sessions.list()) { out.push_back(wire::descriptor(d)); }
            reply(res, 200, out);
        });

        server.Get(R"(/api/sessions/([^/]+))", [this](httplib::Request const& req, httplib::Response& res) {
            guarded(res, [&] { reply(res, 200, wire::descriptor(sessions.describe(req.matches[1]))); });
        });

        server.Post(R"(/api/sessions/([^/]+)/(start|pause|stop))",
                    [this](httplib::Request const& req, httplib::Response& res) {
                        guarded(res, [&] {
                            std::string const id = req.matches[1];
                            std::string const op = req.matches[2];
                            if (op == "start") {
                                sessions.start(id);
                            } else if (op == "pause") {
                                sessions.pause(id);
                            } else {
                                sessions.stop(id);
                            }
                            reply(res, 200, wire::descriptor(sessions.describe(id)));
                        });
                    });

        server.Get(R"(/api/sessions/([^/]+)/archive)", [this](httplib::Request const& req, httplib::Response& res) {
            guarded(res, [&] {
                std::string const id = req.matches[1];
                auto const snap = sessions.archive(id);
                auto const& data = sessions.dataset(id);
                if (param(req, "format") == "csv") {
                    int const digits = std::stoi(param(req, "digits", "17"));
                    if (digits != 4 && digits != 17) { throw std::invalid_argument("digits must be 4 or 17"); }
                    std::ostringstream out;
                    write_archive_csv(snap.entries, out, digits, &data);
                    res.set_content(out.str(), "text/csv");
                    return;
                }
                json entries = json::array();
                for (auto const& c : snap.entries) { entries.push_back(wire::candidate(c, &data)); }
                reply(res, 200,
                      {{"seq", snap.seq}, {"state", std::string(state_name(snap.state))}, {"entries", entries}});
            });
        });

        server.Get(R"(/api/sessions/([^/]+)/residuals)", [this](httplib::Request const& req, httplib::Response& res) {
            guarded(res, [&] {
                std::optional<std::int64_t> complexity;
                if (req.has_param("complexity")) { complexity = std::stoll(req.get_param_value("complexity")); }
                auto const [entry, table] = sessions.residuals(req.matches[1], complexity);
                if (param(req, "format") == "csv") {
                    std::ostringstream out;
                    write_csv(table, out);
                    res.set_content(out.str(), "text/csv");
                    return;
                }
                json columns = json::object();
                double worst = 0.0;
                for (auto const& c : table.columns()) { columns[c.name] = c.values; }
                for (double r : table.column("residual")) { worst = std::max(worst, std::fabs(r)); }
                reply(res, 200,
                      {{"complexity", entry.complexity},
                       {"expression", format(entry.expression, 17)},
                       {"max_abs_residual", worst},
                       {"columns", columns}});
            });
        });

        server.Get(R"(/api/sessions/([^/]+)/events)", [this](httplib::Request const& req, httplib::Response& res) {
            guarded(res, [&] {
                std::string const id = req.matches[1];
                std::int64_t after = std::stoll(param(req, "after", "0"));
                if (req.has_header("Last-Event-ID")) { after = std::stoll(req.get_header_value("Last-Event-ID")); }
                (void)sessions.describe(id); // unknown id -> 404
                if (param(req, "stream", "1") == "0") {
                    int const wait_ms = std::stoi(param(req, "wait_ms", "0"));
                    json out = json::array();
                    for (auto const& e : sessions.events(id, after, wait_ms)) { out.push_back(wire::event(e)); }
                    reply(res, 200, out);
                    return;
                }
                res.set_header("Cache-Control", "no-cache");
                res.set_chunked_content_provider(
                    "text/event-stream", [this, id, last = after](std::size_t, httplib::DataSink& sink) mutable {
                        auto const batch = sessions.events(id, last, 250);
                        for (auto const& e : batch) {
                            std::string const msg = "id: " + std::to_string(e.seq) + "\nevent: " + e.kind
                                                    + "\ndata: " + wire::event(e).dump() + "\n\n";
                            if (!sink.write(msg.data(), msg.size())) { return false; }
                            last = e.seq;
                        }
                        if (batch.empty() && is_terminal(sessions.describe(id).state)
                            && sessions.events(id, last).empty()) {
                            sink.done();
                        }
                        return true;
                    });
            });
        });
    }
};

HttpService::HttpService(SessionManager& sessions) : impl_(std::make_unique<Impl>(sessions)) {}

HttpService::~HttpService() { stop(); }

auto HttpService::start(std::string const& host, int port) -> int
{
    int bound = port;
    if (port == 0) {
        bound = impl_->server.bind_to_any_port(host);
    } else if (!impl_->server.bind_to_port(host, port)) {
        bound = -1;
    }
    if (bound < 0) { throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port)); }
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    return bound;
}

void HttpService::listen(std::string const& host, int port)
{
    if (!impl_->server.listen(host, port)) { throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port)); }
}

void HttpService::stop()
{
    impl_->server.stop();
    if (impl_->thread.joinable()) { impl_->thread.join(); }
}

} // namespace srlab
