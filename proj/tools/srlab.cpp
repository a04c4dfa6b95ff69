#include <csignal>
#include <iostream>

#include <CLI11.hpp>

#include "srlab/interface.hpp"

namespace {
srlab::HttpService* g_service = nullptr;
extern "C" void on_signal(int) {
    if (g_service) { g_service->stop(); }
}
} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Symbolic regression laboratory"};
    srlab::CliOptions opt;
    std::string spec;
    std::uint64_t seed = 0;
    double budget = 0.0;
    int digits = 17;
    int port = 8080;
    std::string host = "127.0.0.1";
    app.add_option("spec", spec, "Run specification (JSON)");
    app.add_flag("--deterministic", opt.deterministic, "Single-threaded, seed-reproducible search");
    auto* seed_opt = app.add_option("--seed", seed, "Random seed");
    auto* budget_opt = app.add_option("--budget-seconds", budget, "Wall-clock budget")->check(CLI::PositiveNumber);
    auto* digits_opt = app.add_option("--export-digits", digits, "Archive expression digits")->check(CLI::IsMember({4, 17}));
    auto* serve_opt = app.add_option("--serve", port, "Serve the session API on PORT (default 8080)")
                          ->expected(0, 1)
                          ->default_val(8080);
    app.add_option("--host", host, "Address for --serve")->needs(serve_opt);
    CLI11_PARSE(app, argc, argv);

    if (serve_opt->count() > 0) {
        srlab::SessionManager sessions;
        srlab::HttpService service(sessions);
        g_service = &service;
        std::signal(SIGINT, on_signal);
        std::signal(SIGTERM, on_signal);
        std::cerr << "srlab: serving on http://" << host << ':' << port << "/api\n";
        try {
            service.listen(host, port);
        } catch (std::exception const& e) {
            std::cerr << "srlab: " << e.what() << '\n';
            return 1;
        }
        g_service = nullptr;
        return 0;
    }
    if (spec.empty()) {
        std::cerr << "srlab: a spec path or --serve is required\n" << app.help();
        return 2;
    }
    opt.spec = spec;
    if (seed_opt->count() > 0) { opt.seed = seed; }
    if (budget_opt->count() > 0) { opt.budget_seconds = budget; }
    if (digits_opt->count() > 0) { opt.export_digits = digits; }
    return srlab::cli_run(opt, std::cerr);
}
