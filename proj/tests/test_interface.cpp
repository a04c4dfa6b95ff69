#include <doctest.h>

#include <chrono>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "fixtures.hpp"
#include "srlab/interface.hpp"

using namespace srlab;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

auto scratch(std::string const& name) -> fs::path
{
    auto dir = fs::temp_directory_path() / ("srlab_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

auto slurp(fs::path const& p) -> std::string
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

void spit(fs::path const& p, std::string const& text) { std::ofstream(p, std::ios::binary) << text; }

auto trig_spec_path() -> fs::path { return fs::path(SRLAB_SOURCE_DIR) / "tools" / "specs" / "trig.json"; }

auto constant_spec(int generations = 5) -> std::string
{
    return json{{"dataset", {{"csv_text", "x,y\n0,3\n1,3\n2,3\n3,3\n4,3\n"}}},
                {"template", "y = f(x)"},
                {"search", {{"generations", generations}, {"population", 20}, {"split", {{"kind", "all_both"}}}}}}
        .dump();
}

auto trig_session_spec(json search) -> RunSpec
{
    auto j = json::parse(slurp(trig_spec_path()));
    j.erase("output");
    j.erase("polish");
    for (auto const& [k, v] : search.items()) { j["search"][k] = v; }
    return RunSpec::parse(j.dump());
}

auto wait_for(auto pred, int timeout_ms = 20000) -> bool
{
    auto const until = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
    while (std::chrono::steady_clock::now() < until) {
        if (pred()) { return true; }
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    return pred();
}

// Frontier events replayed into an archive.
auto replay_archive(std::vector<Event> const& events, std::int64_t upto) -> std::map<std::int64_t, double>
{
    std::map<std::int64_t, double> levels;
    for (auto const& e : events) {
        if (e.seq > upto || e.kind != "frontier") { continue; }
        auto const p = json::parse(e.payload);
        auto const c = p["complexity"].get<std::int64_t>();
        auto const f = p["validation_fitness"].get<double>();
        for (auto it = levels.lower_bound(c); it != levels.end();) {
            it = it->second >= f ? levels.erase(it) : std::next(it);
        }
        levels[c] = f;
    }
    return levels;
}

} // namespace

TEST_CASE("run spec parsing")
{
    SUBCASE("full example")
    {
        auto const s = RunSpec::load(trig_spec_path());
        CHECK(std::holds_alternative<TabulateSource>(s.source));
        CHECK(s.template_text == "y = f(x)");
        CHECK(s.search.seed == 2);
        CHECK(s.search.blocks.size() == 6);
        CHECK(s.output.archive.filename() == "trig_archive.csv");
        auto const p = prepare(s);
        CHECK(p.data.rows() == 129);
        CHECK(p.data.column("x").front() == doctest::Approx(-std::numbers::pi));
    }
    SUBCASE("rejections")
    {
        auto bad = [](std::string const& text, std::string const& fragment) {
            try {
                (void)RunSpec::parse(text);
                FAIL("accepted: " << text);
            } catch (SpecError const& e) {
                CHECK_MESSAGE(std::string(e.what()).find(fragment) != std::string::npos, e.what());
            }
        };
        bad(R"({"dataset": {"csv_text": "x,y\n1,2\n2,3\n"}, "search": {"blocks": ["add", "frobnicate"], "generations": 1}})",
            "frobnicate");
        bad(R"({"dataset": {"csv_text": "x,y\n1,2\n2,3\n"}, "serach": {}})", "serach");
        bad(R"({"dataset": {"csv_text": "x"}, "search": {"metric": "huber", "generations": 1}})", "huber");
        bad(R"({"dataset": {"csv_text": "x"}, "output": {"digits": 5}})", "digits");
        bad(R"({"dataset": {"csv": "a.csv", "csv_text": "x"}})", "exactly one");
        bad(R"({"dataset": {"csv_text": "x"}, "search": {}})", "budget");
        bad(R"({"dataset": )", "malformed");
        bad(R"({"dataset": {"csv_text": 3}})", "spec");
    }
    SUBCASE("weights and splits")
    {
        auto const s = RunSpec::parse(
            R"({"dataset": {"csv_text": "x,y\n1,2\n2,3\n"},
                "search": {"blocks": {"add": 1, "max": 5}, "generations": 1,
                           "split": {"kind": "alternating"}, "metric": "mean-squared-error"}})");
        CHECK(s.search.profile.weights.at(Block::Max) == 5);
        CHECK(s.search.split.kind == SplitStrategy::Kind::Alternating);
        CHECK(s.search.metric == Metric::MeanSquaredError);
    }
    SUBCASE("prepare reports data, derive and template errors")
    {
        auto const nan = RunSpec::parse(R"({"dataset": {"csv_text": "x,y\n1,2\n2,nan\n3,4\n"},
                                             "search": {"generations": 1}})");
        try {
            (void)prepare(nan);
            FAIL("NaN accepted");
        } catch (SpecError const& e) {
            std::string const msg = e.what();
            CHECK(msg.find("row 2") != std::string::npos);
            CHECK(msg.find("'y'") != std::string::npos);
        }
        auto const derive = RunSpec::parse(R"J({"dataset": {"csv_text": "x,y\n1,2\n2,3\n"},
            "derive": [{"name": "lx", "expression": "log(x - 5)"}], "search": {"generations": 1}})J");
        CHECK_THROWS_AS(prepare(derive), SpecError);
        auto const tmpl = RunSpec::parse(R"({"dataset": {"csv_text": "x,y\n1,2\n2,3\n"},
            "template": "y = f(", "search": {"generations": 1}})");
        CHECK_THROWS_AS(prepare(tmpl), SpecError);
    }
}

TEST_CASE("archive export format")
{
    std::vector<Candidate> entries{
        {Expression::integer(3), {}, {0.5, 0.25}, 1, 0, 0.0},
        {parse("max(x, 1.2345678901234567*x)", {"x"}), {}, {1e-10, 3.81e-10}, 9, 0, 0.0},
    };
    std::ostringstream out;
    write_archive_csv(entries, out, 17);
    CHECK(out.str()
          == "complexity,train_fitness,validation_fitness,expression\n"
             "1,0.5,0.25,\"3\"\n"
             "9,1e-10,3.8099999999999998e-10,\"max(x, 1.2345678901234567*x)\"\n");
    std::ostringstream four;
    write_archive_csv(entries, four, 4);
    CHECK(four.str().find("\"max(x, 1.235*x)\"") != std::string::npos);
    CHECK(pick_entry(entries, std::nullopt)->complexity == 9);
    CHECK(pick_entry(entries, 1)->complexity == 1);
    CHECK(pick_entry(entries, 5) == nullptr);
}

TEST_CASE("cli run")
{
    auto const dir = scratch("cli");
    spit(dir / "trig.json", slurp(trig_spec_path()));
    std::ostringstream err;
    CliOptions opt;
    opt.spec = dir / "trig.json";
    opt.deterministic = true;

    REQUIRE(cli_run(opt, err) == 0);
    auto const first = slurp(dir / "trig_archive.csv");
    REQUIRE(cli_run(opt, err) == 0);
    CHECK(slurp(dir / "trig_archive.csv") == first);
    CHECK(err.str().empty());

    SUBCASE("best entry has the identity's form")
    {
        auto const spec = RunSpec::load(opt.spec);
        std::istringstream in(first);
        std::string line;
        std::getline(in, line);
        double best = 1e300;
        std::string best_text;
        while (std::getline(in, line)) {
            std::stringstream ls(line);
            std::string c, tr, va, ex;
            std::getline(ls, c, ',');
            std::getline(ls, tr, ',');
            std::getline(ls, va, ',');
            std::getline(ls, ex);
            if (std::stod(va) < best) {
                best = std::stod(va);
                best_text = ex.substr(1, ex.size() - 2);
            }
        }
        CHECK(best <= 1e-9);
        CHECK(same_form(parse(best_text, {"x"}), parse("cos(x)^4*sin(4*x)", {"x"})));
        auto const res = import_csv(dir / "trig_residuals.csv");
        for (double r : res.column("residual")) { CHECK(std::fabs(r) <= 1e-9); }
        CHECK(slurp(dir / "trig.log").find("best complexity") != std::string::npos);
        CHECK(slurp(dir / "trig_polish.csv").find("cos(x)^4*sin(4*x)") != std::string::npos);
    }
    SUBCASE("overrides")
    {
        opt.export_digits = 4;
        opt.seed = 5;
        opt.budget_seconds = 0.5;
        REQUIRE(cli_run(opt, err) == 0);
        auto const text = slurp(dir / "trig_archive.csv");
        CHECK(text != first);
        CHECK(text.find("0000000") == std::string::npos);
        opt.export_digits = 7;
        CHECK(cli_run(opt, err) == 2);
    }
    SUBCASE("bad inputs fail before any work")
    {
        spit(dir / "nan.csv", "x,y\n1,2\n2,3\n3,nan\n");
        spit(dir / "nan.json", R"({"dataset": {"csv": "nan.csv"}, "search": {"generations": 2}})");
        std::ostringstream e1;
        CHECK(cli_run({dir / "nan.json"}, e1) != 0);
        CHECK(e1.str().find("row 3") != std::string::npos);
        CHECK(e1.str().find("'y'") != std::string::npos);
        CHECK_FALSE(fs::exists(dir / "nan_archive.csv"));

        spit(dir / "blk.json", R"({"dataset": {"csv": "nan.csv"}, "search": {"blocks": ["add", "gamma"], "generations": 2}})");
        std::ostringstream e2;
        CHECK(cli_run({dir / "blk.json"}, e2) != 0);
        CHECK(e2.str().find("gamma") != std::string::npos);
        CHECK_FALSE(fs::exists(dir / "blk.log"));

        std::ostringstream e3;
        CHECK(cli_run({dir / "missing.json"}, e3) == 2);
    }
}

TEST_CASE("polish stage of a run")
{
    auto const dir = scratch("polish");
    spit(dir / "asin.json", R"J({
        "dataset": {"tabulate": {"expression": "0.5*asin(x) + 0.25*x*sqrt((1 - x)*(1 + x))", "target": "W",
                                 "axes": [{"name": "x", "low": -1, "high": 1, "count": 33}]}},
        "derive": [{"name": "asinx", "expression": "asin(x)"}],
        "template": "W = f(x, asinx)",
        "search": {"blocks": ["add", "sub", "mul", "div"], "generations": 3, "population": 30},
        "polish": {"bifocal_terms": 3},
        "output": {"fit_report": "fit.csv"}})J");
    std::ostringstream err;
    REQUIRE(cli_run({dir / "asin.json"}, err) == 0);
    auto const report = slurp(dir / "fit.csv");
    CHECK(report.starts_with("term,coefficient,max_contribution\n\"asin(x)\",0.5"));
    CHECK(slurp(dir / "asin.log").find("fit ") != std::string::npos);
}

TEST_CASE("residual table matches the recorded fitness")
{
    auto const w = derive_column(testing::dogbert_dataset(), "asinx", parse("asin(x)", {"x"}));
    auto const e = parse("-1.870027576e-13 + 0.7816747744*x + 0.0147770774*x^3 - 0.03033616234*x^2*asinx"
                         " + 0.07586494202*x*asinx^2 + 0.0818165982*asinx^3 + 0.0009144579166*x^3*asinx^2",
                         {"x", "asinx"});
    SplitAssignment const all(w.rows(), Tag::Both);
    auto const f = score(e, w, all, Metric::MaxAbsError, "W");
    REQUIRE(f);
    auto const table = residuals(e, w, "W");
    double worst = 0.0;
    for (double r : table.column("residual")) { worst = std::max(worst, std::fabs(r)); }
    CHECK(std::fabs(worst - f->validate) <= 1e-15);
}

TEST_CASE("sessions")
{
    SessionManager mgr;
    SUBCASE("constant data runs to a constant model")
    {
        auto const id = mgr.create(RunSpec::parse(constant_spec()));
        CHECK(mgr.describe(id).state == SessionState::Idle);
        CHECK(mgr.archive(id).entries.empty());
        mgr.start(id);
        REQUIRE(mgr.wait(id, 20000));
        mgr.stop(id);
        mgr.stop(id);
        auto const d = mgr.describe(id);
        CHECK(d.state == SessionState::Finished);
        REQUIRE(d.transitions.size() == 3);
        CHECK(d.transitions[1].state == SessionState::Running);
        CHECK(json::parse(d.config)["generations"] == 5);
        auto const snap = mgr.archive(id);
        REQUIRE(snap.entries.size() == 1);
        CHECK(snap.entries[0].complexity == 1);
        CHECK(snap.entries[0].fitness.validate == 0.0);
        CHECK(*evaluate(snap.entries[0].expression, {{"x", 9.0}}) == 3.0);
        auto const [entry, table] = mgr.residuals(id, std::nullopt);
        for (double r : table.column("residual")) { CHECK(r == 0.0); }
        auto const events = mgr.events(id, 0);
        for (std::size_t i = 0; i < events.size(); ++i) { CHECK(events[i].seq == static_cast<std::int64_t>(i) + 1); }
        CHECK(events.back().kind == "state");
        CHECK(json::parse(events.back().payload)["state"] == "finished");
    }
    SUBCASE("transition rules")
    {
        auto const id = mgr.create(RunSpec::parse(constant_spec()));
        CHECK_THROWS_AS(mgr.pause(id), IllegalTransition);
        mgr.stop(id);
        CHECK(mgr.describe(id).state == SessionState::Stopped);
        CHECK_THROWS_AS(mgr.start(id), IllegalTransition);
        mgr.stop(id);
        CHECK_THROWS_AS(mgr.start("nope"), UnknownSession);
        CHECK_THROWS_AS(mgr.archive("nope"), UnknownSession);
        CHECK_THROWS_AS(mgr.residuals(id, std::nullopt), SessionError);
        CHECK_THROWS_AS(mgr.create(RunSpec::parse(R"({"dataset": {"csv_text": "x,y\n1,nan\n2,3\n"},
                                                       "search": {"generations": 1}})")),
                        SpecError);
    }
    SUBCASE("pause holds at a generation boundary, stop ends the run")
    {
        auto const id = mgr.create(trig_session_spec({{"generations", 100000}, {"stop_fitness", 0.0}}));
        mgr.start(id);
        CHECK_THROWS_AS(mgr.start(id), IllegalTransition);
        REQUIRE(wait_for([&] { return mgr.events(id, 0).size() > 5; }));

        // queries answer promptly while evolution proceeds
        for (int i = 0; i < 20; ++i) {
            auto const t0 = std::chrono::steady_clock::now();
            (void)mgr.archive(id);
            (void)mgr.describe(id);
            CHECK(std::chrono::steady_clock::now() - t0 < std::chrono::milliseconds(200));
        }

        mgr.pause(id);
        CHECK(mgr.describe(id).state == SessionState::Paused);
        std::this_thread::sleep_for(std::chrono::milliseconds(600));
        auto const held = mgr.events(id, 0).size();
        std::this_thread::sleep_for(std::chrono::milliseconds(400));
        CHECK(mgr.events(id, 0).size() == held);
        CHECK(!mgr.archive(id).entries.empty());

        mgr.start(id);
        CHECK(wait_for([&] { return mgr.events(id, 0).size() > held + 2; }));
        mgr.stop(id);
        mgr.stop(id);
        auto const d = mgr.describe(id);
        CHECK(d.state == SessionState::Stopped);
        std::vector<SessionState> path;
        for (auto const& t : d.transitions) { path.push_back(t.state); }
        CHECK(path
              == std::vector{SessionState::Idle, SessionState::Running, SessionState::Paused, SessionState::Running,
                             SessionState::Stopped});
    }
    SUBCASE("events, replay and archive consistency")
    {
        auto const id = mgr.create(trig_session_spec({{"generations", 15}}));
        mgr.start(id);
        auto const mid = mgr.events(id, 0, 5000);
        REQUIRE(!mid.empty());
        auto const snap = mgr.archive(id);
        auto const levels = replay_archive(mgr.events(id, 0), snap.seq);
        REQUIRE(levels.size() == snap.entries.size());
        for (auto const& c : snap.entries) { CHECK(levels.at(c.complexity) == c.fitness.validate); }

        REQUIRE(mgr.wait(id, 60000));
        auto const all = mgr.events(id, 0);
        std::map<std::int64_t, double> best;
        bool improving = true;
        double prev_time = 0.0;
        for (std::size_t i = 0; i < all.size(); ++i) {
            CHECK(all[i].seq == static_cast<std::int64_t>(i) + 1);
            CHECK(all[i].time >= prev_time);
            prev_time = all[i].time;
            if (all[i].kind != "frontier") { continue; }
            auto const p = json::parse(all[i].payload);
            auto const c = p["complexity"].get<std::int64_t>();
            auto const f = p["validation_fitness"].get<double>();
            if (best.contains(c) && f > best[c]) { improving = false; }
            best[c] = f;
            CHECK(p["expression_4"].is_string());
        }
        CHECK(improving);
        for (std::int64_t k : {std::int64_t{0}, std::int64_t{3}, static_cast<std::int64_t>(all.size()) - 1}) {
            auto const tail = mgr.events(id, k);
            REQUIRE(tail.size() == all.size() - static_cast<std::size_t>(k));
            CHECK(tail.front().seq == k + 1);
        }
        CHECK(mgr.events(id, static_cast<std::int64_t>(all.size())).empty());
        auto const final_levels = replay_archive(all, static_cast<std::int64_t>(all.size()));
        CHECK(final_levels.size() == mgr.archive(id).entries.size());
    }
    SUBCASE("finished archive equals the batch export")
    {
        auto const dir = scratch("session_cli");
        auto spec = RunSpec::load(trig_spec_path());
        spec.output = {};
        spec.output.archive = dir / "a.csv";
        spec.polish.reset();
        std::ostringstream log;
        (void)execute_run(spec, prepare(spec), log);

        auto const id = mgr.create(spec);
        mgr.start(id);
        REQUIRE(mgr.wait(id, 60000));
        std::ostringstream out;
        write_archive_csv(mgr.archive(id).entries, out, 17, &mgr.dataset(id));
        CHECK(out.str() == slurp(dir / "a.csv"));
    }
    SUBCASE("residuals agree with the archive under an all-both split")
    {
        auto const id = mgr.create(trig_session_spec({{"generations", 10}, {"split", {{"kind", "all_both"}}}}));
        mgr.start(id);
        REQUIRE(mgr.wait(id, 60000));
        for (auto const& c : mgr.archive(id).entries) {
            auto const [entry, table] = mgr.residuals(id, c.complexity);
            double worst = 0.0;
            for (double r : table.column("residual")) { worst = std::max(worst, std::fabs(r)); }
            CHECK(std::fabs(worst - entry.fitness.validate) <= 1e-15);
        }
    }
    SUBCASE("concurrent sessions")
    {
        std::vector<std::string> ids;
        for (int i = 0; i < 3; ++i) { ids.push_back(mgr.create(trig_session_spec({{"generations", 5}, {"seed", i + 1}}))); }
        for (auto const& id : ids) { mgr.start(id); }
        for (auto const& id : ids) {
            REQUIRE(mgr.wait(id, 60000));
            CHECK(mgr.describe(id).state == SessionState::Finished);
        }
        CHECK(mgr.list().size() == 3);
    }
}

TEST_CASE("http service")
{
    SessionManager mgr;
    HttpService svc(mgr);
    int const port = svc.start("127.0.0.1", 0);
    httplib::Client cli("127.0.0.1", port);
    cli.set_read_timeout(30, 0);

    auto const blocks = cli.Get("/api/blocks");
    REQUIRE(blocks);
    CHECK(blocks->status == 200);
    CHECK(json::parse(blocks->body).size() == kBlockCount);

    auto const ok = cli.Post("/api/templates/validate", R"J({"template": "W = f(x, asinx)", "columns": ["x", "asinx", "W"]})J",
                             "application/json");
    REQUIRE(ok);
    CHECK(ok->status == 200);
    CHECK(json::parse(ok->body)["slots"][0] == json::array({"x", "asinx"}));
    auto const bad_template = cli.Post("/api/templates/validate", R"({"template": "y=f(", "columns": ["x", "y"]})",
                                       "application/json");
    CHECK(bad_template->status == 400);
    CHECK(json::parse(bad_template->body)["ok"] == false);

    CHECK(cli.Post("/api/sessions", R"({"dataset": {"csv_text": "x,y\n1,2\n2,3\n"}, "search": {"blocks": ["nope"], "generations": 1}})",
                   "application/json")
              ->status
          == 400);
    CHECK(cli.Post("/api/sessions", "{not json", "application/json")->status == 400);
    CHECK(cli.Get("/api/sessions/zzz")->status == 404);
    CHECK(cli.Post("/api/sessions/zzz/start", "", "text/plain")->status == 404);

    auto const created = cli.Post("/api/sessions", constant_spec(40), "application/json");
    REQUIRE(created);
    REQUIRE(created->status == 201);
    auto const desc = json::parse(created->body);
    std::string const id = desc["id"];
    CHECK(desc["state"] == "idle");
    std::string const base = "/api/sessions/" + id;
    CHECK(cli.Post(base + "/pause", "", "text/plain")->status == 409);
    CHECK(cli.Post(base + "/start", "", "text/plain")->status == 200);

    // full stream until the session finishes
    std::string stream;
    auto const r = cli.Get(base + "/events", [&](char const* data, std::size_t n) {
        stream.append(data, n);
        return true;
    });
    REQUIRE(r);
    CHECK(r->get_header_value("Content-Type") == "text/event-stream");
    std::vector<std::int64_t> ids;
    std::istringstream in(stream);
    for (std::string line; std::getline(in, line);) {
        if (line.starts_with("id: ")) { ids.push_back(std::stoll(line.substr(4))); }
    }
    REQUIRE(ids.size() >= 3);
    for (std::size_t i = 0; i < ids.size(); ++i) { CHECK(ids[i] == static_cast<std::int64_t>(i) + 1); }
    CHECK(stream.find("\"state\":\"finished\"") != std::string::npos);

    // reconnect with a last-seen number: exactly the missed suffix
    std::string rest;
    (void)cli.Get(base + "/events", httplib::Headers{{"Last-Event-ID", "2"}}, [&](char const* data, std::size_t n) {
        rest.append(data, n);
        return true;
    });
    CHECK(rest.starts_with("id: 3\n"));
    CHECK(rest == stream.substr(stream.find("id: 3\n")));

    auto const polled = cli.Get(base + "/events?stream=0&after=1");
    REQUIRE(polled);
    auto const arr = json::parse(polled->body);
    CHECK(arr.size() == ids.size() - 1);
    CHECK(arr[0]["seq"] == 2);

    auto const archive = json::parse(cli.Get(base + "/archive")->body);
    CHECK(archive["state"] == "finished");
    CHECK(archive["seq"] == static_cast<std::int64_t>(ids.size()));
    REQUIRE(archive["entries"].size() == 1);
    CHECK(archive["entries"][0]["expression"] == "3.0");
    auto const csv = cli.Get(base + "/archive?format=csv&digits=4");
    CHECK(csv->body.starts_with("complexity,train_fitness,validation_fitness,expression\n1,0,0,\"3\""));
    CHECK(cli.Get(base + "/archive?format=csv&digits=6")->status == 400);

    auto const res = json::parse(cli.Get(base + "/residuals?complexity=1")->body);
    CHECK(res["max_abs_residual"] == 0.0);
    CHECK(res["columns"]["residual"].size() == 5);
    CHECK(cli.Get(base + "/residuals?complexity=99")->status == 404);
    CHECK(cli.Get(base + "/residuals?complexity=abc")->status == 400);

    CHECK(cli.Post(base + "/stop", "", "text/plain")->status == 200);
    CHECK(json::parse(cli.Get(base)->body)["state"] == "finished");
    CHECK(json::parse(cli.Get("/api/sessions")->body).size() == 1);
    svc.stop();
}
