#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <sstream>

#include <json.hpp>

#include "srlab/interface.hpp"
#include "srlab/rewrite.hpp"

namespace srlab {

using nlohmann::json;

namespace {

void check_keys(json const& j, std::initializer_list<std::string_view> allowed, std::string const& where)
{
    if (!j.is_object()) { throw SpecError(where + ": expected an object"); }
    for (auto const& [key, _] : j.items()) {
        if (std::ranges::find(allowed, key) == allowed.end()) {
            throw SpecError(where + ": unknown key '" + key + "'");
        }
    }
}

// A number, or a constant expression such as "-pi".
auto number(json const& j, std::string const& where) -> double
{
    if (j.is_number()) { return j.get<double>(); }
    if (j.is_string()) {
        try {
            if (auto v = evaluate(parse(j.get<std::string>(), std::vector<std::string>{}), {})) { return *v; }
        } catch (std::exception const& e) {
            throw SpecError(where + ": " + e.what());
        }
    }
    throw SpecError(where + ": expected a number");
}

auto resolve(std::filesystem::path const& p, std::filesystem::path const& base) -> std::filesystem::path
{
    return p.empty() || p.is_absolute() || base.empty() ? p : base / p;
}

auto parse_axis(json const& j) -> PlanAxis
{
    check_keys(j, {"name", "low", "high", "count", "spacing", "values"}, "axis");
    PlanAxis a;
    a.name = j.at("name").get<std::string>();
    std::string const where = "axis '" + a.name + "'";
    if (j.contains("values")) {
        a.strategy = ExplicitValues{j.at("values").get<std::vector<double>>()};
        return a;
    }
    a.low = number(j.at("low"), where + " low");
    a.high = number(j.at("high"), where + " high");
    auto const count = j.at("count").get<std::size_t>();
    auto const spacing = j.value("spacing", std::string("uniform"));
    if (spacing == "uniform") {
        a.strategy = UniformGrid{count};
    } else if (spacing == "chebyshev") {
        a.strategy = ChebyshevNodes{count};
    } else {
        throw SpecError(where + ": unknown spacing '" + spacing + "'");
    }
    return a;
}

auto parse_source(json const& j, std::filesystem::path const& base) -> DataSource
{
    check_keys(j, {"csv", "csv_text", "tabulate", "quadrature"}, "dataset");
    if (j.size() != 1) { throw SpecError("dataset: give exactly one of csv, csv_text, tabulate, quadrature"); }
    if (j.contains("csv")) { return CsvSource{resolve(j.at("csv").get<std::string>(), base)}; }
    if (j.contains("csv_text")) { return InlineCsvSource{j.at("csv_text").get<std::string>()}; }
    if (j.contains("tabulate")) {
        auto const& t = j.at("tabulate");
        check_keys(t, {"expression", "target", "axes"}, "tabulate");
        TabulateSource s;
        s.expression = t.at("expression").get<std::string>();
        s.target = t.value("target", std::string("y"));
        for (auto const& a : t.at("axes")) { s.plan.axes.push_back(parse_axis(a)); }
        return s;
    }
    auto const& q = j.at("quadrature");
    check_keys(q,
               {"integrand", "lower", "upper", "variable", "bound_variable", "tolerance", "subtract",
                "subtract_antiderivative", "max_subdivisions", "points", "target"},
               "quadrature");
    QuadratureSource s;
    auto& r = s.request;
    r.variable = q.value("variable", std::string("t"));
    r.bound_variable = q.value("bound_variable", std::string("x"));
    std::vector<std::string> const t{r.variable};
    std::vector<std::string> const x{r.bound_variable};
    try {
        r.integrand = parse(q.at("integrand").get<std::string>(), t);
        r.lower = parse(q.value("lower", std::string("0")), x);
        r.upper = parse(q.value("upper", r.bound_variable), x);
        if (q.contains("subtract")) { r.subtract = parse(q.at("subtract").get<std::string>(), t); }
        if (q.contains("subtract_antiderivative")) {
            r.subtract_antiderivative = parse(q.at("subtract_antiderivative").get<std::string>(), t);
        }
    } catch (ParseError const& e) {
        throw SpecError(std::string("quadrature: ") + e.what());
    }
    r.tolerance = q.value("tolerance", r.tolerance);
    r.max_subdivisions = q.value("max_subdivisions", r.max_subdivisions);
    s.points = parse_axis(q.at("points"));
    if (s.points.name != r.bound_variable) {
        throw SpecError("quadrature: points axis must be named '" + r.bound_variable + "'");
    }
    s.target = q.value("target", std::string("y"));
    return s;
}

auto parse_block(std::string const& name) -> Block
{
    auto b = block_by_name(name);
    if (!b) { throw SpecError("unknown block '" + name + "'"); }
    return *b;
}

auto parse_search(json const& j) -> SearchConfig
{
    check_keys(j,
               {"blocks", "variable_weight", "constant_weight", "metric", "real_constants", "integer_constants",
                "split", "seed", "generations", "seconds", "stop_fitness", "population", "crossover_rate",
                "mutation_rate", "workers", "deterministic", "max_depth", "max_nodes", "tuner"},
               "search");
    SearchConfig c;
    if (j.contains("blocks")) {
        c.blocks.clear();
        auto const& b = j.at("blocks");
        if (b.is_array()) {
            for (auto const& name : b) { c.blocks.push_back(parse_block(name.get<std::string>())); }
        } else if (b.is_object()) {
            for (auto const& [name, w] : b.items()) {
                auto const id = parse_block(name);
                c.blocks.push_back(id);
                c.profile.weights[id] = w.get<int>();
            }
        } else {
            throw SpecError("search.blocks: expected a list of names or a name -> weight map");
        }
    }
    c.profile.variable_weight = j.value("variable_weight", c.profile.variable_weight);
    c.profile.constant_weight = j.value("constant_weight", c.profile.constant_weight);
    if (j.contains("metric")) {
        auto const name = j.at("metric").get<std::string>();
        auto m = metric_by_name(name);
        if (!m) { throw SpecError("unknown metric '" + name + "'"); }
        c.metric = *m;
    }
    c.real_constants = j.value("real_constants", c.real_constants);
    c.integer_constants = j.value("integer_constants", c.integer_constants);
    if (j.contains("split")) {
        auto const& s = j.at("split");
        check_keys(s, {"kind", "train_percent", "validate_percent"}, "search.split");
        auto const kind = s.value("kind", std::string("random"));
        if (kind == "random") {
            c.split.kind = SplitStrategy::Kind::Random;
        } else if (kind == "alternating") {
            c.split.kind = SplitStrategy::Kind::Alternating;
        } else if (kind == "all_both") {
            c.split.kind = SplitStrategy::Kind::AllBoth;
        } else {
            throw SpecError("unknown split kind '" + kind + "'");
        }
        c.split.train_percent = s.value("train_percent", c.split.train_percent);
        c.split.validate_percent = s.value("validate_percent", c.split.validate_percent);
    }
    c.seed = j.value("seed", c.seed);
    if (j.contains("generations")) { c.generations = j.at("generations").get<std::int64_t>(); }
    if (j.contains("seconds")) { c.seconds = j.at("seconds").get<double>(); }
    if (j.contains("stop_fitness")) { c.stop_fitness = j.at("stop_fitness").get<double>(); }
    c.population = j.value("population", c.population);
    c.crossover_rate = j.value("crossover_rate", c.crossover_rate);
    c.mutation_rate = j.value("mutation_rate", c.mutation_rate);
    c.workers = j.value("workers", c.workers);
    c.deterministic = j.value("deterministic", c.deterministic);
    c.max_depth = j.value("max_depth", c.max_depth);
    c.max_nodes = j.value("max_nodes", c.max_nodes);
    if (j.contains("tuner")) {
        auto const& t = j.at("tuner");
        check_keys(t, {"max_iterations", "initial_damping"}, "search.tuner");
        c.tuner.max_iterations = t.value("max_iterations", c.tuner.max_iterations);
        c.tuner.initial_damping = t.value("initial_damping", c.tuner.initial_damping);
    }
    try {
        c.validate();
    } catch (SearchError const& e) {
        throw SpecError(std::string("search: ") + e.what());
    }
    return c;
}

auto parse_polish(json const& j) -> PolishSpec
{
    check_keys(j, {"snap_constants", "basis", "bifocal_terms", "bifocal_variable", "prune_threshold"}, "polish");
    PolishSpec p;
    p.snap_constants = j.value("snap_constants", p.snap_constants);
    p.basis = j.value("basis", p.basis);
    if (j.contains("bifocal_terms")) { p.bifocal_terms = j.at("bifocal_terms").get<int>(); }
    p.bifocal_variable = j.value("bifocal_variable", p.bifocal_variable);
    p.prune_threshold = j.value("prune_threshold", p.prune_threshold);
    if (!p.basis.empty() && p.bifocal_terms) { throw SpecError("polish: give either basis or bifocal_terms"); }
    if (p.bifocal_terms && *p.bifocal_terms < 1) { throw SpecError("polish: bifocal_terms must be >= 1"); }
    return p;
}

auto parse_output(json const& j, std::filesystem::path const& base) -> OutputSpec
{
    check_keys(j, {"archive", "residuals", "log", "polish", "fit_report", "digits", "residuals_complexity"}, "output");
    OutputSpec o;
    auto path = [&](char const* key) { return resolve(j.value(key, std::string()), base); };
    o.archive = path("archive");
    o.residuals = path("residuals");
    o.log = path("log");
    o.polish = path("polish");
    o.fit_report = path("fit_report");
    o.digits = j.value("digits", o.digits);
    if (o.digits != 4 && o.digits != 17) { throw SpecError("output.digits must be 4 or 17"); }
    if (j.contains("residuals_complexity")) { o.residuals_complexity = j.at("residuals_complexity").get<std::int64_t>(); }
    return o;
}

auto fmt17(double v) -> std::string
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

auto quoted(std::string const& s) -> std::string
{
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') { out += '"'; }
        out += ch;
    }
    return out + "\"";
}

template <class F>
auto wrap_errors(std::string const& stage, F&& f)
{
    try {
        return f();
    } catch (SpecError const&) {
        throw;
    } catch (std::exception const& e) {
        throw SpecError(stage + ": " + e.what());
    }
}

} // namespace

auto RunSpec::parse(std::string_view json_text, std::filesystem::path const& base) -> RunSpec
{
    json j;
    try {
        j = json::parse(json_text);
    } catch (json::parse_error const& e) {
        throw SpecError(std::string("malformed JSON: ") + e.what());
    }
    try {
        check_keys(j, {"dataset", "derive", "template", "constraints", "search", "polish", "output"}, "spec");
        RunSpec s;
        s.source = parse_source(j.at("dataset"), base);
        for (auto const& d : j.value("derive", json::array())) {
            check_keys(d, {"name", "expression"}, "derive");
            s.derive.push_back({d.at("name").get<std::string>(), d.at("expression").get<std::string>()});
        }
        s.template_text = j.value("template", s.template_text);
        s.constraints = j.value("constraints", s.constraints);
        if (j.contains("search")) { s.search = parse_search(j.at("search")); }
        if (j.contains("polish")) { s.polish = parse_polish(j.at("polish")); }
        if (j.contains("output")) { s.output = parse_output(j.at("output"), base); }
        return s;
    } catch (json::exception const& e) {
        throw SpecError(std::string("spec: ") + e.what());
    }
}

auto RunSpec::load(std::filesystem::path const& path) -> RunSpec
{
    std::ifstream in(path);
    if (!in) { throw SpecError("cannot open spec '" + path.string() + "'"); }
    std::stringstream buf;
    buf << in.rdbuf();
    auto const dir = path.parent_path();
    auto s = parse(buf.str(), dir.empty() ? std::filesystem::path(".") : dir);
    auto const stem = path.stem().string();
    auto beside = [&](std::string const& name) { return (dir.empty() ? std::filesystem::path(".") : dir) / name; };
    if (s.output.archive.empty()) { s.output.archive = beside(stem + "_archive.csv"); }
    if (s.output.residuals.empty()) { s.output.residuals = beside(stem + "_residuals.csv"); }
    if (s.output.log.empty()) { s.output.log = beside(stem + ".log"); }
    return s;
}

auto describe_source(DataSource const& s) -> std::string
{
    struct {
        auto operator()(CsvSource const& c) const -> std::string { return "csv:" + c.path.string(); }
        auto operator()(InlineCsvSource const&) const -> std::string { return "csv:inline"; }
        auto operator()(TabulateSource const& t) const -> std::string
        {
            return "tabulate:" + t.target + " = " + t.expression + " (" + std::to_string(t.plan.size()) + " rows)";
        }
        auto operator()(QuadratureSource const& q) const -> std::string
        {
            return "quadrature:" + q.target + " = integral of " + format(q.request.integrand) + " d"
                   + q.request.variable;
        }
    } visitor;
    return std::visit(visitor, s);
}

auto prepare(RunSpec const& spec) -> PreparedRun
{
    auto data = wrap_errors("dataset", [&] {
        struct {
            auto operator()(CsvSource const& c) const -> Dataset { return import_csv(c.path); }
            auto operator()(InlineCsvSource const& c) const -> Dataset
            {
                std::istringstream in(c.text);
                return read_csv(in);
            }
            auto operator()(TabulateSource const& t) const -> Dataset
            {
                std::vector<std::string> vars;
                for (auto const& a : t.plan.axes) { vars.push_back(a.name); }
                return tabulate(parse(t.expression, vars), t.plan, t.target);
            }
            auto operator()(QuadratureSource const& q) const -> Dataset
            {
                auto const xs = q.points.points();
                return quadrature(q.request, xs, q.target);
            }
        } visitor;
        return std::visit(visitor, spec.source);
    });
    for (auto const& d : spec.derive) {
        data = wrap_errors("derive '" + d.name + "'",
                           [&] { return derive_column(data, d.name, parse(d.expression, data.names())); });
    }
    auto target = wrap_errors("template", [&] {
        auto t = TargetTemplate::parse(spec.template_text, data.names(), spec.constraints);
        t.validate(data);
        return t;
    });
    wrap_errors("search", [&] {
        spec.search.validate();
        return 0;
    });
    if (spec.polish) {
        wrap_errors("polish", [&] {
            for (auto const& b : spec.polish->basis) { (void)parse(b, data.names()); }
            if (spec.polish->bifocal_terms && !data.has(spec.polish->bifocal_variable)) {
                throw SpecError("polish: no column '" + spec.polish->bifocal_variable + "'");
            }
            return 0;
        });
    }
    return PreparedRun{std::move(data), std::move(target), spec.search};
}

auto display_expression(Expression const& e, int digits, Dataset const* data) -> std::string
{
    if (digits >= 17) { return format(e, 17); }
    return format(round_for_display(e, digits, data), digits);
}

void write_archive_csv(std::vector<Candidate> const& entries, std::ostream& out, int digits, Dataset const* data)
{
    out << "complexity,train_fitness,validation_fitness,expression\n";
    for (auto const& c : entries) {
        out << c.complexity << ',' << fmt17(c.fitness.train) << ',' << fmt17(c.fitness.validate) << ','
            << quoted(display_expression(c.expression, digits, data)) << '\n';
    }
}

auto pick_entry(std::vector<Candidate> const& entries, std::optional<std::int64_t> complexity) -> Candidate const*
{
    Candidate const* best = nullptr;
    for (auto const& c : entries) {
        if (complexity) {
            if (c.complexity == *complexity) { return &c; }
        } else if (!best || c.fitness.validate < best->fitness.validate) {
            best = &c;
        }
    }
    return best;
}

namespace {

void write_file(std::filesystem::path const& path, auto&& writer)
{
    if (path.empty()) { return; }
    std::ofstream out(path);
    if (!out) { throw std::runtime_error("cannot write '" + path.string() + "'"); }
    writer(out);
    if (!out) { throw std::runtime_error("write failed for '" + path.string() + "'"); }
}

} // namespace

auto execute_run(RunSpec const& spec, PreparedRun prepared, std::ostream& log) -> RunOutcome
{
    RunOutcome r{std::move(prepared), {}, {}, {}};
    auto const& data = r.prepared.data;
    auto const& cfg = r.prepared.config;
    log << "dataset " << describe_source(spec.source) << ", " << data.rows() << " rows, columns";
    for (auto const& n : data.names()) { log << ' ' << n; }
    log << "\ntemplate " << spec.template_text << "\nmetric " << metric_name(cfg.metric) << ", seed " << cfg.seed
        << ", population " << cfg.population << (cfg.deterministic ? ", deterministic" : "") << '\n';

    ProgressSink sink;
    sink.on_improvement = [&](Candidate const& c) {
        log << "frontier gen " << c.generation << " t " << c.time << " complexity " << c.complexity << " train "
            << fmt17(c.fitness.train) << " validate " << fmt17(c.fitness.validate) << " : " << format(c.expression)
            << '\n';
    };
    sink.on_status = [&](SearchStatus const& s) {
        log << "status gen " << s.generation << " evaluations " << s.evaluations << " rate " << s.evaluations_per_second
            << "/s\n";
    };
    r.search = run_search(cfg, data, r.prepared.target, sink);
    auto const entries = r.search.archive.entries();
    log << "search done: " << r.search.generations << " generations, " << r.search.evaluations << " evaluations, "
        << r.search.seconds << " s" << (r.search.time_capped ? " (time cap)" : "") << '\n';

    auto const& target = r.prepared.target.target;
    if (spec.polish) {
        auto const& p = *spec.polish;
        if (p.snap_constants) {
            SplitAssignment const all(data.rows(), Tag::Both);
            auto const lib = ConstantLibrary::defaults();
            for (auto const& c : entries) {
                auto const s = snap_expression(c.expression, lib, data, target, cfg.metric);
                auto const f = score(s, data, all, cfg.metric, target);
                r.polished.push_back({c.complexity, c.expression, s, f ? f->train : c.fitness.validate});
                if (!(s == c.expression)) { log << "snapped " << format(c.expression) << " -> " << format(s) << '\n'; }
            }
        }
        if (!p.basis.empty()) {
            BasisSpec b{{}, target, p.prune_threshold};
            for (auto const& t : p.basis) { b.basis.push_back(parse(t, data.names())); }
            r.fit = linear_fit(data, b);
        } else if (p.bifocal_terms) {
            r.fit = bifocal_fit(data, *p.bifocal_terms, target, p.bifocal_variable);
        }
        if (r.fit) {
            log << "fit " << r.fit->terms.size() << " terms (" << r.fit->pruned.size() << " pruned), max residual "
                << fmt17(r.fit->max_residual) << '\n';
        }
    }

    int const digits = spec.output.digits;
    write_file(spec.output.archive, [&](std::ostream& out) { write_archive_csv(entries, out, digits, &data); });
    if (auto const* pick = pick_entry(entries, spec.output.residuals_complexity)) {
        write_file(spec.output.residuals, [&](std::ostream& out) { write_csv(residuals(pick->expression, data, target), out); });
    } else if (!spec.output.residuals.empty()) {
        log << "no archive entry for residuals\n";
    }
    write_file(spec.output.polish, [&](std::ostream& out) {
        out << "complexity,fitness,expression,snapped\n";
        for (auto const& p : r.polished) {
            out << p.complexity << ',' << fmt17(p.fitness) << ',' << quoted(format(p.original)) << ','
                << quoted(format(p.snapped)) << '\n';
        }
    });
    if (r.fit) { write_file(spec.output.fit_report, [&](std::ostream& out) { write_fit_report(*r.fit, out); }); }
    if (auto const* best = pick_entry(entries, std::nullopt)) {
        log << "best complexity " << best->complexity << " validate " << fmt17(best->fitness.validate) << " : "
            << format(best->expression) << '\n';
    }
    return r;
}

auto cli_run(CliOptions const& options, std::ostream& err) -> int
{
    RunSpec spec;
    std::optional<PreparedRun> prepared;
    try {
        spec = RunSpec::load(options.spec);
        if (options.deterministic) { spec.search.deterministic = true; }
        if (options.seed) { spec.search.seed = *options.seed; }
        if (options.budget_seconds) { spec.search.seconds = *options.budget_seconds; }
        if (options.export_digits) {
            if (*options.export_digits != 4 && *options.export_digits != 17) {
                throw SpecError("--export-digits must be 4 or 17");
            }
            spec.output.digits = *options.export_digits;
        }
        prepared = prepare(spec);
    } catch (std::exception const& e) {
        err << "srlab: " << e.what() << '\n';
        return 2;
    }
    try {
        std::ofstream log(spec.output.log);
        if (!log) { throw std::runtime_error("cannot write '" + spec.output.log.string() + "'"); }
        (void)execute_run(spec, std::move(*prepared), log);
    } catch (SpecError const& e) {
        err << "srlab: " << e.what() << '\n';
        return 2;
    } catch (std::exception const& e) {
        err << "srlab: run failed: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

} // namespace srlab
