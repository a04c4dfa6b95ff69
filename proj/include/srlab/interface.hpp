#ifndef SRLAB_INTERFACE_HPP
#define SRLAB_INTERFACE_HPP

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "srlab/dataset.hpp"
#include "srlab/polish.hpp"
#include "srlab/search.hpp"

namespace srlab {

class SpecError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// run specification

struct CsvSource {
    std::filesystem::path path;
};
struct InlineCsvSource {
    std::string text;
};
struct TabulateSource {
    std::string expression;
    SamplePlan plan;
    std::string target{"y"};
};
struct QuadratureSource {
    QuadratureRequest request;
    PlanAxis points;
    std::string target{"y"};
};
using DataSource = std::variant<CsvSource, InlineCsvSource, TabulateSource, QuadratureSource>;

struct DerivedColumn {
    std::string name;
    std::string expression;
};

struct PolishSpec {
    bool snap_constants{false};
    std::vector<std::string> basis; // explicit linear-fit basis
    std::optional<int> bifocal_terms;
    std::string bifocal_variable{"x"};
    double prune_threshold{1e-12};
};

struct OutputSpec {
    std::filesystem::path archive;
    std::filesystem::path residuals;
    std::filesystem::path log;
    std::filesystem::path polish;     // snapped archive entries
    std::filesystem::path fit_report; // linear or bifocal fit
    int digits{17};
    /// Entry whose residuals are written; the best entry when unset.
    std::optional<std::int64_t> residuals_complexity;
};

/// JSON run description:
///   {"dataset": {"csv": path} | {"csv_text": "..."} | {"tabulate": {...}} | {"quadrature": {...}},
///    "derive": [{"name", "expression"}], "template": "y = f(x)", "constraints": ["f(x) > 7"],
///    "search": {...}, "polish": {...}, "output": {...}}
/// Unknown keys and block names are rejected.
struct RunSpec {
    DataSource source;
    std::vector<DerivedColumn> derive;
    std::string template_text{"y = f(x)"};
    std::vector<std::string> constraints;
    SearchConfig search;
    std::optional<PolishSpec> polish;
    OutputSpec output;

    /// Relative paths resolve against `base`.
    static auto parse(std::string_view json_text, std::filesystem::path const& base = {}) -> RunSpec;
    /// Output paths not given default to <spec stem>_archive.csv,
    /// <stem>_residuals.csv and <stem>.log beside the spec file.
    static auto load(std::filesystem::path const& path) -> RunSpec;
};

auto describe_source(DataSource const& s) -> std::string;

/// Ingested, derived and validated inputs of a run.
struct PreparedRun {
    Dataset data;
    TargetTemplate target;
    SearchConfig config;
};

/// Throws SpecError, wrapping data, parse and configuration errors.
auto prepare(RunSpec const& spec) -> PreparedRun;

// ---------------------------------------------------------------------------
// export

/// Columns complexity, train_fitness, validation_fitness, expression. With
/// 4 digits the expression is rounded for display against `data`.
void write_archive_csv(std::vector<Candidate> const& entries, std::ostream& out, int digits = 17,
                       Dataset const* data = nullptr);

auto display_expression(Expression const& e, int digits, Dataset const* data = nullptr) -> std::string;

/// Archive entry at `complexity`, or the lowest validation fitness when unset.
auto pick_entry(std::vector<Candidate> const& entries, std::optional<std::int64_t> complexity) -> Candidate const*;

struct PolishedEntry {
    std::int64_t complexity{0};
    Expression original;
    Expression snapped;
    double fitness{0.0}; // metric over all rows, after snapping
};

struct RunOutcome {
    PreparedRun prepared;
    SearchResult search;
    std::vector<PolishedEntry> polished;
    std::optional<LinearFit> fit;
};

/// search, polish, export on prepared inputs. Writes every configured output.
auto execute_run(RunSpec const& spec, PreparedRun prepared, std::ostream& log) -> RunOutcome;

struct CliOptions {
    std::filesystem::path spec;
    bool deterministic{false};
    std::optional<std::uint64_t> seed;
    std::optional<double> budget_seconds;
    std::optional<int> export_digits;
};

/// Exit status 0 on success; 2 for an invalid spec or data, 1 for a run
/// failure. Diagnostics go to `err`.
auto cli_run(CliOptions const& options, std::ostream& err) -> int;

// ---------------------------------------------------------------------------
// sessions

enum class SessionState : std::uint8_t { Idle, Running, Paused, Stopped, Finished };

auto state_name(SessionState s) -> std::string_view;

class SessionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class UnknownSession : public SessionError {
public:
    using SessionError::SessionError;
};
class IllegalTransition : public SessionError {
public:
    using SessionError::SessionError;
};

struct Transition {
    SessionState state;
    double time; // seconds since creation
};

struct SessionDescriptor {
    std::string id;
    std::string dataset;
    std::string template_text;
    std::string config; // JSON
    SessionState state{SessionState::Idle};
    double created{0.0}; // unix seconds
    std::vector<Transition> transitions;
};

/// Kinds: "state" {state}, "frontier" {complexity, train_fitness,
/// validation_fitness, expression, expression_4, generation, time},
/// "status" {generation, evaluations, evaluations_per_second, time}.
struct Event {
    std::int64_t seq{0};
    double time{0.0};
    std::string kind;
    std::string payload; // JSON object
};

struct ArchiveSnapshot {
    std::int64_t seq{0}; // last event reflected in the entries
    SessionState state{SessionState::Idle};
    std::vector<Candidate> entries;
};

/// Owns concurrent search sessions. Each running session has its own thread;
/// every call only takes a short lock, so none waits on a search.
class SessionManager {
public:
    SessionManager() = default;
    SessionManager(SessionManager const&) = delete;
    auto operator=(SessionManager const&) -> SessionManager& = delete;
    ~SessionManager();

    /// Validates and ingests the spec; the dataset copy is fixed for the
    /// session's lifetime. Throws SpecError.
    auto create(RunSpec const& spec) -> std::string;
    void start(std::string const& id); // idle -> running, paused -> running
    /// Takes effect once the in-flight generation completes.
    void pause(std::string const& id);
    /// Idempotent; stopping a finished session leaves it finished.
    void stop(std::string const& id);

    [[nodiscard]] auto describe(std::string const& id) const -> SessionDescriptor;
    [[nodiscard]] auto list() const -> std::vector<SessionDescriptor>;
    [[nodiscard]] auto archive(std::string const& id) const -> ArchiveSnapshot;
    /// Residuals of the entry at `complexity` (best entry when unset).
    [[nodiscard]] auto residuals(std::string const& id, std::optional<std::int64_t> complexity) const
        -> std::pair<Candidate, Dataset>;
    [[nodiscard]] auto dataset(std::string const& id) const -> Dataset const&;

    /// Events with seq > after, waiting up to `timeout_ms` for the first one.
    [[nodiscard]] auto events(std::string const& id, std::int64_t after, int timeout_ms = 0) const
        -> std::vector<Event>;
    /// Waits until the session is stopped or finished.
    auto wait(std::string const& id, int timeout_ms) const -> bool;

private:
    struct Session;
    [[nodiscard]] auto find(std::string const& id) const -> std::shared_ptr<Session>;

    mutable std::mutex mutex_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
    std::int64_t next_id_{1};
};

auto is_terminal(SessionState s) -> bool;

// ---------------------------------------------------------------------------
// HTTP

/// JSON endpoints under /api plus a server-sent event stream:
///   GET  /api/blocks                       block names, arities, weights
///   POST /api/templates/validate           {"template", "columns"}
///   POST /api/sessions                     RunSpec JSON -> descriptor
///   GET  /api/sessions[/{id}]
///   POST /api/sessions/{id}/{start|pause|stop}
///   GET  /api/sessions/{id}/archive        ?format=csv&digits=4
///   GET  /api/sessions/{id}/residuals      ?complexity=N&format=csv
///   GET  /api/sessions/{id}/events         ?after=N; stream=0 for a JSON array
/// Errors: 400 malformed spec, 404 unknown session, 409 illegal transition.
class HttpService {
public:
    explicit HttpService(SessionManager& sessions);
    ~HttpService();
    HttpService(HttpService const&) = delete;
    auto operator=(HttpService const&) -> HttpService& = delete;

    /// Binds and serves on a background thread; port 0 picks a free one.
    auto start(std::string const& host, int port) -> int;
    /// Blocks until stopped.
    void listen(std::string const& host, int port);
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace srlab

#endif
