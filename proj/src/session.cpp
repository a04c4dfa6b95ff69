#include <chrono>
#include <condition_variable>
#include <thread>

#include "srlab/interface.hpp"
#include "wire.hpp"

namespace srlab {

auto state_name(SessionState s) -> std::string_view
{
    switch (s) {
    case SessionState::Idle: return "idle";
    case SessionState::Running: return "running";
    case SessionState::Paused: return "paused";
    case SessionState::Stopped: return "stopped";
    case SessionState::Finished: return "finished";
    }
    return "";
}

auto is_terminal(SessionState s) -> bool { return s == SessionState::Stopped || s == SessionState::Finished; }

struct SessionManager::Session {
    using Clock = std::chrono::steady_clock;

    std::string id;
    std::string dataset_ref;
    std::string template_text;
    PreparedRun prepared; // immutable once created
    std::string config_json;
    double created_unix{0.0};
    Clock::time_point t0{Clock::now()};

    mutable std::mutex m;
    mutable std::condition_variable cv;
    SessionState state{SessionState::Idle};
    std::vector<Transition> transitions;
    std::vector<Event> events;
    ParetoArchive archive;
    std::thread worker;

    [[nodiscard]] auto now() const -> double { return std::chrono::duration<double>(Clock::now() - t0).count(); }

    // Callers hold `m`.
    void push(std::string kind, wire::json const& payload)
    {
        events.push_back(Event{static_cast<std::int64_t>(events.size()) + 1, now(), std::move(kind), payload.dump()});
        cv.notify_all();
    }
    void enter(SessionState s)
    {
        state = s;
        transitions.push_back({s, now()});
        push("state", {{"state", std::string(state_name(s))}});
    }

    void run()
    {
        ProgressSink sink;
        sink.on_improvement = [this](Candidate const& c) {
            auto const payload = wire::candidate(c, &prepared.data);
            std::lock_guard lock(m);
            if (is_terminal(state)) { return; }
            archive.insert(c);
            push("frontier", payload);
        };
        sink.on_status = [this](SearchStatus const& s) {
            std::lock_guard lock(m);
            if (is_terminal(state)) { return; }
            push("status", {{"generation", s.generation},
                            {"evaluations", s.evaluations},
                            {"evaluations_per_second", s.evaluations_per_second},
                            {"time", s.time}});
        };
        sink.keep_going = [this] {
            std::unique_lock lock(m);
            cv.wait(lock, [this] { return state != SessionState::Paused; });
            return state == SessionState::Running;
        };
        try {
            auto result = run_search(prepared.config, prepared.data, prepared.target, sink);
            std::lock_guard lock(m);
            if (!is_terminal(state)) {
                archive = std::move(result.archive);
                enter(SessionState::Finished);
            }
        } catch (std::exception const& e) {
            std::lock_guard lock(m);
            push("error", {{"message", e.what()}});
            if (!is_terminal(state)) { enter(SessionState::Finished); }
        }
    }
};

SessionManager::~SessionManager()
{
    std::lock_guard lock(mutex_);
    for (auto& [_, s] : sessions_) {
        {
            std::lock_guard sl(s->m);
            if (!is_terminal(s->state)) { s->enter(SessionState::Stopped); }
        }
        if (s->worker.joinable()) { s->worker.join(); }
    }
}

auto SessionManager::find(std::string const& id) const -> std::shared_ptr<Session>
{
    std::lock_guard lock(mutex_);
    auto const it = sessions_.find(id);
    if (it == sessions_.end()) { throw UnknownSession("unknown session '" + id + "'"); }
    return it->second;
}

auto SessionManager::create(RunSpec const& spec) -> std::string
{
    auto s = std::make_shared<Session>();
    s->prepared = prepare(spec);
    s->dataset_ref = describe_source(spec.source);
    s->template_text = spec.template_text;
    s->config_json = wire::config(s->prepared.config).dump();
    s->created_unix = std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
    s->transitions.push_back({SessionState::Idle, 0.0});
    std::lock_guard lock(mutex_);
    s->id = "s" + std::to_string(next_id_++);
    sessions_.emplace(s->id, s);
    return s->id;
}

void SessionManager::start(std::string const& id)
{
    auto s = find(id);
    std::lock_guard lock(s->m);
    if (s->state == SessionState::Idle) {
        s->enter(SessionState::Running);
        s->worker = std::thread([s] { s->run(); });
    } else if (s->state == SessionState::Paused) {
        s->enter(SessionState::Running);
    } else {
        throw IllegalTransition("cannot start a " + std::string(state_name(s->state)) + " session");
    }
}

void SessionManager::pause(std::string const& id)
{
    auto s = find(id);
    std::lock_guard lock(s->m);
    if (s->state != SessionState::Running) {
        throw IllegalTransition("cannot pause a " + std::string(state_name(s->state)) + " session");
    }
    s->enter(SessionState::Paused);
}

void SessionManager::stop(std::string const& id)
{
    auto s = find(id);
    std::lock_guard lock(s->m);
    if (!is_terminal(s->state)) { s->enter(SessionState::Stopped); }
}

auto SessionManager::describe(std::string const& id) const -> SessionDescriptor
{
    auto s = find(id);
    std::lock_guard lock(s->m);
    return SessionDescriptor{s->id,    s->dataset_ref,  s->template_text, s->config_json,
                             s->state, s->created_unix, s->transitions};
}

auto SessionManager::list() const -> std::vector<SessionDescriptor>
{
    std::vector<std::string> ids;
    {
        std::lock_guard lock(mutex_);
        for (auto const& [id, _] : sessions_) { ids.push_back(id); }
    }
    std::vector<SessionDescriptor> out;
    for (auto const& id : ids) { out.push_back(describe(id)); }
    return out;
}

auto SessionManager::archive(std::string const& id) const -> ArchiveSnapshot
{
    auto s = find(id);
    std::lock_guard lock(s->m);
    return ArchiveSnapshot{static_cast<std::int64_t>(s->events.size()), s->state, s->archive.entries()};
}

auto SessionManager::residuals(std::string const& id, std::optional<std::int64_t> complexity) const
    -> std::pair<Candidate, Dataset>
{
    auto s = find(id);
    auto const entries = archive(id).entries;
    auto const* c = pick_entry(entries, complexity);
    if (!c) {
        throw SessionError(complexity ? "no archive entry at complexity " + std::to_string(*complexity)
                                      : std::string("archive is empty"));
    }
    return {*c, srlab::residuals(c->expression, s->prepared.data, s->prepared.target.target)};
}

auto SessionManager::dataset(std::string const& id) const -> Dataset const& { return find(id)->prepared.data; }

auto SessionManager::events(std::string const& id, std::int64_t after, int timeout_ms) const -> std::vector<Event>
{
    auto s = find(id);
    std::unique_lock lock(s->m);
    auto const have = [&] { return static_cast<std::int64_t>(s->events.size()) > after; };
    if (timeout_ms > 0) { s->cv.wait_for(lock, std::chrono::milliseconds(timeout_ms), have); }
    auto const from = static_cast<std::size_t>(std::max<std::int64_t>(after, 0));
    if (from >= s->events.size()) { return {}; }
    return {s->events.begin() + static_cast<std::ptrdiff_t>(from), s->events.end()};
}

auto SessionManager::wait(std::string const& id, int timeout_ms) const -> bool
{
    auto s = find(id);
    std::unique_lock lock(s->m);
    return s->cv.wait_for(lock, std::chrono::milliseconds(timeout_ms), [&] { return is_terminal(s->state); });
}

} // namespace srlab
