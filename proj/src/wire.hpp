#ifndef SRLAB_SRC_WIRE_HPP
#define SRLAB_SRC_WIRE_HPP

// JSON shapes shared by the session manager and the HTTP endpoints.

#include <json.hpp>

#include "srlab/interface.hpp"

namespace srlab::wire {

using nlohmann::json;

inline auto candidate(Candidate const& c, Dataset const* data) -> json
{
    return {{"complexity", c.complexity},
            {"train_fitness", c.fitness.train},
            {"validation_fitness", c.fitness.validate},
            {"expression", format(c.expression, 17)},
            {"expression_4", display_expression(c.expression, 4, data)},
            {"generation", c.generation},
            {"time", c.time}};
}

inline auto config(SearchConfig const& c) -> json
{
    json blocks = json::object();
    for (auto b : c.blocks) {
        auto const it = c.profile.weights.find(b);
        blocks[std::string(block_info(b).name)] =
            it == c.profile.weights.end() ? block_info(b).default_weight : it->second;
    }
    auto const kind = c.split.kind == SplitStrategy::Kind::Random        ? "random"
                      : c.split.kind == SplitStrategy::Kind::Alternating ? "alternating"
                                                                         : "all_both";
    json j = {{"blocks", blocks},
              {"metric", std::string(metric_name(c.metric))},
              {"real_constants", c.real_constants},
              {"integer_constants", c.integer_constants},
              {"split",
               {{"kind", kind}, {"train_percent", c.split.train_percent}, {"validate_percent", c.split.validate_percent}}},
              {"seed", c.seed},
              {"population", c.population},
              {"workers", c.workers},
              {"deterministic", c.deterministic}};
    if (c.generations) { j["generations"] = *c.generations; }
    if (c.seconds) { j["seconds"] = *c.seconds; }
    if (c.stop_fitness) { j["stop_fitness"] = *c.stop_fitness; }
    return j;
}

inline auto descriptor(SessionDescriptor const& d) -> json
{
    json transitions = json::array();
    for (auto const& t : d.transitions) {
        transitions.push_back({{"state", std::string(state_name(t.state))}, {"time", t.time}});
    }
    return {{"id", d.id},
            {"dataset", d.dataset},
            {"template", d.template_text},
            {"config", json::parse(d.config)},
            {"state", std::string(state_name(d.state))},
            {"created", d.created},
            {"transitions", transitions}};
}

inline auto event(Event const& e) -> json
{
    return {{"seq", e.seq}, {"time", e.time}, {"kind", e.kind}, {"payload", json::parse(e.payload)}};
}

} // namespace srlab::wire

#endif
