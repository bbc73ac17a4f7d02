// Independent feasibility checker.
//
// Replays a vertex sequence with its own transition arithmetic, written
// directly from the update rules and deliberately not sharing code with
// env::step (instance accessors for distance/energy/recharge are shared data
// queries, not transition logic). Serves as the reference the environment is
// tested against, and as the feasibility report attached to solutions.
#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "evrptw/instance.hpp"

namespace evrptw::validate {

struct Transition {
    double tau = 0.0;
    double battery = 0.0;
    int ev_left = 0;
    double cargo = 0.0;
    std::vector<double> demand;
};

// Trace of the state after every move of the sequence (element 0 is the
// initial state). Accepts any sequence, feasible or not.
inline std::vector<Transition> replay(const Instance& inst, const std::vector<int>& seq) {
    const FleetSpec& fleet = inst.fleet();
    std::vector<Transition> trace;
    trace.reserve(seq.size());

    Transition st;
    st.tau = 0.0;
    st.battery = fleet.battery_cap;
    st.ev_left = fleet.n_ev;
    st.cargo = fleet.cargo_cap;
    st.demand.resize(static_cast<std::size_t>(inst.size()));
    for (int v = 0; v < inst.size(); ++v) st.demand[static_cast<std::size_t>(v)] = inst.vertex(v).demand0;
    trace.push_back(st);

    for (std::size_t t = 1; t < seq.size(); ++t) {
        const int from = seq[t - 1];
        const int to = seq[t];
        const Vertex& vf = inst.vertex(from);
        Transition next = st;

        // clock
        if (vf.kind == VertexKind::Customer)
            next.tau = std::max(st.tau, vf.e) + fleet.service_time + inst.distance(from, to);
        else if (vf.kind == VertexKind::Station)
            next.tau = st.tau + recharge_time(fleet, st.battery) + inst.distance(from, to);
        else
            next.tau = inst.distance(from, to);

        // battery
        if (vf.kind == VertexKind::Customer)
            next.battery = st.battery - inst.energy(from, to);
        else
            next.battery = fleet.battery_cap - inst.energy(from, to);

        // fleet
        next.ev_left = st.ev_left - (vf.kind == VertexKind::Depot ? 1 : 0);

        // demand and cargo
        if (inst.vertex(to).kind == VertexKind::Customer) {
            const double d = st.demand[static_cast<std::size_t>(to)];
            next.cargo = st.cargo - std::min(st.cargo, d);
            next.demand[static_cast<std::size_t>(to)] = 0.0;
        }
        if (inst.vertex(to).kind == VertexKind::Depot) next.cargo = fleet.cargo_cap;

        trace.push_back(next);
        st = std::move(next);
    }
    return trace;
}

enum class ViolationKind {
    NotDepotBounded,
    TimeWindow,
    NegativeBattery,
    CargoShortfall,
    UnservedDemand,
    FleetOveruse,
    HorizonOverrun,
};

inline const char* to_string(ViolationKind k) {
    switch (k) {
        case ViolationKind::NotDepotBounded: return "not_depot_bounded";
        case ViolationKind::TimeWindow: return "time_window";
        case ViolationKind::NegativeBattery: return "negative_battery";
        case ViolationKind::CargoShortfall: return "cargo_shortfall";
        case ViolationKind::UnservedDemand: return "unserved_demand";
        case ViolationKind::FleetOveruse: return "fleet_overuse";
        case ViolationKind::HorizonOverrun: return "horizon_overrun";
    }
    return "?";
}

struct Violation {
    ViolationKind kind;
    int step = -1;    // index into the sequence, -1 for end-of-sequence checks
    int vertex = -1;  // offending vertex, -1 when not applicable
    double amount = 0.0;
    std::string detail;
};

struct Report {
    std::vector<Violation> violations;
    bool feasible() const { return violations.empty(); }
};

inline Report validate_sequence(const Instance& inst, const std::vector<int>& seq) {
    Report rep;
    auto add = [&rep](ViolationKind k, int step, int vertex, double amount, std::string detail) {
        rep.violations.push_back({k, step, vertex, amount, std::move(detail)});
    };

    if (seq.empty() || seq.front() != Instance::depot || seq.back() != Instance::depot) {
        add(ViolationKind::NotDepotBounded, -1, -1, 0.0,
            "sequence must start and end at the depot");
    }
    if (seq.empty()) return rep;

    const auto trace = replay(inst, seq);
    for (std::size_t t = 1; t < seq.size(); ++t) {
        const int v = seq[t];
        const Transition& before = trace[t - 1];
        const Transition& after = trace[t];
        const Vertex& vx = inst.vertex(v);
        if (vx.kind == VertexKind::Customer && before.demand[static_cast<std::size_t>(v)] > 0.0) {
            // serving visit: arrival must not exceed the window close
            if (after.tau > vx.l)
                add(ViolationKind::TimeWindow, static_cast<int>(t), v, after.tau - vx.l,
                    "arrived after window close");
            const double d = before.demand[static_cast<std::size_t>(v)];
            if (d > before.cargo)
                add(ViolationKind::CargoShortfall, static_cast<int>(t), v, d - before.cargo,
                    "demand exceeds remaining cargo");
        }
        if (after.battery < 0.0)
            add(ViolationKind::NegativeBattery, static_cast<int>(t), v, -after.battery,
                "battery below zero");
        if (vx.kind == VertexKind::Depot && after.tau > inst.fleet().horizon)
            add(ViolationKind::HorizonOverrun, static_cast<int>(t), v,
                after.tau - inst.fleet().horizon, "route returned after the horizon");
    }
    const Transition& fin = trace.back();
    for (int v = 0; v < inst.size(); ++v) {
        const double d = fin.demand[static_cast<std::size_t>(v)];
        if (d > 0.0)
            add(ViolationKind::UnservedDemand, -1, v, d, "customer demand left unserved");
    }
    if (fin.ev_left < 0)
        add(ViolationKind::FleetOveruse, -1, -1, static_cast<double>(-fin.ev_left),
            "more routes than EVs");
    return rep;
}

inline nlohmann::json to_json(const Report& rep) {
    nlohmann::json arr = nlohmann::json::array();
    for (const Violation& v : rep.violations) {
        arr.push_back({{"kind", to_string(v.kind)},
                       {"step", v.step},
                       {"vertex", v.vertex},
                       {"amount", v.amount},
                       {"detail", v.detail}});
    }
    return arr;
}

}  // namespace evrptw::validate
