// The EVRPTW decision process: rollout state, transition dynamics, masking,
// reward, termination, and route decomposition.
//
// Transitions are raw dynamics: any vertex may be stepped to, including moves
// the mask forbids; infeasible exploration is penalized by the reward, not
// rejected. The clock resets on every depot departure, so each route is timed
// from 0.
#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "evrptw/instance.hpp"

namespace evrptw::env {

// Reward constants: fleet excess, station visits, negative battery.
inline constexpr double kBetaFleet = -1.0;
inline constexpr double kBetaStation = -0.3;
inline constexpr double kBetaBattery = -100.0;

struct State {
    int t = 0;
    double tau = 0.0;
    double battery = 0.0;
    double cargo = 0.0;
    int ev_left = 0;  // may go negative under raw dynamics
    std::vector<double> demand;
    int current = 0;
    std::vector<int> trajectory;
};

struct Mask {
    std::vector<std::uint8_t> selectable;
    bool any() const {
        for (auto b : selectable)
            if (b) return true;
        return false;
    }
    bool operator[](int i) const { return selectable[static_cast<std::size_t>(i)] != 0; }
};

struct RewardBreakdown {
    double distance_term = 0.0;    // sum of edge weights (>= 0)
    double fleet_penalty = 0.0;    // kBetaFleet * max(-ev_end, 0)
    double station_penalty = 0.0;  // kBetaStation * station visit count
    double battery_penalty = 0.0;  // kBetaBattery * sum of battery deficits
    double total = 0.0;
};

struct Solution {
    std::vector<int> sequence;
    std::vector<std::vector<int>> routes;
    double total_distance = 0.0;
    RewardBreakdown reward;
    std::vector<double> step_log_probs;  // empty for oracle/heuristic solutions
};

inline State reset(const Instance& inst) {
    State s;
    s.t = 0;
    s.tau = 0.0;
    s.battery = inst.fleet().battery_cap;
    s.cargo = inst.fleet().cargo_cap;
    s.ev_left = inst.fleet().n_ev;
    s.demand.resize(static_cast<std::size_t>(inst.size()));
    for (int i = 0; i < inst.size(); ++i) s.demand[static_cast<std::size_t>(i)] = inst.vertex(i).demand0;
    s.current = Instance::depot;
    s.trajectory = {Instance::depot};
    return s;
}

// Clock at which the EV is ready to leave the current vertex: after waiting
// and service at a customer, after the full recharge at a station, and at 0
// from the depot (each route is timed independently).
inline double depart_clock(const Instance& inst, const State& s) {
    const Vertex& v = inst.vertex(s.current);
    switch (v.kind) {
        case VertexKind::Customer:
            return std::max(s.tau, v.e) + inst.fleet().service_time;
        case VertexKind::Station:
            return s.tau + recharge_time(inst.fleet(), s.battery);
        case VertexKind::Depot:
            return 0.0;
    }
    return 0.0;
}

// Battery available for the next leg; departing the depot or a station the
// EV leaves fully charged.
inline double depart_battery(const Instance& inst, const State& s) {
    return inst.is_customer(s.current) ? s.battery : inst.fleet().battery_cap;
}

inline State step(const Instance& inst, const State& s, int j) {
    if (j < 0 || j >= inst.size()) throw std::out_of_range("step: vertex index out of range");
    const int i = s.current;
    State n = s;
    n.t = s.t + 1;
    n.tau = depart_clock(inst, s) + inst.distance(i, j);
    n.battery = depart_battery(inst, s) - inst.energy(i, j);
    n.ev_left = s.ev_left - (inst.is_depot(i) ? 1 : 0);
    if (inst.is_customer(j)) {
        const double served = std::min(s.cargo, s.demand[static_cast<std::size_t>(j)]);
        n.cargo = s.cargo - served;
        n.demand[static_cast<std::size_t>(j)] = 0.0;
    }
    if (inst.is_depot(j)) n.cargo = inst.fleet().cargo_cap;
    n.current = j;
    n.trajectory.push_back(j);
    return n;
}

inline bool all_served(const State& s) {
    for (double d : s.demand)
        if (d != 0.0) return false;
    return true;
}

inline bool is_terminal(const Instance&, const State& s) {
    return s.current == Instance::depot && all_served(s);
}

// Feasibility mask over next vertices. Arrival times are previewed with the
// same departure rules as step(), so mask-respecting rollouts never violate
// windows, battery, cargo, or the horizon.
inline Mask mask(const Instance& inst, const State& s) {
    const int n = inst.size();
    const int i = s.current;
    const double T = inst.fleet().horizon;
    const double svc = inst.fleet().service_time;
    const double depart = depart_clock(inst, s);
    const double b_avail = depart_battery(inst, s);
    const bool at_depot_done = (i == Instance::depot) && all_served(s);

    Mask m;
    m.selectable.assign(static_cast<std::size_t>(n), 0);
    if (at_depot_done) {  // M5: everything masked except staying at the depot
        m.selectable[Instance::depot] = 1;
        return m;
    }
    for (int j = 0; j < n; ++j) {
        if (j == i) continue;  // no self-loops outside the M5 case
        const Vertex& vj = inst.vertex(j);
        const double w_ij = inst.distance(i, j);
        const double f_ij = inst.energy(i, j);
        if (b_avail < f_ij) continue;  // battery cannot cover the leg
        const double arrival = depart + w_ij;
        if (arrival > vj.l) continue;  // window already closed (strict)
        switch (vj.kind) {
            case VertexKind::Customer: {
                const double d = s.demand[static_cast<std::size_t>(j)];
                if (d == 0.0 || d > s.cargo) continue;
                if (b_avail < f_ij + inst.energy(j, Instance::depot)) continue;
                if (std::max(arrival, vj.e) + svc + inst.distance(j, Instance::depot) > T) continue;
                break;
            }
            case VertexKind::Station: {
                const double b_at_j = b_avail - f_ij;
                if (arrival + recharge_time(inst.fleet(), b_at_j) + inst.distance(j, Instance::depot) > T)
                    continue;
                break;
            }
            case VertexKind::Depot:
                if (arrival > T) continue;
                break;
        }
        m.selectable[static_cast<std::size_t>(j)] = 1;
    }
    return m;
}

inline double path_distance(const Instance& inst, const std::vector<int>& seq) {
    double d = 0.0;
    for (std::size_t t = 1; t < seq.size(); ++t) d += inst.distance(seq[t - 1], seq[t]);
    return d;
}

// Reward of a depot-bounded vertex sequence: negative total distance plus
// penalties for fleet excess, station visits, and battery deficits along the
// replayed trajectory.
inline RewardBreakdown reward(const Instance& inst, const std::vector<int>& seq) {
    if (seq.empty() || seq.front() != Instance::depot || seq.back() != Instance::depot)
        throw std::invalid_argument("reward: sequence must start and end at the depot");
    RewardBreakdown r;
    State s = reset(inst);
    double deficit = std::max(-s.battery, 0.0);
    int stations = 0;
    for (std::size_t t = 1; t < seq.size(); ++t) {
        r.distance_term += inst.distance(seq[t - 1], seq[t]);
        s = step(inst, s, seq[t]);
        deficit += std::max(-s.battery, 0.0);
        if (inst.is_station(seq[t])) ++stations;
    }
    r.fleet_penalty = kBetaFleet * std::max(static_cast<double>(-s.ev_left), 0.0);
    r.station_penalty = kBetaStation * stations;
    r.battery_penalty = kBetaBattery * deficit;
    r.total = -r.distance_term + r.fleet_penalty + r.station_penalty + r.battery_penalty;
    return r;
}

// Splits a sequence on depot visits; empty routes (consecutive depots) are
// dropped. A trailing depot-less segment is kept as a (malformed) route.
inline std::vector<std::vector<int>> decompose_routes(const std::vector<int>& seq) {
    std::vector<std::vector<int>> routes;
    std::vector<int> cur;
    for (std::size_t t = 0; t < seq.size(); ++t) {
        const int v = seq[t];
        if (v == Instance::depot) {
            if (cur.size() > 1) {
                cur.push_back(v);
                routes.push_back(cur);
            }
            cur = {v};
        } else {
            if (cur.empty()) cur.push_back(Instance::depot);
            cur.push_back(v);
        }
    }
    if (cur.size() > 1) routes.push_back(cur);
    return routes;
}

// Rollouts longer than this abort; see capped_reward.
inline int step_cap(const Instance& inst) { return 4 * inst.size() + 2 * inst.fleet().n_ev; }

// Divergence reward assigned to step-capped training rollouts.
inline double capped_reward(const Instance& inst) {
    return -(4.0 * std::sqrt(2.0) * static_cast<double>(step_cap(inst)));
}

inline Solution make_solution(const Instance& inst, std::vector<int> seq,
                              std::vector<double> step_log_probs = {}) {
    Solution sol;
    sol.total_distance = path_distance(inst, seq);
    sol.routes = decompose_routes(seq);
    sol.reward = reward(inst, seq);
    sol.sequence = std::move(seq);
    sol.step_log_probs = std::move(step_log_probs);
    return sol;
}

inline nlohmann::json to_json(const RewardBreakdown& r) {
    return {{"distance_term", r.distance_term},
            {"fleet_penalty", r.fleet_penalty},
            {"station_penalty", r.station_penalty},
            {"battery_penalty", r.battery_penalty},
            {"total", r.total}};
}

}  // namespace evrptw::env
