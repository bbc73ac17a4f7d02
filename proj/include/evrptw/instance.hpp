// EVRPTW instance data model, random generator, and the on-disk JSON format.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "evrptw/rng.hpp"

namespace evrptw {

enum class VertexKind { Depot, Customer, Station };

inline const char* to_string(VertexKind k) {
    switch (k) {
        case VertexKind::Depot: return "depot";
        case VertexKind::Customer: return "customer";
        case VertexKind::Station: return "station";
    }
    return "?";
}

inline VertexKind vertex_kind_from_string(const std::string& s) {
    if (s == "depot") return VertexKind::Depot;
    if (s == "customer") return VertexKind::Customer;
    if (s == "station") return VertexKind::Station;
    throw std::runtime_error("unknown vertex kind: " + s);
}

struct Vertex {
    int id = 0;
    VertexKind kind = VertexKind::Customer;
    double x = 0.0;      // coordinate in [0,1]
    double z = 0.0;      // coordinate in [0,1]
    double e = 0.0;      // window open
    double l = 1.0;      // window close
    double demand0 = 0;  // initial demand, 0 for depot/stations

    bool operator==(const Vertex&) const = default;
};

struct FleetSpec {
    int n_ev = 3;
    double cargo_cap = 1.0;
    double battery_cap = 1.0;
    double horizon = 1.0;
    double service_time = 0.0;
    double recharge_full_time = 0.25;
    double energy_per_dist = 0.6;  // battery_cap * (0.15 / 0.25) under the default normalization

    bool operator==(const FleetSpec&) const = default;
};

// Linear full-recharge time from level b (clamped to [0, B]).
inline double recharge_time(const FleetSpec& fleet, double b) {
    const double bc = std::clamp(b, 0.0, fleet.battery_cap);
    return fleet.recharge_full_time * (fleet.battery_cap - bc) / fleet.battery_cap;
}

// Immutable problem data. Vertex 0 is always the depot; the graph is complete
// with symmetric Euclidean edge weights.
class Instance {
public:
    Instance(std::vector<Vertex> vertices, FleetSpec fleet,
             std::optional<std::uint64_t> seed = std::nullopt)
        : vertices_(std::move(vertices)), fleet_(fleet), seed_(seed) {
        check_invariants();
    }

    const std::vector<Vertex>& vertices() const { return vertices_; }
    const Vertex& vertex(int i) const { return vertices_.at(static_cast<std::size_t>(i)); }
    const FleetSpec& fleet() const { return fleet_; }
    std::optional<std::uint64_t> seed() const { return seed_; }

    int size() const { return static_cast<int>(vertices_.size()); }
    static constexpr int depot = 0;

    bool is_depot(int i) const { return vertex(i).kind == VertexKind::Depot; }
    bool is_customer(int i) const { return vertex(i).kind == VertexKind::Customer; }
    bool is_station(int i) const { return vertex(i).kind == VertexKind::Station; }

    int n_customers() const { return count(VertexKind::Customer); }
    int n_stations() const { return count(VertexKind::Station); }

    // Euclidean edge weight; also the travel time at unit speed.
    double distance(int i, int j) const {
        const Vertex& a = vertex(i);
        const Vertex& b = vertex(j);
        const double dx = a.x - b.x;
        const double dz = a.z - b.z;
        return std::sqrt(dx * dx + dz * dz);
    }

    double energy(int i, int j) const { return fleet_.energy_per_dist * distance(i, j); }

    bool operator==(const Instance& o) const {
        return vertices_ == o.vertices_ && fleet_ == o.fleet_ && seed_ == o.seed_;
    }

private:
    int count(VertexKind k) const {
        return static_cast<int>(std::count_if(vertices_.begin(), vertices_.end(),
                                              [k](const Vertex& v) { return v.kind == k; }));
    }

    void check_invariants() const {
        if (vertices_.empty()) throw std::runtime_error("instance has no vertices");
        if (vertices_.front().kind != VertexKind::Depot)
            throw std::runtime_error("vertex 0 must be the depot");
        if (count(VertexKind::Depot) != 1) throw std::runtime_error("exactly one depot required");
        if (fleet_.n_ev <= 0 || fleet_.cargo_cap <= 0 || fleet_.battery_cap <= 0 ||
            fleet_.horizon <= 0 || fleet_.recharge_full_time <= 0 || fleet_.energy_per_dist <= 0 ||
            fleet_.service_time < 0)
            throw std::runtime_error("fleet constants out of range");
        for (std::size_t i = 0; i < vertices_.size(); ++i) {
            const Vertex& v = vertices_[i];
            if (v.id != static_cast<int>(i)) throw std::runtime_error("vertex ids must match positions");
            if (!(v.x >= 0.0 && v.x <= 1.0 && v.z >= 0.0 && v.z <= 1.0))
                throw std::runtime_error("vertex coordinates must lie in [0,1]^2");
            if (!(v.e <= v.l)) throw std::runtime_error("time window has e > l");
            if (v.e < 0.0 || v.l > fleet_.horizon)
                throw std::runtime_error("time window outside planning horizon");
            if (v.kind == VertexKind::Customer) {
                if (!(v.demand0 > 0.0)) throw std::runtime_error("customer demand must be positive");
            } else {
                if (v.demand0 != 0.0) throw std::runtime_error("depot/station demand must be zero");
                if (v.e != 0.0 || v.l != fleet_.horizon)
                    throw std::runtime_error("depot/station window must span the horizon");
            }
        }
    }

    std::vector<Vertex> vertices_;
    FleetSpec fleet_;
    std::optional<std::uint64_t> seed_;
};

// Random instance: vertices i.i.d. uniform on [0,1]^2, customer demands from
// {0.05, 0.10, 0.15, 0.20}, window center ~ U[0,1] with Normal(0.2, 0.05)
// length (clamped at 0), windows trimmed to the horizon. Feasibility is not
// guaranteed. Vertex order: depot, customers, stations.
inline Instance generate(int n_customers, int n_stations, int n_ev, rng::Stream& rng,
                         std::optional<std::uint64_t> provenance_seed = std::nullopt) {
    if (n_customers < 1) throw std::invalid_argument("need at least one customer");
    if (n_stations < 0 || n_ev < 1) throw std::invalid_argument("bad counts");
    FleetSpec fleet;
    fleet.n_ev = n_ev;

    static constexpr double kDemandChoices[] = {0.05, 0.10, 0.15, 0.20};

    std::vector<Vertex> vs;
    vs.reserve(static_cast<std::size_t>(1 + n_customers + n_stations));
    Vertex depot;
    depot.id = 0;
    depot.kind = VertexKind::Depot;
    depot.x = rng.uniform();
    depot.z = rng.uniform();
    depot.e = 0.0;
    depot.l = fleet.horizon;
    vs.push_back(depot);

    for (int c = 0; c < n_customers; ++c) {
        Vertex v;
        v.id = static_cast<int>(vs.size());
        v.kind = VertexKind::Customer;
        v.x = rng.uniform();
        v.z = rng.uniform();
        v.demand0 = kDemandChoices[rng.index(4)];
        const double center = rng.uniform();
        const double len = std::max(0.0, rng.normal(0.2, 0.05));
        v.e = std::max(0.0, center - len / 2.0);
        v.l = std::min(fleet.horizon, center + len / 2.0);
        vs.push_back(v);
    }
    for (int s = 0; s < n_stations; ++s) {
        Vertex v;
        v.id = static_cast<int>(vs.size());
        v.kind = VertexKind::Station;
        v.x = rng.uniform();
        v.z = rng.uniform();
        v.e = 0.0;
        v.l = fleet.horizon;
        vs.push_back(v);
    }
    return Instance(std::move(vs), fleet, provenance_seed);
}

inline nlohmann::json to_json(const Instance& inst) {
    const FleetSpec& f = inst.fleet();
    nlohmann::json j;
    j["schema_version"] = "1";
    j["fleet"] = {{"n_ev", f.n_ev},
                  {"cargo_cap", f.cargo_cap},
                  {"battery_cap", f.battery_cap},
                  {"horizon", f.horizon},
                  {"service_time", f.service_time},
                  {"recharge_full_time", f.recharge_full_time},
                  {"energy_per_dist", f.energy_per_dist}};
    nlohmann::json verts = nlohmann::json::array();
    for (const Vertex& v : inst.vertices()) {
        verts.push_back({{"id", v.id},
                         {"kind", to_string(v.kind)},
                         {"x", v.x},
                         {"z", v.z},
                         {"e", v.e},
                         {"l", v.l},
                         {"demand", v.demand0}});
    }
    j["vertices"] = std::move(verts);
    if (inst.seed()) j["seed"] = *inst.seed();
    return j;
}

inline Instance instance_from_json(const nlohmann::json& j) {
    if (!j.contains("schema_version") || j.at("schema_version").get<std::string>() != "1")
        throw std::runtime_error("unsupported instance schema version");
    const auto& jf = j.at("fleet");
    FleetSpec f;
    f.n_ev = jf.at("n_ev").get<int>();
    f.cargo_cap = jf.at("cargo_cap").get<double>();
    f.battery_cap = jf.at("battery_cap").get<double>();
    f.horizon = jf.at("horizon").get<double>();
    f.service_time = jf.at("service_time").get<double>();
    f.recharge_full_time = jf.at("recharge_full_time").get<double>();
    f.energy_per_dist = jf.at("energy_per_dist").get<double>();
    std::vector<Vertex> vs;
    for (const auto& jv : j.at("vertices")) {
        Vertex v;
        v.id = jv.at("id").get<int>();
        v.kind = vertex_kind_from_string(jv.at("kind").get<std::string>());
        v.x = jv.at("x").get<double>();
        v.z = jv.at("z").get<double>();
        v.e = jv.at("e").get<double>();
        v.l = jv.at("l").get<double>();
        v.demand0 = jv.at("demand").get<double>();
        vs.push_back(v);
    }
    std::optional<std::uint64_t> seed;
    if (j.contains("seed")) seed = j.at("seed").get<std::uint64_t>();
    return Instance(std::move(vs), f, seed);
}

inline void save(const Instance& inst, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << to_json(inst).dump(2) << "\n";
}

inline Instance load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("malformed instance file " + path.string() + ": " + e.what());
    }
    return instance_from_json(j);
}

}  // namespace evrptw
