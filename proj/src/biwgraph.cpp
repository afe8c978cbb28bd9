#include "enggraph/biwgraph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "enggraph/io.hpp"

namespace enggraph {

namespace {

enum R : int {
    FrontRailL, FrontRailR, APillarL, APillarR, BPillarL, BPillarR, CPillarL, CPillarR,
    RoofFront, RoofMid, RoofRear, FloorFront, FloorMid, FloorRear, SillL, SillR,
    RearRailL, RearRailR, Firewall, RearPanel
};

}  // namespace

const std::array<std::string, kRegionCount>& region_names() {
    static const std::array<std::string, kRegionCount> names{
        "front_rail_L", "front_rail_R", "a_pillar_L", "a_pillar_R", "b_pillar_L", "b_pillar_R", "c_pillar_L",
        "c_pillar_R",   "roof_front",   "roof_mid",   "roof_rear",  "floor_front", "floor_mid", "floor_rear",
        "sill_L",       "sill_R",       "rear_rail_L", "rear_rail_R", "firewall",  "rear_panel"};
    return names;
}

int region_index(const std::string& name) {
    const auto& n = region_names();
    auto it = std::find(n.begin(), n.end(), name);
    return it == n.end() ? -1 : static_cast<int>(it - n.begin());
}

RegionGroup region_group(int r) {
    switch (r) {
        case FloorFront: case FloorMid: case FloorRear: return RegionGroup::Floor;
        case RoofFront: case RoofMid: case RoofRear: return RegionGroup::Roof;
        case FrontRailL: case FrontRailR: case RearRailL: case RearRailR: return RegionGroup::Rail;
        case APillarL: case APillarR: case BPillarL: case BPillarR: case CPillarL: case CPillarR:
            return RegionGroup::Pillar;
        case SillL: case SillR: return RegionGroup::Sill;
        default: return RegionGroup::Panel;
    }
}

const char* group_name(RegionGroup g) {
    switch (g) {
        case RegionGroup::Floor: return "floor";
        case RegionGroup::Roof: return "roof";
        case RegionGroup::Rail: return "rail";
        case RegionGroup::Pillar: return "pillar";
        case RegionGroup::Sill: return "sill";
        case RegionGroup::Panel: return "panel";
    }
    return "";
}

const char* edge_type_name(EdgeType t) {
    switch (t) {
        case EdgeType::Adjacency: return "adjacency";
        case EdgeType::Symmetry: return "symmetry";
        case EdgeType::Longitudinal: return "longitudinal";
        case EdgeType::Vertical: return "vertical";
    }
    return "";
}

const std::array<std::string, kLevel1>& level1_names() {
    static const std::array<std::string, kLevel1> n{"TORSION", "BENDING", "PUMPING", "LOCAL"};
    return n;
}

const std::array<std::string, kLevel2>& level2_names() {
    static const std::array<std::string, kLevel2> n{
        "torsion_global", "torsion_front",    "torsion_rear", "bending_vertical_1", "bending_vertical_2",
        "bending_lateral", "pumping_floor",   "pumping_roof", "pumping_combined",   "local_panel",
        "local_pillar"};
    return n;
}

int level1_of(int l2) {
    static const std::array<int, kLevel2> parent{0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3};
    if (l2 < 0 || l2 >= static_cast<int>(kLevel2)) throw ContractError("level-2 index out of range");
    return parent[l2];
}

int level2_index(const std::string& name) {
    const auto& n = level2_names();
    auto it = std::find(n.begin(), n.end(), name);
    if (it == n.end()) throw SchemaError("unknown level-2 label '" + name + "'");
    return static_cast<int>(it - n.begin());
}

ModeLabel label_of(int l2) { return {level1_of(l2), l2}; }

// ---------------------------------------------------------------------------

const std::vector<SkeletonEdge>& skeleton_edge_table() {
    using E = EdgeType;
    static const std::vector<SkeletonEdge> table{
        // structural joins
        {FrontRailL, Firewall, E::Adjacency}, {FrontRailR, Firewall, E::Adjacency},
        {Firewall, FloorFront, E::Adjacency}, {Firewall, APillarL, E::Adjacency},
        {Firewall, APillarR, E::Adjacency},   {APillarL, SillL, E::Adjacency},
        {APillarR, SillR, E::Adjacency},      {APillarL, RoofFront, E::Adjacency},
        {APillarR, RoofFront, E::Adjacency},  {BPillarL, SillL, E::Adjacency},
        {BPillarR, SillR, E::Adjacency},      {BPillarL, RoofMid, E::Adjacency},
        {BPillarR, RoofMid, E::Adjacency},    {CPillarL, RearRailL, E::Adjacency},
        {CPillarR, RearRailR, E::Adjacency},  {CPillarL, RoofRear, E::Adjacency},
        {CPillarR, RoofRear, E::Adjacency},   {SillL, FloorMid, E::Adjacency},
        {SillR, FloorMid, E::Adjacency},      {RearRailL, RearPanel, E::Adjacency},
        {RearRailR, RearPanel, E::Adjacency}, {FloorRear, RearPanel, E::Adjacency},
        // mirror twins
        {FrontRailL, FrontRailR, E::Symmetry}, {APillarL, APillarR, E::Symmetry},
        {BPillarL, BPillarR, E::Symmetry},     {CPillarL, CPillarR, E::Symmetry},
        {SillL, SillR, E::Symmetry},           {RearRailL, RearRailR, E::Symmetry},
        // load paths along the car
        {FrontRailL, SillL, E::Longitudinal},  {SillL, RearRailL, E::Longitudinal},
        {FrontRailR, SillR, E::Longitudinal},  {SillR, RearRailR, E::Longitudinal},
        {RoofFront, RoofMid, E::Longitudinal}, {RoofMid, RoofRear, E::Longitudinal},
        {FloorFront, FloorMid, E::Longitudinal}, {FloorMid, FloorRear, E::Longitudinal},
        // roof to floor
        {RoofFront, FloorFront, E::Vertical},  {RoofMid, FloorMid, E::Vertical},
        {RoofRear, FloorRear, E::Vertical},
    };
    return table;
}

std::size_t RegionalSkeleton::count(EdgeType t) const {
    return static_cast<std::size_t>(std::count_if(edges.begin(), edges.end(), [t](const auto& e) { return e.type == t; }));
}

RegionalSkeleton build_canonical_skeleton(const Wireframe& wf) {
    if (wf.ids.size() != wf.positions.size() || wf.ids.size() != wf.regions.size()) {
        throw DimensionError("wireframe ids, positions and regions differ in length");
    }
    RegionalSkeleton sk;
    for (std::size_t i = 0; i < wf.size(); ++i) {
        const int r = region_index(wf.regions[i]);
        if (r < 0) throw SchemaError("node " + std::to_string(wf.ids[i]) + " has unknown region '" + wf.regions[i] + "'");
        sk.members[r].push_back(i);
    }
    std::string missing;
    for (std::size_t r = 0; r < kRegionCount; ++r)
        if (sk.members[r].empty()) missing += (missing.empty() ? "" : ", ") + region_names()[r];
    if (!missing.empty()) throw SchemaError("wireframe is missing regions: " + missing);
    for (auto& m : sk.members) {
        std::sort(m.begin(), m.end(), [&](std::size_t a, std::size_t b) { return wf.ids[a] < wf.ids[b]; });
    }
    std::vector<Index> sorted = wf.ids;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) throw SchemaError("duplicate wireframe node id");
    sk.edges = skeleton_edge_table();
    return sk;
}

// ---------------------------------------------------------------------------

RegionGraphSample aggregate_mode(const ModeSample& sample, const RegionalSkeleton& sk, const AggregateOptions& opt) {
    if (!sample.wireframe) throw ContractError("mode sample has no wireframe");
    const std::size_t n = sample.displacement.size();
    std::size_t members = 0;
    for (const auto& m : sk.members) members += m.size();
    if (n != sample.wireframe->size() || n != members) {
        throw DimensionError("displacement has " + std::to_string(n) + " nodes, skeleton " + std::to_string(members));
    }
    // global energy in node-id order so that row permutations do not change bits
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return sample.wireframe->ids[a] < sample.wireframe->ids[b];
    });
    double total = 0.0;
    for (std::size_t i : order) {
        if (!sample.displacement[i].allFinite()) throw InvalidSampleError("non-finite displacement");
        total += sample.displacement[i].squaredNorm();
    }
    if (!(total > 0.0)) {
        throw InvalidSampleError("zero displacement field (" + sample.vehicle_id + " mode " +
                                 std::to_string(sample.mode_id) + ")");
    }
    const double scale = opt.normalize_amplitude ? 1.0 / std::sqrt(total / static_cast<double>(n)) : 1.0;
    if (opt.normalize_amplitude) total = static_cast<double>(n);

    RegionGraphSample out;
    out.vehicle_id = sample.vehicle_id;
    out.mode_id = sample.mode_id;
    out.label = sample.label;
    EngineeringGraph& g = out.graph;
    g.x = Tensor({kRegionCount, kNodeFeatures});
    std::array<Vec3, kRegionCount> mean_u;
    std::array<double, kRegionCount> energy{};
    double energy_sum = 0.0;
    for (std::size_t r = 0; r < kRegionCount; ++r) {
        g.node_type.push_back(region_names()[r]);
        const auto& mem = sk.members[r];
        const double m = static_cast<double>(mem.size());
        double sum_norm = 0.0, sum_sq = 0.0, sum_z2 = 0.0;
        Vec3 sum_abs = Vec3::Zero(), sum_u = Vec3::Zero();
        Eigen::Matrix3d outer = Eigen::Matrix3d::Zero();
        for (std::size_t i : mem) {
            const Vec3 u = sample.displacement[i] * scale;
            sum_norm += u.norm();
            sum_sq += u.squaredNorm();
            sum_z2 += u[2] * u[2];
            sum_abs += u.cwiseAbs();
            sum_u += u;
            outer += u * u.transpose();
        }
        energy[r] = sum_sq;
        out.vertical_energy[r] = sum_z2 / m;
        energy_sum += sum_sq;
        mean_u[r] = sum_u / m;
        Vec3 dir = Vec3::Zero();
        if (sum_sq > 0.0) {
            Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(outer);
            dir = eig.eigenvectors().col(2);
            double proj = 0.0;
            for (std::size_t i : mem) proj += (sample.displacement[i] * scale).dot(dir);
            if (proj < 0.0) dir = -dir;
        }
        double* row = g.x.data() + r * kNodeFeatures;
        row[0] = sum_norm / m;
        row[1] = std::sqrt(sum_sq / m);
        row[2] = sum_abs[0] / m;
        row[3] = sum_abs[1] / m;
        row[4] = sum_abs[2] / m;
        row[5] = sum_u[2] / m;
        row[7] = dir[0];
        row[8] = dir[1];
        row[9] = dir[2];
    }
    for (std::size_t r = 0; r < kRegionCount; ++r) g.x.at(r, 6) = energy[r] / energy_sum;

    const auto& table = sk.edges;
    g.r = Tensor({2 * table.size(), kEdgeFeatures});
    std::size_t e = 0;
    for (const auto& se : table) {
        const double ea = g.x.at(se.a, 6), eb = g.x.at(se.b, 6);
        const double hi = std::max(ea, eb);
        const double ratio = hi > 0.0 ? std::min(ea, eb) / hi : 0.0;
        const double na = mean_u[se.a].norm(), nb = mean_u[se.b].norm();
        const double phase = (na > 0.0 && nb > 0.0) ? std::clamp(mean_u[se.a].dot(mean_u[se.b]) / (na * nb), -1.0, 1.0) : 0.0;
        for (int dir = 0; dir < 2; ++dir, ++e) {
            g.src.push_back(dir == 0 ? se.a : se.b);
            g.dst.push_back(dir == 0 ? se.b : se.a);
            g.edge_type.push_back(static_cast<int>(se.type));
            g.r.at(e, static_cast<std::size_t>(se.type)) = 1.0;
            g.r.at(e, 4) = ratio;
            g.r.at(e, 5) = phase;
        }
    }
    out.scalars = pooled_scalars(out);
    return out;
}

std::array<double, kPooledScalars> pooled_scalars(const RegionGraphSample& s) {
    const Tensor& x = s.graph.x;
    std::array<double, kPooledScalars> p{};
    std::array<double, kRegionCount> vert{};
    for (std::size_t r = 0; r < kRegionCount; ++r) {
        const double e = x.at(r, 6);
        switch (region_group(static_cast<int>(r))) {
            case RegionGroup::Floor: p[0] += e; break;
            case RegionGroup::Roof: p[1] += e; break;
            case RegionGroup::Rail: p[4] += e; break;
            case RegionGroup::Pillar: p[5] += e; break;
            default: break;
        }
        vert[r] = s.vertical_energy[r];
    }
    const double mean = std::accumulate(vert.begin(), vert.end(), 0.0) / kRegionCount;
    double var = 0.0;
    for (double v : vert) var += (v - mean) * (v - mean);
    var /= kRegionCount;
    p[2] = mean > 0.0 ? 1.0 / (1.0 + std::sqrt(var) / mean) : 1.0;
    double anti = 0.0;
    int pairs = 0;
    for (std::size_t e = 0; e < s.graph.edge_count(); ++e) {
        if (s.graph.edge_type[e] != static_cast<int>(EdgeType::Symmetry) || s.graph.src[e] > s.graph.dst[e]) continue;
        anti += (1.0 - s.graph.r.at(e, 5)) / 2.0;
        ++pairs;
    }
    p[3] = pairs ? anti / pairs : 0.0;
    return p;
}

// ---------------------------------------------------------------------------

bool node_feature_is_signed(std::size_t c) { return c == 5 || c >= 7; }

RegionGraphSample sign_flipped(const RegionGraphSample& s) {
    RegionGraphSample out = s;
    for (std::size_t r = 0; r < kRegionCount; ++r)
        for (std::size_t c = 0; c < kNodeFeatures; ++c)
            if (node_feature_is_signed(c)) out.graph.x.at(r, c) = -out.graph.x.at(r, c);
    return out;
}

FeatureStats compute_feature_stats(const std::vector<RegionGraphSample>& train) {
    if (train.empty()) throw ContractError("no samples for feature statistics");
    FeatureStats st;
    auto finish = [](double s, double ss, double n, double& mean, double& sd) {
        mean = s / n;
        sd = std::sqrt(std::max(ss / n - mean * mean, 0.0));
        if (sd < 1e-12) sd = 1.0;
    };
    for (std::size_t c = 0; c < kNodeFeatures; ++c) {
        double s = 0.0, ss = 0.0, n = 0.0;
        for (const auto& t : train)
            for (std::size_t r = 0; r < t.graph.x.rows(); ++r) {
                const double v = t.graph.x.at(r, c);
                s += node_feature_is_signed(c) ? 0.0 : 2.0 * v;
                ss += 2.0 * v * v;
                n += 2.0;
            }
        finish(s, ss, n, st.node_mean[c], st.node_std[c]);
    }
    for (std::size_t c = 0; c < kEdgeFeatures; ++c) {
        if (c < 4) {
            st.edge_mean[c] = 0.0;
            st.edge_std[c] = 1.0;
            continue;
        }
        double s = 0.0, ss = 0.0, n = 0.0;
        for (const auto& t : train)
            for (std::size_t e = 0; e < t.graph.r.rows(); ++e) {
                const double v = t.graph.r.at(e, c);
                s += v;
                ss += v * v;
                n += 1.0;
            }
        finish(s, ss, n, st.edge_mean[c], st.edge_std[c]);
    }
    for (std::size_t c = 0; c < kPooledScalars; ++c) {
        double s = 0.0, ss = 0.0;
        for (const auto& t : train) {
            s += t.scalars[c];
            ss += t.scalars[c] * t.scalars[c];
        }
        finish(s, ss, static_cast<double>(train.size()), st.scalar_mean[c], st.scalar_std[c]);
    }
    std::string blob;
    for (double v : st.node_mean) blob += io::num(v) + ",";
    for (double v : st.node_std) blob += io::num(v) + ",";
    for (double v : st.edge_mean) blob += io::num(v) + ",";
    for (double v : st.edge_std) blob += io::num(v) + ",";
    for (double v : st.scalar_mean) blob += io::num(v) + ",";
    for (double v : st.scalar_std) blob += io::num(v) + ",";
    st.tag = io::sha256_hex(blob).substr(0, 16);
    return st;
}

StandardizedSample standardize(const RegionGraphSample& s, const FeatureStats& st) {
    if (st.tag.empty()) throw ContractError("feature statistics have no tag");
    StandardizedSample out{s, st.tag};
    Tensor& x = out.sample.graph.x;
    for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = 0; c < kNodeFeatures; ++c) x.at(r, c) = (x.at(r, c) - st.node_mean[c]) / st.node_std[c];
    Tensor& e = out.sample.graph.r;
    for (std::size_t r = 0; r < e.rows(); ++r)
        for (std::size_t c = 0; c < kEdgeFeatures; ++c) e.at(r, c) = (e.at(r, c) - st.edge_mean[c]) / st.edge_std[c];
    for (std::size_t c = 0; c < kPooledScalars; ++c)
        out.sample.scalars[c] = (s.scalars[c] - st.scalar_mean[c]) / st.scalar_std[c];
    return out;
}

nlohmann::json to_json(const FeatureStats& s) {
    return {{"node_mean", s.node_mean},   {"node_std", s.node_std},     {"edge_mean", s.edge_mean},
            {"edge_std", s.edge_std},     {"scalar_mean", s.scalar_mean}, {"scalar_std", s.scalar_std},
            {"tag", s.tag}};
}

FeatureStats feature_stats_from_json(const nlohmann::json& j) {
    FeatureStats s;
    try {
        s.node_mean = j.at("node_mean").get<decltype(s.node_mean)>();
        s.node_std = j.at("node_std").get<decltype(s.node_std)>();
        s.edge_mean = j.at("edge_mean").get<decltype(s.edge_mean)>();
        s.edge_std = j.at("edge_std").get<decltype(s.edge_std)>();
        s.scalar_mean = j.at("scalar_mean").get<decltype(s.scalar_mean)>();
        s.scalar_std = j.at("scalar_std").get<decltype(s.scalar_std)>();
        s.tag = j.at("tag").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("feature statistics: ") + e.what());
    }
    return s;
}

}  // namespace enggraph
