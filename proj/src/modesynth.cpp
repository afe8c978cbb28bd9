#include "enggraph/modesynth.hpp"
#include "enggraph/io.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include <nlohmann/json.hpp>


namespace enggraph {

namespace {

using json = nlohmann::json;

constexpr double kPi = 3.14159265358979323846;

enum R : int {
    FrontRailL, FrontRailR, APillarL, APillarR, BPillarL, BPillarR, CPillarL, CPillarR,
    RoofFront, RoofMid, RoofRear, FloorFront, FloorMid, FloorRear, SillL, SillR,
    RearRailL, RearRailR, Firewall, RearPanel
};

enum L2 : int {
    TorsionGlobal, TorsionFront, TorsionRear, BendingV1, BendingV2, BendingLateral,
    PumpingFloor, PumpingRoof, PumpingCombined, LocalPanel, LocalPillar
};

bool is_left(int r) { return r <= CPillarR ? r % 2 == 0 : (r == SillL || r == RearRailL); }
bool is_right(int r) { return r <= CPillarR ? r % 2 == 1 : (r == SillR || r == RearRailR); }

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// (s, y / W, z / H) of node i of m on one side (y >= 0).
Vec3 side_point(int r, int i, int m) {
    const double t = (i + 0.5) / m;
    switch (r) {
        case FrontRailL: return {0.25 * t, 0.3, 0.35};
        case APillarL: return {0.25 + 0.1 * t, 0.5 - 0.08 * t, 0.35 + 0.65 * t};
        case BPillarL: return {0.5, 0.5 - 0.08 * t, 0.15 + 0.85 * t};
        case CPillarL: return {0.75 - 0.03 * t, 0.45 - 0.05 * t, 0.35 + 0.65 * t};
        case SillL: return {0.25 + 0.5 * t, 0.5, 0.15};
        case RearRailL: return {0.75 + 0.25 * t, 0.3, 0.35};
        default: throw ContractError("not a left-side region");
    }
}

struct PanelFrame {
    bool along_x;  // primary axis is x (roof/floor) or z (firewall/rear panel)
    double a0, a1;
    double fixed;  // z for roof/floor, s for the end panels
};

PanelFrame panel_frame(int r) {
    switch (r) {
        case RoofFront: return {true, 0.35, 0.48, 1.0};
        case RoofMid: return {true, 0.48, 0.60, 1.0};
        case RoofRear: return {true, 0.60, 0.72, 1.0};
        case FloorFront: return {true, 0.25, 0.42, 0.15};
        case FloorMid: return {true, 0.42, 0.58, 0.15};
        case FloorRear: return {true, 0.58, 0.75, 0.15};
        case Firewall: return {false, 0.2, 0.6, 0.25};
        case RearPanel: return {false, 0.2, 0.5, 1.0};
        default: throw ContractError("not a centre panel");
    }
}

Vec3 panel_point(const PanelFrame& f, double primary, double yfrac) {
    return f.along_x ? Vec3(primary, yfrac, f.fixed) : Vec3(f.fixed, yfrac, primary);
}

double rms(const std::vector<Vec3>& u) {
    double s = 0.0;
    for (const auto& v : u) s += v.squaredNorm();
    return std::sqrt(s / (3.0 * static_cast<double>(u.size())));
}

const std::vector<int>& family_members(int l1) {
    static const std::array<std::vector<int>, kLevel1> m{
        std::vector<int>{TorsionGlobal, TorsionFront, TorsionRear},
        std::vector<int>{BendingV1, BendingV2, BendingLateral},
        std::vector<int>{PumpingFloor, PumpingRoof, PumpingCombined},
        std::vector<int>{LocalPanel, LocalPillar}};
    return m[l1];
}

}  // namespace

// ---------------------------------------------------------------------------

void VehicleSpec::validate() const {
    if (id.empty()) throw ParameterError("vehicle id is empty");
    if (!(wheelbase > 0.0) || !(width > 0.0) || !(height > 0.0)) {
        throw ParameterError("vehicle '" + id + "': scale factors must be positive");
    }
    if (node_count < 120 || node_count > 240) {
        throw ParameterError("vehicle '" + id + "': node count must lie in [120, 240]");
    }
    for (double k : stiffness)
        if (!(k > 0.0) || !std::isfinite(k)) throw ParameterError("vehicle '" + id + "': stiffness must be positive");
    if (!(coupling >= 0.0) || !std::isfinite(coupling)) throw ParameterError("vehicle '" + id + "': coupling must be >= 0");
}

std::array<int, kRegionCount> region_allocation(int n) {
    static const std::array<int, kRegionCount> w{6, 6, 5, 5, 6, 6, 5, 5, 8, 8, 8, 10, 10, 10, 10, 10, 6, 6, 8, 8};
    const int total = std::accumulate(w.begin(), w.end(), 0);
    std::array<int, kRegionCount> c{};
    for (std::size_t r = 0; r < kRegionCount; ++r) c[r] = std::max(4, n * w[r] / total);
    const int rest = n - std::accumulate(c.begin(), c.end(), 0);
    if (c[FloorMid] + rest < 4) throw ParameterError("node count too small for the region table");
    c[FloorMid] += rest;
    return c;
}

Wireframe synth_wireframe(const VehicleSpec& spec, std::uint64_t seed) {
    spec.validate();
    const auto alloc = region_allocation(spec.node_count);
    const double L = spec.length_m(), W = spec.width_m(), H = spec.height_m();
    std::mt19937_64 rng(seed);
    Wireframe wf;
    auto emit = [&](const Vec3& p, int r) {
        wf.ids.push_back(static_cast<Index>(wf.ids.size()));
        wf.positions.push_back(p);
        wf.regions.push_back(region_names()[r]);
    };
    for (int r = 0; r < static_cast<int>(kRegionCount); ++r) {
        if (is_right(r)) continue;
        const int m = alloc[r];
        if (is_left(r)) {
            for (int i = 0; i < m; ++i) {
                const Vec3 f = side_point(r, i, m);
                const double dx = uniform(rng, -1.0, 1.0) * 0.004 * L;
                const double dz = uniform(rng, -1.0, 1.0) * 0.004 * H;
                const Vec3 p(f[0] * L + dx, f[1] * W, f[2] * H + dz);
                emit(p, r);
                emit(Vec3(p[0], -p[1], p[2]), r + 1);
            }
            continue;
        }
        const PanelFrame f = panel_frame(r);
        const int pairs = m / 2;
        const int lanes = pairs < 6 ? 2 : 3;
        const int cols = (pairs + lanes - 1) / lanes;
        static const double two[] = {0.15, 0.35};
        static const double three[] = {0.1, 0.22, 0.34};
        for (int p = 0; p < pairs; ++p) {
            const int lane = p % lanes, col = p / lanes;
            const double a = f.a0 + (f.a1 - f.a0) * (col + 0.5) / cols;
            const Vec3 q = panel_point(f, a, lanes == 2 ? two[lane] : three[lane]);
            const double dx = uniform(rng, -1.0, 1.0) * 0.004 * L;
            const double dz = uniform(rng, -1.0, 1.0) * 0.004 * H;
            const Vec3 pos(q[0] * L + dx, q[1] * W, q[2] * H + dz);
            emit(pos, r);
            emit(Vec3(pos[0], -pos[1], pos[2]), r);
        }
        if (m % 2 == 1) {
            const Vec3 q = panel_point(f, 0.5 * (f.a0 + f.a1), 0.0);
            const double dx = uniform(rng, -1.0, 1.0) * 0.004 * L;
            const double dz = uniform(rng, -1.0, 1.0) * 0.004 * H;
            emit(Vec3(q[0] * L + dx, 0.0, q[2] * H + dz), r);
        }
    }
    return wf;
}

std::vector<Vec3> closed_form_field(const VehicleSpec& spec, const Wireframe& wf, int l2, int pick) {
    level1_of(l2);
    const double L = spec.length_m(), W = spec.width_m(), H = spec.height_m();
    const std::size_t n = wf.size();
    std::vector<int> region(n);
    for (std::size_t i = 0; i < n; ++i) {
        region[i] = region_index(wf.regions[i]);
        if (region[i] < 0) throw SchemaError("unknown region '" + wf.regions[i] + "'");
    }
    std::vector<Vec3> u(n, Vec3::Zero());
    const double zc = 0.35 * H;
    auto torsion = [&](auto theta) {
        for (std::size_t i = 0; i < n; ++i) {
            const Vec3& p = wf.positions[i];
            const double t = theta(p[0] / L);
            u[i] = Vec3(0.0, -t * (p[2] - zc), t * p[1]);
        }
    };
    auto bump = [&](std::size_t i, double s0, double ss) {
        const Vec3& p = wf.positions[i];
        const double ds = p[0] / L - s0, dy = p[1] / W;
        return std::exp(-ds * ds / (2.0 * ss * ss) - dy * dy / (2.0 * 0.3 * 0.3));
    };
    auto local = [&](const std::vector<int>& candidates, int axis) {
        const int r = candidates[static_cast<std::size_t>(pick) % candidates.size()];
        Vec3 c = Vec3::Zero();
        int count = 0;
        for (std::size_t i = 0; i < n; ++i)
            if (region[i] == r) c += wf.positions[i], ++count;
        c /= count;
        double reach = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            if (region[i] == r) reach = std::max(reach, (wf.positions[i] - c).norm());
        const double sigma = std::max(0.6 * reach, 1e-9);
        for (std::size_t i = 0; i < n; ++i) {
            if (region[i] != r) continue;
            const double d2 = (wf.positions[i] - c).squaredNorm();
            const double g = std::exp(-d2 / (2.0 * sigma * sigma));
            const double dir = axis == 1 ? (wf.positions[i][1] < 0.0 ? -1.0 : 1.0) : 1.0;
            u[i][axis] = dir * g;
        }
    };
    switch (l2) {
        case TorsionGlobal: torsion([](double s) { return s; }); break;
        case TorsionFront: torsion([](double s) { return s < 0.55 ? 1.0 - s / 0.55 : 0.0; }); break;
        case TorsionRear: torsion([](double s) { return s > 0.45 ? (s - 0.45) / 0.55 : 0.0; }); break;
        case BendingV1:
        case BendingV2: {
            const double k = l2 == BendingV1 ? 1.0 : 2.0;
            for (std::size_t i = 0; i < n; ++i) u[i][2] = std::sin(k * kPi * wf.positions[i][0] / L);
            break;
        }
        case BendingLateral:
            for (std::size_t i = 0; i < n; ++i) u[i][1] = std::sin(kPi * wf.positions[i][0] / L);
            break;
        case PumpingFloor:
        case PumpingRoof:
        case PumpingCombined:
            for (std::size_t i = 0; i < n; ++i) {
                const RegionGroup g = region_group(region[i]);
                const double residual = -0.1 * std::sin(kPi * wf.positions[i][0] / L);
                if (g == RegionGroup::Floor && l2 != PumpingRoof) u[i][2] = bump(i, 0.5, 0.15);
                else if (g == RegionGroup::Roof && l2 == PumpingRoof) u[i][2] = bump(i, 0.54, 0.1);
                else if (g == RegionGroup::Roof && l2 == PumpingCombined) u[i][2] = -bump(i, 0.54, 0.1);
                else if (l2 != PumpingCombined) u[i][2] = residual;
            }
            break;
        case LocalPanel: local({Firewall, RearPanel}, 0); break;
        case LocalPillar: local({APillarL, APillarR, BPillarL, BPillarR, CPillarL, CPillarR}, 1); break;
        default: break;
    }
    return u;
}

std::pair<double, double> frequency_band(int l2) {
    static const std::array<std::pair<double, double>, kLevel2> b{{{28, 36},
                                                                   {38, 46},
                                                                   {40, 50},
                                                                   {22, 30},
                                                                   {45, 55},
                                                                   {18, 26},
                                                                   {50, 62},
                                                                   {55, 68},
                                                                   {60, 72},
                                                                   {70, 92},
                                                                   {65, 88}}};
    level1_of(l2);
    return b[l2];
}

std::uint64_t derive_seed(std::uint64_t master, const std::string& vehicle, std::uint64_t index) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : vehicle) h = (h ^ c) * 0x100000001B3ull;
    return splitmix(splitmix(master ^ splitmix(h)) ^ index);
}

ModeSample synth_mode(const VehicleSpec& spec, std::shared_ptr<const Wireframe> wf, int l2, std::uint64_t seed,
                      const ModeSynthOptions& opt) {
    if (!wf) throw ContractError("synth_mode needs a wireframe");
    const int l1 = level1_of(l2);
    std::mt19937_64 rng(seed);
    const double amp_draw = uniform(rng, 0.5, 2.0);
    const int sign_draw = uniform(rng, 0.0, 1.0) < 0.5 ? -1 : 1;
    const int pick = static_cast<int>(rng() % 6);
    const auto [flo, fhi] = frequency_band(l2);
    const double f_draw = uniform(rng, flo, fhi);
    const double c_draw = uniform(rng, 0.0, 1.0);
    const int partner_pick = static_cast<int>(rng() % 6);

    std::vector<Vec3> u = closed_form_field(spec, *wf, l2, pick);
    if (opt.coupling && spec.coupling > 0.0) {
        const auto& fam = family_members(l1);
        std::vector<int> others;
        for (int m : fam)
            if (m != l2) others.push_back(m);
        int partner;
        double c;
        if (spec.systematic_coupling) {
            std::mt19937_64 vr(derive_seed(0, spec.id, 1000 + static_cast<std::uint64_t>(l2)));
            partner = others[vr() % others.size()];
            c = spec.coupling * (0.8 + 0.4 * c_draw);
        } else {
            partner = others[static_cast<std::size_t>(partner_pick) % others.size()];
            c = spec.coupling * c_draw;
        }
        const auto v = closed_form_field(spec, *wf, partner, partner_pick);
        const double k = c * rms(u) / rms(v);
        for (std::size_t i = 0; i < u.size(); ++i) u[i] += k * v[i];
    }
    double mean_k = 0.0;
    for (double k : spec.stiffness) mean_k += k / kRegionCount;
    if (opt.stiffness) {
        for (std::size_t i = 0; i < u.size(); ++i) u[i] /= std::sqrt(spec.stiffness[region_index(wf->regions[i])]);
    }
    const double scale = opt.amplitude.value_or(amp_draw) * (opt.sign.value_or(sign_draw) < 0 ? -1.0 : 1.0);
    for (auto& v : u) v *= scale;
    if (opt.noise > 0.0) {
        std::normal_distribution<double> nd(0.0, opt.noise * rms(u));
        for (auto& v : u)
            for (int d = 0; d < 3; ++d) v[d] += nd(rng);
    }
    ModeSample s;
    s.vehicle_id = spec.id;
    s.frequency = std::clamp(f_draw * std::sqrt(mean_k) / std::sqrt(spec.wheelbase), 1.0, 100.0);
    s.wireframe = std::move(wf);
    s.displacement = std::move(u);
    s.label = label_of(l2);
    return s;
}

// ---------------------------------------------------------------------------

std::vector<double> flatten(const std::vector<Vec3>& field) {
    std::vector<double> out;
    out.reserve(3 * field.size());
    for (const auto& v : field) out.insert(out.end(), {v[0], v[1], v[2]});
    return out;
}

double mac(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw DimensionError("mac: vectors differ in length");
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if (!(aa > 0.0) || !(bb > 0.0)) throw DomainError("mac: zero mode vector");
    return std::clamp(ab * ab / (aa * bb), 0.0, 1.0);
}

TrackResult track_modes(const std::vector<ModeSample>& base, const std::vector<ModeSample>& variant, double threshold) {
    TrackResult out;
    out.match.assign(variant.size(), -1);
    out.score.assign(variant.size(), 0.0);
    out.labels.assign(variant.size(), std::nullopt);
    if (base.empty() || variant.empty()) return out;
    const auto& ids = base.front().wireframe->ids;
    auto check = [&](const ModeSample& m) {
        if (!m.wireframe || m.wireframe->ids != ids || m.displacement.size() != ids.size()) {
            throw ContractError("track_modes: mode " + m.vehicle_id + "/" + std::to_string(m.mode_id) +
                                " is not on the base skeleton");
        }
    };
    for (const auto& m : base) check(m);
    for (const auto& m : variant) check(m);
    std::vector<std::vector<double>> fb, fv;
    for (const auto& m : base) fb.push_back(flatten(m.displacement));
    for (const auto& m : variant) fv.push_back(flatten(m.displacement));
    struct Pair {
        double mac;
        std::size_t b, v;
    };
    std::vector<Pair> pairs;
    for (std::size_t v = 0; v < fv.size(); ++v)
        for (std::size_t b = 0; b < fb.size(); ++b) {
            const double m = mac(fb[b], fv[v]);
            if (m >= threshold) pairs.push_back({m, b, v});
        }
    std::sort(pairs.begin(), pairs.end(), [](const Pair& x, const Pair& y) {
        if (x.mac != y.mac) return x.mac > y.mac;
        if (x.v != y.v) return x.v < y.v;
        return x.b < y.b;
    });
    std::vector<char> used(base.size(), 0);
    for (const auto& p : pairs) {
        if (used[p.b] || out.match[p.v] >= 0) continue;
        used[p.b] = 1;
        out.match[p.v] = static_cast<int>(p.b);
        out.score[p.v] = p.mac;
        out.labels[p.v] = base[p.b].label;
    }
    return out;
}

// ---------------------------------------------------------------------------

const char* split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
        case Split::Unlabeled: return "unlabeled";
    }
    return "";
}

Split split_from_name(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "test") return Split::Test;
    if (s == "unlabeled") return Split::Unlabeled;
    throw SchemaError("unknown split '" + s + "'");
}

namespace {

void check_ratios(const std::array<double, 3>& r) {
    for (double v : r)
        if (!(v >= 0.0)) throw ConfigError("split ratios must be non-negative");
    if (std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
}

}  // namespace

std::array<int, 3> split_counts(int n, const std::array<double, 3>& ratios) {
    check_ratios(ratios);
    std::array<int, 3> c{};
    std::array<double, 3> frac{};
    int used = 0;
    for (int k = 0; k < 3; ++k) {
        const double x = n * ratios[k];
        c[k] = static_cast<int>(std::floor(x + 1e-9));
        frac[k] = x - c[k];
        used += c[k];
    }
    std::array<int, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return frac[a] > frac[b] + 1e-12; });
    for (int i = 0; used < n; ++i, ++used) ++c[order[i % 3]];
    return c;
}

std::vector<Split> stratified_split(const std::vector<int>& classes, const std::array<double, 3>& ratios,
                                   std::uint64_t seed) {
    check_ratios(ratios);
    const int n = static_cast<int>(classes.size());
    const auto global = split_counts(n, ratios);
    std::map<int, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < classes.size(); ++i) members[classes[i]].push_back(i);

    struct Row {
        int cls;
        std::array<int, 3> count;
        std::array<double, 3> frac;
        int rem;
    };
    std::vector<Row> rows;
    std::array<int, 3> demand = global;
    for (const auto& [c, idx] : members) {
        Row row{c, {}, {}, static_cast<int>(idx.size())};
        for (int k = 0; k < 3; ++k) {
            const double x = static_cast<double>(idx.size()) * ratios[k];
            row.count[k] = static_cast<int>(std::floor(x + 1e-9));
            row.frac[k] = x - row.count[k];
            row.rem -= row.count[k];
            demand[k] -= row.count[k];
        }
        rows.push_back(row);
    }
    // Leftover units go to splits whose share is fractional, one per split
    // and class, until every split meets its global count (max flow).
    const std::size_t nc = rows.size();
    const std::size_t V = nc + 5, src = nc + 3, sink = nc + 4;
    std::vector<std::vector<int>> cap(V, std::vector<int>(V, 0));
    for (std::size_t c = 0; c < nc; ++c) {
        cap[src][c] = rows[c].rem;
        for (int k = 0; k < 3; ++k)
            if (rows[c].frac[k] > 1e-9) cap[c][nc + k] = 1;
    }
    for (int k = 0; k < 3; ++k) cap[nc + k][sink] = std::max(demand[k], 0);
    while (true) {
        std::vector<std::size_t> prev(V, V);
        std::vector<std::size_t> queue{src};
        prev[src] = src;
        for (std::size_t q = 0; q < queue.size() && prev[sink] == V; ++q)
            for (std::size_t v = 0; v < V; ++v)
                if (prev[v] == V && cap[queue[q]][v] > 0) prev[v] = queue[q], queue.push_back(v);
        if (prev[sink] == V) break;
        for (std::size_t v = sink; v != src; v = prev[v]) --cap[prev[v]][v], ++cap[v][prev[v]];
    }
    for (std::size_t c = 0; c < nc; ++c)
        for (int k = 0; k < 3; ++k)
            if (cap[nc + k][c] > 0) {
                ++rows[c].count[k];
                --demand[k];
            }
    for (int d : demand)
        if (d != 0) throw ContractError("stratified split could not meet the global counts");

    std::vector<Split> out(classes.size(), Split::Train);
    std::mt19937_64 rng(seed);
    std::size_t ri = 0;
    for (auto& [c, idx] : members) {
        std::shuffle(idx.begin(), idx.end(), rng);
        const Row& row = rows[ri++];
        std::size_t p = 0;
        for (int k = 0; k < 3; ++k)
            for (int j = 0; j < row.count[k]; ++j) out[idx[p++]] = static_cast<Split>(k);
    }
    return out;
}

ModeDatasetConfig default_mode_config() {
    ModeDatasetConfig c;
    VehiclePlan ref;
    ref.spec.id = "ref";
    ref.reference = true;
    ref.modes = 300;
    c.vehicles.push_back(ref);

    struct T {
        const char* id;
        double wb, w, h;
        int nodes, budget;
        std::array<double, kRegionCount> k;
    };
    const T targets[] = {
        {"suv", 1.06, 1.08, 1.18, 220, 9, {1.2, 1.2, 0.8, 0.8, 0.9, 0.9, 1.3, 1.3, 0.7, 0.8, 0.9, 1.4, 1.2, 1.1, 1.1, 1.1, 0.9, 0.9, 1.0, 1.2}},
        {"compact", 0.9, 0.95, 0.96, 140, 2, {0.8, 0.8, 1.3, 1.3, 1.1, 1.1, 0.9, 0.9, 1.3, 1.2, 1.1, 0.7, 0.8, 0.9, 1.2, 1.2, 0.8, 0.8, 1.2, 0.9}},
        {"van", 1.12, 1.04, 1.32, 200, 5, {1.0, 1.0, 0.9, 0.9, 1.4, 1.4, 0.8, 0.8, 0.8, 0.7, 0.8, 1.2, 1.3, 1.2, 0.9, 0.9, 1.2, 1.2, 0.8, 1.1}},
    };
    for (const auto& t : targets) {
        VehiclePlan p;
        p.spec.id = t.id;
        p.spec.wheelbase = t.wb;
        p.spec.width = t.w;
        p.spec.height = t.h;
        p.spec.node_count = t.nodes;
        p.spec.stiffness = t.k;
        p.spec.coupling = 0.4;
        p.spec.systematic_coupling = true;
        p.modes = 60;
        p.train = t.budget;
        p.val = 4;
        p.test = 22;
        c.vehicles.push_back(p);
    }
    return c;
}

std::size_t ModeDataset::count(Split s) const { return static_cast<std::size_t>(std::count(split.begin(), split.end(), s)); }

ModeDataset build_mode_dataset(const ModeDatasetConfig& cfg) {
    check_ratios(cfg.ratios);
    if (cfg.vehicles.empty()) throw ConfigError("dataset config lists no vehicles");
    std::set<std::string> seen;
    ModeDataset ds;
    ds.config = cfg;
    for (const auto& plan : cfg.vehicles) {
        plan.spec.validate();
        if (!seen.insert(plan.spec.id).second) throw ConfigError("duplicate vehicle id '" + plan.spec.id + "'");
        if (plan.modes < 1) throw ConfigError("vehicle '" + plan.spec.id + "': mode count must be positive");
        if (!plan.reference && (plan.train < 0 || plan.val < 0 || plan.test < 0 ||
                                plan.train + plan.val + plan.test > plan.modes)) {
            throw ConfigError("vehicle '" + plan.spec.id + "': label budget " +
                              std::to_string(plan.train + plan.val + plan.test) + " exceeds " +
                              std::to_string(plan.modes) + " generated modes");
        }
        const auto wf = std::make_shared<const Wireframe>(
            synth_wireframe(plan.spec, derive_seed(cfg.seed, plan.spec.id, 0xFFFFFFFFull)));
        ds.wireframes[plan.spec.id] = wf;
        std::mt19937_64 rng(derive_seed(cfg.seed, plan.spec.id, 0xFFFFFFFEull));
        std::vector<int> cycle(kLevel2);
        std::iota(cycle.begin(), cycle.end(), 0);
        std::size_t pos = kLevel2;
        auto next_class = [&]() {
            if (pos == kLevel2) {
                std::shuffle(cycle.begin(), cycle.end(), rng);
                pos = 0;
            }
            return cycle[pos++];
        };
        std::vector<int> labels;
        std::vector<Split> roles;
        if (plan.reference) {
            for (int i = 0; i < plan.modes; ++i) labels.push_back(next_class());
            roles = stratified_split(labels, cfg.ratios, derive_seed(cfg.seed, plan.spec.id, 0xFFFFFFFDull));
        } else {
            std::vector<std::pair<int, Split>> items;
            for (int i = 0; i < plan.test; ++i) items.push_back({i % static_cast<int>(kLevel2), Split::Test});
            pos = kLevel2;
            for (int i = 0; i < plan.val; ++i) items.push_back({next_class(), Split::Val});
            for (int i = 0; i < plan.train; ++i) items.push_back({next_class(), Split::Train});
            while (static_cast<int>(items.size()) < plan.modes) items.push_back({next_class(), Split::Unlabeled});
            std::shuffle(items.begin(), items.end(), rng);
            for (const auto& [l, s] : items) {
                labels.push_back(l);
                roles.push_back(s);
            }
        }
        for (int i = 0; i < plan.modes; ++i) {
            ModeSample s = synth_mode(plan.spec, wf, labels[i], derive_seed(cfg.seed, plan.spec.id, i));
            s.mode_id = i;
            if (roles[i] == Split::Unlabeled) s.label.reset();
            ds.samples.push_back(std::move(s));
            ds.split.push_back(roles[i]);
        }
    }
    const auto graphs = aggregate_dataset(ds);
    std::vector<RegionGraphSample> train;
    for (std::size_t i = 0; i < graphs.size(); ++i)
        if (ds.split[i] == Split::Train) train.push_back(graphs[i]);
    if (train.empty()) throw ConfigError("dataset has no training samples");
    ds.stats = compute_feature_stats(train);
    return ds;
}

std::vector<RegionGraphSample> aggregate_dataset(const ModeDataset& ds) {
    std::map<const Wireframe*, RegionalSkeleton> skeletons;
    std::vector<RegionGraphSample> out;
    out.reserve(ds.samples.size());
    for (const auto& s : ds.samples) {
        auto it = skeletons.find(s.wireframe.get());
        if (it == skeletons.end()) it = skeletons.emplace(s.wireframe.get(), build_canonical_skeleton(*s.wireframe)).first;
        out.push_back(aggregate_mode(s, it->second));
    }
    return out;
}

int rule_oracle_level1(const RegionGraphSample& s) {
    const Tensor& x = s.graph.x;
    std::size_t top = 0;
    for (std::size_t r = 1; r < kRegionCount; ++r)
        if (x.at(r, 6) > x.at(top, 6)) top = r;
    const RegionGroup g = region_group(static_cast<int>(top));
    if (x.at(top, 6) > 0.5 && (g == RegionGroup::Pillar || g == RegionGroup::Panel)) return 3;
    if (s.scalars[3] > 0.6) return 0;
    if (s.scalars[0] > 0.5 || s.scalars[1] > 0.5) return 2;
    double phase = 0.0;
    int count = 0;
    for (std::size_t e = 0; e < s.graph.edge_count(); ++e) {
        if (s.graph.edge_type[e] != static_cast<int>(EdgeType::Vertical)) continue;
        phase += s.graph.r.at(e, 5);
        ++count;
    }
    return count > 0 && phase / count < 0.0 ? 2 : 1;
}

// ---------------------------------------------------------------------------
// JSON

json to_json(const VehicleSpec& s) {
    return {{"id", s.id},
            {"wheelbase", s.wheelbase},
            {"width", s.width},
            {"height", s.height},
            {"node_count", s.node_count},
            {"stiffness", s.stiffness},
            {"coupling", s.coupling},
            {"systematic_coupling", s.systematic_coupling}};
}

VehicleSpec vehicle_spec_from_json(const json& j) {
    io::check_keys(j, {"id", "wheelbase", "width", "height", "node_count", "stiffness", "coupling", "systematic_coupling"},
               "vehicle spec");
    VehicleSpec s;
    try {
        s.id = j.value("id", s.id);
        s.wheelbase = j.value("wheelbase", s.wheelbase);
        s.width = j.value("width", s.width);
        s.height = j.value("height", s.height);
        s.node_count = j.value("node_count", s.node_count);
        if (j.contains("stiffness")) s.stiffness = j.at("stiffness").get<decltype(s.stiffness)>();
        s.coupling = j.value("coupling", s.coupling);
        s.systematic_coupling = j.value("systematic_coupling", s.systematic_coupling);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("vehicle spec: ") + e.what());
    }
    s.validate();
    return s;
}

json to_json(const ModeDatasetConfig& c) {
    json v = json::array();
    for (const auto& p : c.vehicles) {
        v.push_back({{"spec", to_json(p.spec)},
                     {"reference", p.reference},
                     {"modes", p.modes},
                     {"train", p.train},
                     {"val", p.val},
                     {"test", p.test}});
    }
    return {{"seed", c.seed}, {"ratios", c.ratios}, {"vehicles", v}};
}

ModeDatasetConfig mode_config_from_json(const json& j) {
    io::check_keys(j, {"seed", "ratios", "vehicles"}, "mode dataset config");
    ModeDatasetConfig c = default_mode_config();
    try {
        c.seed = j.value("seed", c.seed);
        if (j.contains("ratios")) c.ratios = j.at("ratios").get<std::array<double, 3>>();
        if (j.contains("vehicles")) {
            c.vehicles.clear();
            for (const auto& v : j.at("vehicles")) {
                io::check_keys(v, {"spec", "reference", "modes", "train", "val", "test"}, "vehicle plan");
                VehiclePlan p;
                p.spec = vehicle_spec_from_json(v.at("spec"));
                p.reference = v.value("reference", p.reference);
                p.modes = v.value("modes", p.modes);
                p.train = v.value("train", p.train);
                p.val = v.value("val", p.val);
                p.test = v.value("test", p.test);
                c.vehicles.push_back(p);
            }
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("mode dataset config: ") + e.what());
    }
    check_ratios(c.ratios);
    return c;
}

void write_mode_dataset(const ModeDataset& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir / "vehicles");
    json splits = json::array();
    std::size_t i = 0;
    for (const auto& plan : ds.config.vehicles) {
        const auto& wf = *ds.wireframes.at(plan.spec.id);
        json nodes = json::array();
        for (std::size_t k = 0; k < wf.size(); ++k) {
            nodes.push_back({{"id", wf.ids[k]},
                             {"x", wf.positions[k][0]},
                             {"y", wf.positions[k][1]},
                             {"z", wf.positions[k][2]},
                             {"region", wf.regions[k]}});
        }
        json modes = json::array();
        for (; i < ds.samples.size() && ds.samples[i].vehicle_id == plan.spec.id; ++i) {
            const auto& s = ds.samples[i];
            json disp = json::array();
            for (const auto& u : s.displacement) disp.push_back({u[0], u[1], u[2]});
            json m = {{"mode_id", s.mode_id}, {"frequency", s.frequency}, {"displacement", disp}};
            if (s.label) {
                m["label"] = {{"level1", level1_names()[s.label->level1]}, {"level2", level2_names()[s.label->level2]}};
            }
            modes.push_back(m);
            splits.push_back({{"vehicle", s.vehicle_id}, {"mode_id", s.mode_id}, {"split", split_name(ds.split[i])}});
        }
        json vf = {{"vehicle_id", plan.spec.id}, {"nodes", nodes}, {"modes", modes}};
        io::write_atomic(dir / "vehicles" / (plan.spec.id + ".json"), vf.dump() + "\n");
    }
    json manifest = {{"format", "enggraph-modes/1"},
                     {"config", to_json(ds.config)},
                     {"seed", ds.config.seed},
                     {"splits", splits},
                     {"stats", to_json(ds.stats)}};
    io::write_atomic(dir / "manifest.json", manifest.dump(1) + "\n");
}

ModeDataset read_mode_dataset(const std::filesystem::path& dir) {
    ModeDataset ds;
    json manifest;
    try {
        manifest = json::parse(io::read_text(dir / "manifest.json"));
    } catch (const json::exception& e) {
        throw SchemaError(std::string("manifest.json: ") + e.what());
    }
    if (manifest.value("format", "") != "enggraph-modes/1") throw SchemaError("manifest.json: not a mode dataset");
    ds.config = mode_config_from_json(manifest.at("config"));
    ds.stats = feature_stats_from_json(manifest.at("stats"));
    std::map<std::pair<std::string, int>, Split> split_of;
    for (const auto& s : manifest.at("splits")) {
        split_of[{s.at("vehicle").get<std::string>(), s.at("mode_id").get<int>()}] =
            split_from_name(s.at("split").get<std::string>());
    }
    for (const auto& plan : ds.config.vehicles) {
        const auto path = dir / "vehicles" / (plan.spec.id + ".json");
        try {
            const json vf = json::parse(io::read_text(path));
            auto wf = std::make_shared<Wireframe>();
            for (const auto& n : vf.at("nodes")) {
                wf->ids.push_back(n.at("id").get<Index>());
                wf->positions.emplace_back(n.at("x").get<double>(), n.at("y").get<double>(), n.at("z").get<double>());
                wf->regions.push_back(n.at("region").get<std::string>());
            }
            std::shared_ptr<const Wireframe> cwf = wf;
            ds.wireframes[plan.spec.id] = cwf;
            for (const auto& m : vf.at("modes")) {
                ModeSample s;
                s.vehicle_id = plan.spec.id;
                s.mode_id = m.at("mode_id").get<int>();
                s.frequency = m.at("frequency").get<double>();
                if (!(s.frequency > 0.0 && s.frequency <= 100.0)) {
                    throw SchemaError(path.string() + ": frequency outside (0, 100] Hz");
                }
                s.wireframe = cwf;
                for (const auto& u : m.at("displacement")) {
                    if (u.size() != 3) throw SchemaError(path.string() + ": displacement rows need 3 components");
                    s.displacement.emplace_back(u[0].get<double>(), u[1].get<double>(), u[2].get<double>());
                }
                if (s.displacement.size() != wf->size()) {
                    throw SchemaError(path.string() + ": displacement length differs from node count");
                }
                if (m.contains("label")) {
                    const int l2 = level2_index(m.at("label").at("level2").get<std::string>());
                    const std::string l1 = m.at("label").at("level1").get<std::string>();
                    if (l1 != level1_names()[level1_of(l2)]) throw SchemaError(path.string() + ": label hierarchy mismatch");
                    s.label = label_of(l2);
                }
                auto it = split_of.find({s.vehicle_id, s.mode_id});
                if (it == split_of.end()) throw SchemaError("manifest has no split for " + s.vehicle_id + "/" + std::to_string(s.mode_id));
                ds.split.push_back(it->second);
                ds.samples.push_back(std::move(s));
            }
        } catch (const json::exception& e) {
            throw SchemaError(path.string() + ": " + e.what());
        }
    }
    return ds;
}

}  // namespace enggraph
