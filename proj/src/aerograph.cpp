#include "enggraph/aerograph.hpp"
#include "enggraph/io.hpp"
#include "enggraph/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>
#include <unordered_map>

#include <nlohmann/json.hpp>


namespace enggraph {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

constexpr double kPi = 3.14159265358979323846;

double smoothstep(double u) {
    u = std::clamp(u, 0.0, 1.0);
    return u * u * (3.0 - 2.0 * u);
}

struct FamilyShape {
    double theta_sep;  // rear separation onset
    double cp_base;    // base pressure behind the separation line
    double drift;      // streamwise growth of the effective angle
};

FamilyShape family_shape(BodyFamily f) {
    switch (f) {
        case BodyFamily::A: return {1.95, -0.30, 0.10};
        case BodyFamily::B: return {2.25, -0.15, 0.05};
        case BodyFamily::C: return {2.10, -0.22, 0.08};
    }
    return {2.0, -0.2, 0.0};
}

// Smooth field symmetric in y: sum_k a_k sin(wx x + wz z + phi) cos(wy y).
struct Ripple {
    std::array<double, 3> a{}, wx{}, wy{}, wz{}, phi{};
    double operator()(const Vec3& p) const {
        double s = 0.0;
        for (int k = 0; k < 3; ++k) s += a[k] * std::sin(wx[k] * p[0] + wz[k] * p[2] + phi[k]) * std::cos(wy[k] * p[1]);
        return s;
    }
};

Ripple draw_ripple(std::mt19937_64& rng) {
    std::normal_distribution<double> nd(0.0, 1.0);
    std::uniform_real_distribution<double> w(-6.0, 6.0), wy(0.0, 6.0), ph(0.0, 2.0 * kPi);
    Ripple r;
    for (int k = 0; k < 3; ++k) {
        r.a[k] = nd(rng) / std::sqrt(3.0);
        r.wx[k] = w(rng);
        r.wy[k] = wy(rng);
        r.wz[k] = w(rng);
        r.phi[k] = ph(rng);
    }
    return r;
}

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

// Uniform grid over points for radius queries.
class Grid {
public:
    explicit Grid(double cell) : cell_(cell) {}
    void insert(const Vec3& p, Index id) { cells_[key(p)].push_back({p, id}); }
    bool any_within(const Vec3& p, double r) const {
        const auto c = coords(p);
        for (int dx = -1; dx <= 1; ++dx)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dz = -1; dz <= 1; ++dz) {
                    auto it = cells_.find(pack(c[0] + dx, c[1] + dy, c[2] + dz));
                    if (it == cells_.end()) continue;
                    for (const auto& e : it->second)
                        if ((e.first - p).squaredNorm() < r * r) return true;
                }
        return false;
    }

private:
    std::array<std::int64_t, 3> coords(const Vec3& p) const {
        return {static_cast<std::int64_t>(std::floor(p[0] / cell_)), static_cast<std::int64_t>(std::floor(p[1] / cell_)),
                static_cast<std::int64_t>(std::floor(p[2] / cell_))};
    }
    static std::uint64_t pack(std::int64_t x, std::int64_t y, std::int64_t z) {
        auto u = [](std::int64_t v) { return static_cast<std::uint64_t>(v + (1 << 20)) & 0x1FFFFF; };
        return (u(x) << 42) | (u(y) << 21) | u(z);
    }
    std::uint64_t key(const Vec3& p) const {
        auto c = coords(p);
        return pack(c[0], c[1], c[2]);
    }
    double cell_;
    std::unordered_map<std::uint64_t, std::vector<std::pair<Vec3, Index>>> cells_;
};

void check_budget(const SurfaceMesh& mesh, std::size_t n) {
    if (n < 1 || n > mesh.size()) {
        throw ParameterError("downsample target " + std::to_string(n) + " outside [1, " + std::to_string(mesh.size()) +
                             "]");
    }
}


}  // namespace

// ---------------------------------------------------------------------------
// Labels

void compute_aero_labels(AeroSample& s, std::uint64_t seed, const AeroLabelOptions& opt) {
    const auto& m = s.mesh;
    if (m.normals.size() != m.size()) throw DimensionError("mesh has no normals");
    if (!(s.u_inf > 0.0) || !(s.rho > 0.0)) throw ParameterError("freestream speed and density must be positive");
    const double q = s.q_inf();
    double xmin = m.vertices[0][0], xmax = xmin;
    for (const auto& v : m.vertices) {
        xmin = std::min(xmin, v[0]);
        xmax = std::max(xmax, v[0]);
    }
    const double span = std::max(xmax - xmin, 1e-12);
    const Vec3 c = m.centroid();
    std::mt19937_64 rng(seed);
    const Ripple rp = draw_ripple(rng);
    const Ripple rt = draw_ripple(rng);
    const FamilyShape fs = family_shape(s.family);

    s.pressure.assign(m.size(), 0.0);
    s.wss.assign(m.size(), Vec3::Zero());
    for (std::size_t i = 0; i < m.size(); ++i) {
        const Vec3& n = m.normals[i];
        const Vec3 rel = (m.vertices[i] - c) / span;
        const double cn = std::clamp(-n[0], -1.0, 1.0);
        const double theta = std::acos(cn);
        double theta_eff = theta, sin2 = std::max(0.0, 1.0 - cn * cn), w = 0.0;
        if (opt.family_modifiers) {
            const double xi = (m.vertices[i][0] - xmin) / span;
            theta_eff = std::clamp(theta + fs.drift * xi * std::sin(theta), 0.0, kPi);
            const double st = std::sin(theta_eff);
            sin2 = st * st;
            w = smoothstep((theta_eff - fs.theta_sep) / 0.35);
        }
        double cp = 1.0 - 2.25 * sin2;
        cp = (1.0 - w) * cp + w * fs.cp_base;
        cp += opt.perturbation * rp(rel);
        s.pressure[i] = q * std::min(cp, 1.0);

        Vec3 t = Vec3::UnitX() - n[0] * n;
        t -= t.dot(n) * n;
        const double bump = std::exp(-std::pow((theta_eff - 0.5 * kPi) / 0.7, 2));
        const double g = opt.skin_friction * q * (0.35 + 0.65 * bump) * (1.0 - 0.6 * w) *
                         (1.0 + 2.0 * opt.perturbation * rt(rel));
        s.wss[i] = g * t;
    }
}

AeroSample make_aero_sample(const std::string& id, const CarBodyParams& params, int subdivisions, double u_inf,
                            double rho, std::uint64_t seed, const AeroLabelOptions& opt) {
    AeroSample s;
    s.id = id;
    s.family = params.family;
    s.params = params;
    s.mesh = car_body(params, subdivisions);
    s.u_inf = u_inf;
    s.rho = rho;
    compute_aero_labels(s, seed, opt);
    return s;
}

AeroSample make_sphere_sample(double radius, int subdivisions, double u_inf, double rho) {
    AeroSample s;
    s.id = "sphere";
    s.mesh = icosphere(subdivisions, radius);
    s.u_inf = u_inf;
    s.rho = rho;
    AeroLabelOptions opt;
    opt.family_modifiers = false;
    opt.perturbation = 0.0;
    compute_aero_labels(s, 0, opt);
    return s;
}

// ---------------------------------------------------------------------------
// Downsampling

const char* method_name(DownsampleMethod m) {
    switch (m) {
        case DownsampleMethod::Symmetric: return "symmetric";
        case DownsampleMethod::Random: return "random";
        case DownsampleMethod::Curvature: return "curvature";
        case DownsampleMethod::Fps: return "fps";
    }
    return "?";
}

DownsampleMethod method_from_name(const std::string& s) {
    for (auto m : {DownsampleMethod::Symmetric, DownsampleMethod::Random, DownsampleMethod::Curvature,
                   DownsampleMethod::Fps})
        if (s == method_name(m)) return m;
    throw ConfigError("unknown downsampling method '" + s + "'");
}

std::vector<Index> farthest_point_sampling(const std::vector<Vec3>& points, const std::vector<Index>& candidates,
                                           std::size_t count) {
    const std::size_t m = candidates.size();
    if (count > m) throw ParameterError("FPS count exceeds candidate count");
    std::vector<Index> out;
    if (count == 0) return out;
    out.reserve(count);
    Vec3 c = Vec3::Zero();
    for (Index i : candidates) c += points[i];
    c /= static_cast<double>(m);
    std::vector<double> d(m);
    std::size_t pick = 0;
    double best = -1.0;
    for (std::size_t a = 0; a < m; ++a) {
        const double v = (points[candidates[a]] - c).squaredNorm();
        if (v > best) {
            best = v;
            pick = a;
        }
    }
    std::fill(d.begin(), d.end(), std::numeric_limits<double>::infinity());
    for (std::size_t step = 0; step < count; ++step) {
        out.push_back(candidates[pick]);
        const Vec3 p = points[candidates[pick]];
        d[pick] = -1.0;
        best = -1.0;
        std::size_t next = pick;
        for (std::size_t a = 0; a < m; ++a) {
            if (d[a] < 0.0) continue;
            const double v = (points[candidates[a]] - p).squaredNorm();
            if (v < d[a]) d[a] = v;
            if (d[a] > best) {
                best = d[a];
                next = a;
            }
        }
        pick = next;
    }
    return out;
}

double correspondence_score(const SurfaceMesh& mesh, const SymmetryFrame& frame, const std::vector<Index>& ids) {
    std::vector<Vec3> sel;
    sel.reserve(ids.size());
    for (Index i : ids) sel.push_back(mesh.vertices[i]);
    if (sel.empty()) return 0.0;
    KdTree tree(sel);
    std::size_t off = 0, matched = 0;
    for (const auto& p : sel) {
        if (std::abs(frame.signed_distance(p)) <= frame.epsilon) continue;
        ++off;
        if (tree.nearest(frame.reflect(p)).second <= frame.delta_match) ++matched;
    }
    return off == 0 ? 1.0 : static_cast<double>(matched) / static_cast<double>(off);
}

DownsampleResult downsample_symmetric(const SurfaceMesh& mesh, const SymmetryFrame& frame, std::size_t n) {
    check_budget(mesh, n);
    const std::size_t N = mesh.size();
    DownsampleResult r;
    if (n == N) {
        r.ids.resize(N);
        std::iota(r.ids.begin(), r.ids.end(), Index{0});
        r.score = frame.quality;
        return r;
    }
    if (frame.quality < kSymmetryQualityMin) {
        std::vector<Index> all(N);
        std::iota(all.begin(), all.end(), Index{0});
        r.ids = farthest_point_sampling(mesh.vertices, all, n);
        std::sort(r.ids.begin(), r.ids.end());
        r.method = DownsampleMethod::Fps;
        r.score = correspondence_score(mesh, frame, r.ids);
        return r;
    }
    std::vector<Index> left, right, mid;
    for (std::size_t i = 0; i < N; ++i) {
        const double d = frame.signed_distance(mesh.vertices[i]);
        if (std::abs(d) <= frame.epsilon) mid.push_back(static_cast<Index>(i));
        else if (d > 0.0) right.push_back(static_cast<Index>(i));
        else left.push_back(static_cast<Index>(i));
    }
    std::size_t m = std::min(mid.size(), static_cast<std::size_t>(std::ceil(static_cast<double>(n) *
                                                                              static_cast<double>(mid.size()) /
                                                                              static_cast<double>(N))));
    // Keep n - m even so mirrored pairs fill the budget exactly.
    if ((n - m) % 2 == 1) {
        if (m + 1 <= mid.size()) ++m;
        else if (m > 0) --m;
    }
    const std::size_t half = std::min(right.size(), (n - m + 1) / 2);
    const auto picks = farthest_point_sampling(mesh.vertices, right, half);

    std::vector<Vec3> lp;
    lp.reserve(left.size());
    for (Index i : left) lp.push_back(mesh.vertices[i]);
    std::vector<char> used(left.size(), 0);
    if (!left.empty()) {
        KdTree tree(lp);
        for (Index i : picks) {
            const auto [j, dist] = tree.nearest(frame.reflect(mesh.vertices[i]));
            if (dist > frame.delta_match || used[j]) continue;
            used[j] = 1;
            r.mirror_pairs.emplace_back(i, left[j]);
        }
    }
    r.midline = farthest_point_sampling(mesh.vertices, mid, m);
    std::sort(r.midline.begin(), r.midline.end());
    for (const auto& [a, b] : r.mirror_pairs) {
        r.ids.push_back(a);
        r.ids.push_back(b);
    }
    r.ids.insert(r.ids.end(), r.midline.begin(), r.midline.end());
    std::sort(r.ids.begin(), r.ids.end());
    r.score = correspondence_score(mesh, frame, r.ids);
    return r;
}

DownsampleResult downsample_random(const SurfaceMesh& mesh, const SymmetryFrame& frame, std::size_t n,
                                   std::uint64_t seed) {
    check_budget(mesh, n);
    std::vector<Index> all(mesh.size());
    std::iota(all.begin(), all.end(), Index{0});
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, all.size() - 1);
        std::swap(all[i], all[pick(rng)]);
    }
    DownsampleResult r;
    r.method = DownsampleMethod::Random;
    r.ids.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n));
    std::sort(r.ids.begin(), r.ids.end());
    r.score = correspondence_score(mesh, frame, r.ids);
    return r;
}

double curvature_min_distance(const SurfaceMesh& mesh, std::size_t n) {
    return 0.5 * std::sqrt(mesh.total_area() / static_cast<double>(n));
}

DownsampleResult downsample_curvature(const SurfaceMesh& mesh, const SymmetryFrame& frame, std::size_t n) {
    check_budget(mesh, n);
    const std::size_t N = mesh.size();
    std::vector<Index> order(N);
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Index a, Index b) { return std::abs(mesh.curvature[a]) > std::abs(mesh.curvature[b]); });
    const double rmin = curvature_min_distance(mesh, n);
    Grid grid(rmin);
    std::vector<char> taken(N, 0);
    DownsampleResult r;
    r.method = DownsampleMethod::Curvature;
    for (Index i : order) {
        if (r.ids.size() == n) break;
        if (grid.any_within(mesh.vertices[i], rmin)) continue;
        grid.insert(mesh.vertices[i], i);
        taken[i] = 1;
        r.ids.push_back(i);
    }
    // Second pass when thinning leaves the budget short: next by |H|.
    for (Index i : order) {
        if (r.ids.size() == n) break;
        if (!taken[i]) {
            taken[i] = 1;
            r.ids.push_back(i);
        }
    }
    std::sort(r.ids.begin(), r.ids.end());
    r.score = correspondence_score(mesh, frame, r.ids);
    return r;
}

DownsampleResult downsample(const SurfaceMesh& mesh, const SymmetryFrame& frame, DownsampleMethod method,
                            std::size_t n, std::uint64_t seed) {
    switch (method) {
        case DownsampleMethod::Symmetric: return downsample_symmetric(mesh, frame, n);
        case DownsampleMethod::Random: return downsample_random(mesh, frame, n, seed);
        case DownsampleMethod::Curvature: return downsample_curvature(mesh, frame, n);
        case DownsampleMethod::Fps: {
            check_budget(mesh, n);
            std::vector<Index> all(mesh.size());
            std::iota(all.begin(), all.end(), Index{0});
            DownsampleResult r;
            r.method = DownsampleMethod::Fps;
            r.ids = farthest_point_sampling(mesh.vertices, all, n);
            std::sort(r.ids.begin(), r.ids.end());
            r.score = correspondence_score(mesh, frame, r.ids);
            return r;
        }
    }
    throw ParameterError("unknown downsampling method");
}

// ---------------------------------------------------------------------------
// Surface graph

AeroGraphSample assemble_aero_graph(const AeroSample& sample, const DownsampleResult& ds, std::size_t k) {
    const auto& m = sample.mesh;
    const std::size_t n = ds.ids.size();
    if (k < 1 || k >= n) {
        throw ParameterError("k = " + std::to_string(k) + " needs at least k + 1 selected vertices (have " +
                             std::to_string(n) + ")");
    }
    if (sample.pressure.size() != m.size() || sample.wss.size() != m.size())
        throw DimensionError("sample targets do not match the mesh");
    const Vec3 c = m.centroid();
    double rmax = 0.0;
    for (const auto& v : m.vertices) rmax = std::max(rmax, (v - c).norm());
    if (!(rmax > 0.0)) throw DegenerateGeometryError("mesh has zero extent");
    const double L = 2.0 * rmax;

    AeroGraphSample g;
    g.id = sample.id;
    g.family = sample.family;
    g.u_inf = sample.u_inf;
    g.rho = sample.rho;
    g.k = k;
    g.length = L;
    g.correspondence = ds.score;
    g.source_ids = ds.ids;
    double mean_area = 0.0;
    for (Index i : ds.ids) {
        if (i < 0 || static_cast<std::size_t>(i) >= m.size()) throw ContractError("downsample id outside the mesh");
        mean_area += m.area[i];
    }
    mean_area /= static_cast<double>(n);
    g.x = Tensor({n, kAeroNodeFeatures});
    for (std::size_t a = 0; a < n; ++a) {
        const Index i = ds.ids[a];
        const Vec3 p = (m.vertices[i] - c) / L;
        g.position.push_back(p);
        g.normal.push_back(m.normals[i]);
        g.area.push_back(m.area[i] / mean_area);
        g.pressure.push_back(sample.pressure[i]);
        g.wss.push_back(sample.wss[i]);
        double* row = g.x.data() + a * kAeroNodeFeatures;
        row[0] = p[0];
        row[1] = p[1];
        row[2] = p[2];
        row[3] = g.area.back();
        row[4] = m.normals[i][0];
        row[5] = m.normals[i][1];
        row[6] = m.normals[i][2];
        row[7] = m.curvature[i] * L;
        row[8] = (m.vertices[i] - c).norm() / rmax;
    }
    return g;
}

AeroGraphContext build_aero_context(const AeroGraphSample& s) {
    AeroGraphContext ctx;
    ctx.knn = build_knn_graph(s.position, s.normal, s.k);
    const auto& kg = ctx.knn;
    const std::size_t E = kg.edge_count();
    double mean_d = 0.0;
    for (double d : kg.distance) mean_d += d;
    mean_d = E ? mean_d / static_cast<double>(E) : 1.0;
    auto& g = ctx.graph;
    g.node_type.assign(s.size(), "surface");
    g.src = kg.src;
    g.dst = kg.dst;
    g.edge_type.assign(E, 0);
    g.x = s.x;
    g.r = Tensor({E, kAeroEdgeFeatures});
    for (std::size_t e = 0; e < E; ++e) {
        double* row = g.r.data() + e * kAeroEdgeFeatures;
        const double d = kg.distance[e];
        const Vec3 u = d > 0.0 ? Vec3(kg.offset[e] / d) : Vec3::Zero();
        row[0] = u[0];
        row[1] = u[1];
        row[2] = u[2];
        row[3] = d / mean_d;
        row[4] = kg.normal_cos[e];
    }
    ctx.divergence = knn_divergence_operator(s.position, s.area, kg);
    return ctx;
}

Tensor aero_targets(const AeroGraphSample& s, double c_ref) {
    const AeroScales sc{s.q_inf(), c_ref * s.q_inf()};
    Tensor t({s.size(), kAeroOutputs});
    for (std::size_t i = 0; i < s.size(); ++i) {
        t.at(i, 0) = sc.normalize_p(s.pressure[i]);
        for (int c = 0; c < 3; ++c) t.at(i, 1 + c) = sc.normalize_tau(s.wss[i][c]);
    }
    return t;
}

// ---------------------------------------------------------------------------
// Dataset

std::size_t AeroDataset::count(Split s) const {
    return static_cast<std::size_t>(std::count(split.begin(), split.end(), s));
}

AeroSample synth_aero_sample(const AeroDatasetConfig& cfg, int index) {
    const auto fam = static_cast<BodyFamily>(index % 3);
    std::mt19937_64 rng(splitmix(cfg.seed ^ splitmix(0xAE20000000ull + static_cast<std::uint64_t>(index))));
    const CarBodyParams params = sample_body_params(fam, rng);
    const double u = std::uniform_real_distribution<double>(cfg.u_min, cfg.u_max)(rng);
    const std::uint64_t label_seed = rng();
    char id[32];
    std::snprintf(id, sizeof(id), "aero_%04d", index);
    AeroLabelOptions opt;
    opt.perturbation = cfg.perturbation;
    return make_aero_sample(id, params, cfg.subdivisions, u, cfg.rho, label_seed, opt);
}

namespace {

void validate(const AeroDatasetConfig& cfg) {
    if (cfg.per_family < 1) throw ConfigError("per_family must be >= 1");
    if (!(cfg.u_min > 0.0) || !(cfg.u_max >= cfg.u_min)) throw ConfigError("speed range must satisfy 0 < u_min <= u_max");
    if (!(cfg.rho > 0.0)) throw ConfigError("density must be positive");
    if (cfg.subdivisions < 2 || cfg.subdivisions > 7) throw ConfigError("subdivisions must be in [2, 7]");
    if (cfg.k < 1) throw ConfigError("k must be >= 1");
    split_counts(3, cfg.ratios);
}

}  // namespace

AeroDataset build_aero_dataset(const AeroDatasetConfig& cfg, int workers) {
    validate(cfg);
    const int total = 3 * cfg.per_family;
    AeroDataset ds;
    ds.config = cfg;
    ds.samples.resize(static_cast<std::size_t>(total));
    parallel_for(static_cast<std::size_t>(total), workers, [&](std::size_t i) {
        AeroSample s = synth_aero_sample(cfg, static_cast<int>(i));
        const SymmetryFrame frame = detect_symmetry(s.mesh, SymmetryPlane::Detect, true);
        const auto res = downsample(s.mesh, frame, cfg.method, std::min(cfg.nodes, s.mesh.size()),
                                    splitmix(cfg.seed + 0x5A17ull * (i + 1)));
        ds.samples[i] = assemble_aero_graph(s, res, cfg.k);
    });
    std::vector<int> fam(ds.samples.size());
    for (std::size_t i = 0; i < fam.size(); ++i) fam[i] = static_cast<int>(ds.samples[i].family);
    ds.split = stratified_split(fam, cfg.ratios, cfg.seed);

    double acc = 0.0;
    std::size_t cnt = 0;
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        if (ds.split[i] != Split::Train) continue;
        const double q = ds.samples[i].q_inf();
        for (const auto& t : ds.samples[i].wss) acc += t.squaredNorm() / (q * q);
        cnt += ds.samples[i].size();
    }
    if (cnt == 0) throw ConfigError("aero dataset has no training samples");
    ds.c_ref = std::sqrt(acc / static_cast<double>(cnt));
    if (!(ds.c_ref > 0.0)) throw DomainError("reference shear stress is zero");
    return ds;
}

json to_json(const AeroDatasetConfig& c) {
    return json{{"per_family", c.per_family},     {"u_min", c.u_min},
                {"u_max", c.u_max},               {"rho", c.rho},
                {"subdivisions", c.subdivisions}, {"nodes", c.nodes},
                {"k", c.k},                       {"method", method_name(c.method)},
                {"ratios", c.ratios},             {"perturbation", c.perturbation},
                {"seed", c.seed}};
}

AeroDatasetConfig aero_config_from_json(const json& j) {
    io::check_keys(j, {"per_family", "u_min", "u_max", "rho", "subdivisions", "nodes", "k", "method", "ratios",
                   "perturbation", "seed"},
               "aero dataset config");
    AeroDatasetConfig c;
    try {
        c.per_family = j.value("per_family", c.per_family);
        c.u_min = j.value("u_min", c.u_min);
        c.u_max = j.value("u_max", c.u_max);
        c.rho = j.value("rho", c.rho);
        c.subdivisions = j.value("subdivisions", c.subdivisions);
        c.nodes = j.value("nodes", c.nodes);
        c.k = j.value("k", c.k);
        if (j.contains("method")) c.method = method_from_name(j.at("method").get<std::string>());
        if (j.contains("ratios")) c.ratios = j.at("ratios").get<std::array<double, 3>>();
        c.perturbation = j.value("perturbation", c.perturbation);
        c.seed = j.value("seed", c.seed);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("aero dataset config: ") + e.what());
    }
    validate(c);
    return c;
}

// ---------------------------------------------------------------------------
// Disk format

namespace {

json params_json(const CarBodyParams& p) {
    return json{{"family", std::string(1, family_tag(p.family))},
                {"length", p.length},
                {"width", p.width},
                {"height", p.height},
                {"cabin_height", p.cabin_height},
                {"cabin_center", p.cabin_center},
                {"cabin_length", p.cabin_length},
                {"rear_taper", p.rear_taper},
                {"nose_drop", p.nose_drop}};
}

CarBodyParams params_from_json(const json& j) {
    CarBodyParams p;
    p.family = family_from_tag(j.at("family").get<std::string>().at(0));
    p.length = j.at("length");
    p.width = j.at("width");
    p.height = j.at("height");
    p.cabin_height = j.at("cabin_height");
    p.cabin_center = j.at("cabin_center");
    p.cabin_length = j.at("cabin_length");
    p.rear_taper = j.at("rear_taper");
    p.nose_drop = j.at("nose_drop");
    return p;
}

const std::vector<std::string> kGraphColumns{"source_id", "px",   "py", "pz", "area", "nx",    "ny",
                                             "nz",        "curv", "dist", "p", "tau_x", "tau_y", "tau_z"};

}  // namespace

void write_aero_sample(const AeroSample& s, const fs::path& dir) {
    io::write_atomic(dir / (s.id + ".obj"), obj_string(s.mesh.vertices, s.mesh.triangles));
    FieldTable t;
    t.columns = {"p", "tau_x", "tau_y", "tau_z"};
    t.rows.reserve(s.mesh.size());
    for (std::size_t i = 0; i < s.mesh.size(); ++i) t.rows.push_back({s.pressure[i], s.wss[i][0], s.wss[i][1], s.wss[i][2]});
    io::write_atomic(dir / (s.id + ".csv"), field_csv_string(t));
    json meta{{"id", s.id},   {"family", std::string(1, family_tag(s.family))},
              {"u_inf", s.u_inf}, {"rho", s.rho},
              {"q_inf", s.q_inf()}, {"params", params_json(s.params)}};
    io::write_atomic(dir / (s.id + ".json"), meta.dump(2) + "\n");
}

AeroSample read_aero_sample(const fs::path& dir, const std::string& id) {
    AeroSample s;
    json meta;
    try {
        meta = json::parse(io::read_text(dir / (id + ".json")));
        s.id = meta.at("id");
        s.family = family_from_tag(meta.at("family").get<std::string>().at(0));
        s.u_inf = meta.at("u_inf");
        s.rho = meta.at("rho");
        s.params = params_from_json(meta.at("params"));
    } catch (const json::exception& e) {
        throw SchemaError(id + ".json: " + e.what());
    }
    RawMesh raw = read_obj(dir / (id + ".obj"));
    s.mesh = compute_differentials(std::move(raw.vertices), std::move(raw.triangles));
    const FieldTable t = read_field_csv(dir / (id + ".csv"));
    if (t.columns != std::vector<std::string>{"p", "tau_x", "tau_y", "tau_z"})
        throw SchemaError(id + ".csv: expected columns p,tau_x,tau_y,tau_z");
    if (t.rows.size() != s.mesh.size()) throw SchemaError(id + ".csv: row count does not match the mesh");
    for (const auto& r : t.rows) {
        s.pressure.push_back(r[0]);
        s.wss.emplace_back(r[1], r[2], r[3]);
    }
    return s;
}

void write_aero_dataset(const AeroDataset& ds, const fs::path& dir) {
    json items = json::array();
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        const auto& s = ds.samples[i];
        items.push_back({{"id", s.id},
                         {"family", std::string(1, family_tag(s.family))},
                         {"split", split_name(ds.split[i])},
                         {"u_inf", s.u_inf},
                         {"rho", s.rho},
                         {"k", s.k},
                         {"length", s.length},
                         {"correspondence", s.correspondence}});
        FieldTable t;
        t.columns = kGraphColumns;
        for (std::size_t a = 0; a < s.size(); ++a) {
            std::vector<double> row{static_cast<double>(s.source_ids[a])};
            for (std::size_t c = 0; c < kAeroNodeFeatures; ++c) row.push_back(s.x.at(a, c));
            row.push_back(s.pressure[a]);
            for (int c = 0; c < 3; ++c) row.push_back(s.wss[a][c]);
            t.rows.push_back(std::move(row));
        }
        io::write_atomic(dir / "graphs" / (s.id + ".csv"), field_csv_string(t));
    }
    json manifest{{"format", "enggraph-aero/1"},
                  {"config", to_json(ds.config)},
                  {"normalization", {{"pressure", "q_inf"}, {"wss", "c_ref*q_inf"}, {"c_ref", ds.c_ref}}},
                  {"samples", items}};
    io::write_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

AeroDataset read_aero_dataset(const fs::path& dir) {
    AeroDataset ds;
    json manifest;
    try {
        manifest = json::parse(io::read_text(dir / "manifest.json"));
        if (manifest.at("format") != "enggraph-aero/1") throw SchemaError("unsupported aero dataset format");
        ds.config = aero_config_from_json(manifest.at("config"));
        ds.c_ref = manifest.at("normalization").at("c_ref");
        for (const auto& it : manifest.at("samples")) {
            AeroGraphSample s;
            s.id = it.at("id");
            s.family = family_from_tag(it.at("family").get<std::string>().at(0));
            s.u_inf = it.at("u_inf");
            s.rho = it.at("rho");
            s.k = it.at("k");
            s.length = it.at("length");
            s.correspondence = it.at("correspondence");
            ds.split.push_back(split_from_name(it.at("split")));
            ds.samples.push_back(std::move(s));
        }
    } catch (const json::exception& e) {
        throw SchemaError(std::string("aero manifest: ") + e.what());
    }
    for (auto& s : ds.samples) {
        const FieldTable t = read_field_csv(dir / "graphs" / (s.id + ".csv"));
        if (t.columns != kGraphColumns) throw SchemaError(s.id + ".csv: unexpected columns");
        const std::size_t n = t.rows.size();
        s.x = Tensor({n, kAeroNodeFeatures});
        for (std::size_t a = 0; a < n; ++a) {
            const auto& r = t.rows[a];
            s.source_ids.push_back(static_cast<Index>(r[0]));
            for (std::size_t c = 0; c < kAeroNodeFeatures; ++c) s.x.at(a, c) = r[1 + c];
            s.position.emplace_back(r[1], r[2], r[3]);
            s.area.push_back(r[4]);
            s.normal.emplace_back(r[5], r[6], r[7]);
            s.pressure.push_back(r[10]);
            s.wss.emplace_back(r[11], r[12], r[13]);
        }
        if (s.k >= n) throw SchemaError(s.id + ": k exceeds node count");
    }
    return ds;
}

}  // namespace enggraph
