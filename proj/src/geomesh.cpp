#include "enggraph/geomesh.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <queue>
#include <sstream>
#include <unordered_map>

#include <Eigen/Eigenvalues>

#include "enggraph/io.hpp"

namespace enggraph {

namespace {

void check_triangles(std::size_t n, const std::vector<Triangle>& tris) {
    for (std::size_t t = 0; t < tris.size(); ++t)
        for (Index v : tris[t])
            if (v < 0 || static_cast<std::size_t>(v) >= n) {
                throw DimensionError("triangle " + std::to_string(t) + " references vertex " + std::to_string(v) +
                                     " of " + std::to_string(n));
            }
}

double smoothstep(double u) {
    u = std::clamp(u, 0.0, 1.0);
    return u * u * (3.0 - 2.0 * u);
}

}  // namespace

double SurfaceMesh::total_area() const {
    double s = 0.0;
    for (const auto& t : triangles) {
        s += 0.5 * (vertices[t[1]] - vertices[t[0]]).cross(vertices[t[2]] - vertices[t[0]]).norm();
    }
    return s;
}

Vec3 SurfaceMesh::centroid() const {
    Vec3 c = Vec3::Zero();
    for (const auto& v : vertices) c += v;
    return vertices.empty() ? c : Vec3(c / static_cast<double>(vertices.size()));
}

Vec3 SurfaceMesh::extent() const {
    if (vertices.empty()) return Vec3::Zero();
    Vec3 lo = vertices[0], hi = vertices[0];
    for (const auto& v : vertices) {
        lo = lo.cwiseMin(v);
        hi = hi.cwiseMax(v);
    }
    return hi - lo;
}

std::vector<CotanEdge> cotan_edges(const std::vector<Vec3>& x, const std::vector<Triangle>& tris) {
    std::vector<CotanEdge> raw;
    raw.reserve(tris.size() * 3);
    for (const auto& t : tris) {
        for (int k = 0; k < 3; ++k) {
            Index i = t[(k + 1) % 3], j = t[(k + 2) % 3], o = t[k];
            Vec3 u = x[i] - x[o], v = x[j] - x[o];
            double cot = u.dot(v) / u.cross(v).norm();
            raw.push_back({std::min(i, j), std::max(i, j), 0.5 * cot});
        }
    }
    std::sort(raw.begin(), raw.end(), [](const CotanEdge& a, const CotanEdge& b) {
        return a.i != b.i ? a.i < b.i : a.j < b.j;
    });
    std::vector<CotanEdge> out;
    for (const auto& e : raw) {
        if (!out.empty() && out.back().i == e.i && out.back().j == e.j) out.back().w += e.w;
        else out.push_back(e);
    }
    return out;
}

SurfaceMesh compute_differentials(std::vector<Vec3> vertices, std::vector<Triangle> triangles) {
    const std::size_t n = vertices.size();
    if (n < 4) throw DegenerateGeometryError("mesh needs at least 4 vertices, got " + std::to_string(n));
    check_triangles(n, triangles);
    SurfaceMesh m;
    m.vertices = std::move(vertices);
    m.triangles = std::move(triangles);
    m.normals.assign(n, Vec3::Zero());
    m.area.assign(n, 0.0);
    m.curvature.assign(n, 0.0);
    const double scale2 = std::max(m.extent().squaredNorm(), 1e-300);
    for (std::size_t t = 0; t < m.triangles.size(); ++t) {
        const auto& tri = m.triangles[t];
        Vec3 cr = (m.vertices[tri[1]] - m.vertices[tri[0]]).cross(m.vertices[tri[2]] - m.vertices[tri[0]]);
        const double a = 0.5 * cr.norm();
        if (!(a > 1e-14 * scale2)) throw DegenerateGeometryError("zero-area triangle " + std::to_string(t));
        for (Index v : tri) {
            m.normals[v] += cr;
            m.area[v] += a / 3.0;
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (m.area[i] == 0.0) throw DegenerateGeometryError("isolated vertex " + std::to_string(i));
        m.normals[i].normalize();
    }
    // mixed Voronoi area for the curvature estimate
    std::vector<double> voronoi(n, 0.0);
    for (const auto& tri : m.triangles) {
        const Vec3* p[3] = {&m.vertices[tri[0]], &m.vertices[tri[1]], &m.vertices[tri[2]]};
        const double a = 0.5 * (*p[1] - *p[0]).cross(*p[2] - *p[0]).norm();
        int obtuse = -1;
        for (int k = 0; k < 3; ++k)
            if ((*p[(k + 1) % 3] - *p[k]).dot(*p[(k + 2) % 3] - *p[k]) < 0.0) obtuse = k;
        for (int k = 0; k < 3; ++k) {
            if (obtuse >= 0) {
                voronoi[tri[k]] += k == obtuse ? 0.5 * a : 0.25 * a;
                continue;
            }
            const Vec3 &x = *p[k], &q = *p[(k + 1) % 3], &r = *p[(k + 2) % 3];
            auto cot = [](const Vec3& u, const Vec3& v) { return u.dot(v) / u.cross(v).norm(); };
            voronoi[tri[k]] += ((r - x).squaredNorm() * cot(x - q, r - q) + (q - x).squaredNorm() * cot(x - r, q - r)) / 8.0;
        }
    }
    std::vector<Vec3> lap(n, Vec3::Zero());
    for (const auto& e : cotan_edges(m.vertices, m.triangles)) {
        Vec3 d = m.vertices[e.j] - m.vertices[e.i];
        lap[e.i] += e.w * d;
        lap[e.j] -= e.w * d;
    }
    for (std::size_t i = 0; i < n; ++i) {
        double h = lap[i].norm() / (2.0 * voronoi[i]);
        m.curvature[i] = m.normals[i].dot(lap[i]) <= 0.0 ? h : -h;
    }
    return m;
}

// ---------------------------------------------------------------------------
// KdTree

KdTree::KdTree(const std::vector<Vec3>& points, std::size_t leaf_size) : pts_(points), leaf_size_(leaf_size) {
    perm_.resize(pts_.size());
    std::iota(perm_.begin(), perm_.end(), 0);
    if (!pts_.empty()) build(0, static_cast<std::uint32_t>(pts_.size()));
}

std::int32_t KdTree::build(std::uint32_t begin, std::uint32_t end) {
    Node node;
    node.begin = begin;
    node.end = end;
    for (int d = 0; d < 3; ++d) {
        node.lo[d] = std::numeric_limits<double>::infinity();
        node.hi[d] = -std::numeric_limits<double>::infinity();
    }
    for (std::uint32_t i = begin; i < end; ++i)
        for (int d = 0; d < 3; ++d) {
            node.lo[d] = std::min(node.lo[d], pts_[perm_[i]][d]);
            node.hi[d] = std::max(node.hi[d], pts_[perm_[i]][d]);
        }
    const auto id = static_cast<std::int32_t>(nodes_.size());
    nodes_.push_back(node);
    if (end - begin <= leaf_size_) return id;
    int dim = 0;
    for (int d = 1; d < 3; ++d)
        if (node.hi[d] - node.lo[d] > node.hi[dim] - node.lo[dim]) dim = d;
    const std::uint32_t mid = begin + (end - begin) / 2;
    std::nth_element(perm_.begin() + begin, perm_.begin() + mid, perm_.begin() + end,
                     [&](Index a, Index b) { return pts_[a][dim] < pts_[b][dim]; });
    const std::int32_t l = build(begin, mid);
    const std::int32_t r = build(mid, end);
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
}

std::vector<Index> KdTree::knn(const Vec3& q, std::size_t k, Index exclude) const {
    using Cand = std::pair<double, Index>;
    std::priority_queue<Cand> heap;  // worst candidate on top
    auto box_d2 = [&](const Node& n) {
        double s = 0.0;
        for (int d = 0; d < 3; ++d) {
            double v = q[d] < n.lo[d] ? n.lo[d] - q[d] : (q[d] > n.hi[d] ? q[d] - n.hi[d] : 0.0);
            s += v * v;
        }
        return s;
    };
    std::vector<std::int32_t> stack;
    if (!nodes_.empty() && k > 0) stack.push_back(0);
    while (!stack.empty()) {
        const Node& n = nodes_[stack.back()];
        stack.pop_back();
        if (heap.size() == k && box_d2(n) > heap.top().first) continue;
        if (n.left < 0) {
            for (std::uint32_t i = n.begin; i < n.end; ++i) {
                const Index p = perm_[i];
                if (p == exclude) continue;
                Cand c{(pts_[p] - q).squaredNorm(), p};
                if (heap.size() < k) heap.push(c);
                else if (c < heap.top()) {
                    heap.pop();
                    heap.push(c);
                }
            }
            continue;
        }
        const double dl = box_d2(nodes_[n.left]), dr = box_d2(nodes_[n.right]);
        // push the farther child first so the nearer one is searched first
        if (dl <= dr) {
            stack.push_back(n.right);
            stack.push_back(n.left);
        } else {
            stack.push_back(n.left);
            stack.push_back(n.right);
        }
    }
    std::vector<Index> out(heap.size());
    for (std::size_t i = out.size(); i-- > 0;) {
        out[i] = heap.top().second;
        heap.pop();
    }
    return out;
}

std::pair<Index, double> KdTree::nearest(const Vec3& q) const {
    auto r = knn(q, 1);
    if (r.empty()) return {-1, std::numeric_limits<double>::infinity()};
    return {r[0], (pts_[r[0]] - q).norm()};
}

// ---------------------------------------------------------------------------
// k-NN graph

KnnGraph build_knn_graph(const std::vector<Vec3>& points, const std::vector<Vec3>& normals, std::size_t k) {
    const std::size_t n = points.size();
    if (k < 1 || k >= n) {
        throw ParameterError("k-NN needs 1 <= k < N (k=" + std::to_string(k) + ", N=" + std::to_string(n) + ")");
    }
    if (!normals.empty() && normals.size() != n) throw DimensionError("normals do not match point count");
    KdTree tree(points);
    KnnGraph g;
    g.k = k;
    g.directed_src.reserve(n * k);
    g.directed_dst.reserve(n * k);
    std::vector<std::pair<Index, Index>> pairs;  // (dst, src)
    pairs.reserve(2 * n * k);
    for (std::size_t i = 0; i < n; ++i) {
        for (Index j : tree.knn(points[i], k, static_cast<Index>(i))) {
            g.directed_src.push_back(static_cast<Index>(i));
            g.directed_dst.push_back(j);
            pairs.emplace_back(j, static_cast<Index>(i));
            pairs.emplace_back(static_cast<Index>(i), j);
        }
    }
    std::sort(pairs.begin(), pairs.end());
    pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
    for (const auto& [d, s] : pairs) {
        g.src.push_back(s);
        g.dst.push_back(d);
        Vec3 off = points[d] - points[s];
        g.offset.push_back(off);
        g.distance.push_back(off.norm());
        g.normal_cos.push_back(normals.empty() ? 0.0 : normals[s].dot(normals[d]));
    }
    return g;
}

KnnGraph build_knn_graph(const SurfaceMesh& mesh, std::size_t k) {
    return build_knn_graph(mesh.vertices, mesh.normals, k);
}

// ---------------------------------------------------------------------------
// Symmetry

double symmetry_quality(const SurfaceMesh& mesh, const SymmetryFrame& frame, const KdTree* tree) {
    std::unique_ptr<KdTree> own;
    if (tree == nullptr) {
        own = std::make_unique<KdTree>(mesh.vertices);
        tree = own.get();
    }
    std::size_t ok = 0;
    for (const auto& v : mesh.vertices)
        if (tree->nearest(frame.reflect(v)).second <= frame.delta_match) ++ok;
    return mesh.vertices.empty() ? 0.0 : static_cast<double>(ok) / static_cast<double>(mesh.vertices.size());
}

SymmetryFrame detect_symmetry(const SurfaceMesh& mesh, SymmetryPlane plane, bool allow_asymmetric) {
    if (mesh.vertices.empty()) throw DegenerateGeometryError("empty mesh");
    const double delta = 1e-4 * mesh.diagonal();
    KdTree tree(mesh.vertices);
    SymmetryFrame best;
    best.delta_match = delta;
    best.epsilon = delta;
    if (plane == SymmetryPlane::Y0) {
        best.quality = symmetry_quality(mesh, best, &tree);
    } else {
        const Vec3 c = mesh.centroid();
        Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
        for (const auto& v : mesh.vertices) cov += (v - c) * (v - c).transpose();
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
        std::vector<Vec3> candidates{Vec3::UnitY(), Vec3::UnitX(), Vec3::UnitZ()};
        for (int a = 0; a < 3; ++a) candidates.push_back(eig.eigenvectors().col(a).normalized());
        best.quality = -1.0;
        for (const auto& n : candidates) {
            SymmetryFrame f = best;
            f.normal = n;
            f.offset = n.dot(c);
            f.quality = symmetry_quality(mesh, f, &tree);
            if (f.quality > best.quality) best = f;
        }
    }
    if (best.quality < kSymmetryQualityMin && !allow_asymmetric) {
        throw AsymmetricGeometryError("mirror quality " + io::num(best.quality) + " below 0.9");
    }
    return best;
}

// ---------------------------------------------------------------------------
// Divergence

SparseMatrix divergence_operator(const std::vector<Vec3>& x, const std::vector<double>& area,
                                 const std::vector<CotanEdge>& edges) {
    const auto n = static_cast<Eigen::Index>(x.size());
    if (area.size() != x.size()) throw DimensionError("area does not match vertex count");
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(edges.size() * 12);
    for (const auto& e : edges) {
        const Vec3 d = x[e.j] - x[e.i];
        for (int c = 0; c < 3; ++c) {
            const double gi = 0.5 * e.w * d[c] / area[e.i];
            const double gj = -0.5 * e.w * d[c] / area[e.j];
            trip.emplace_back(e.i, 3 * e.i + c, gi);
            trip.emplace_back(e.i, 3 * e.j + c, gi);
            trip.emplace_back(e.j, 3 * e.i + c, gj);
            trip.emplace_back(e.j, 3 * e.j + c, gj);
        }
    }
    SparseMatrix D(n, 3 * n);
    D.setFromTriplets(trip.begin(), trip.end());
    return D;
}

SparseMatrix surface_divergence_operator(const SurfaceMesh& mesh) {
    return divergence_operator(mesh.vertices, mesh.area, cotan_edges(mesh.vertices, mesh.triangles));
}

std::vector<double> surface_divergence(const SurfaceMesh& mesh, const std::vector<Vec3>& field) {
    if (field.size() != mesh.size()) throw DimensionError("field does not match vertex count");
    Eigen::VectorXd f(3 * field.size());
    for (std::size_t i = 0; i < field.size(); ++i) f.segment<3>(3 * i) = field[i];
    Eigen::VectorXd d = surface_divergence_operator(mesh) * f;
    return {d.data(), d.data() + d.size()};
}

SparseMatrix knn_divergence_operator(const std::vector<Vec3>& x, const std::vector<double>& area,
                                     const KnnGraph& g) {
    std::vector<double> s(x.size(), 0.0);
    for (std::size_t e = 0; e < g.edge_count(); ++e) s[g.dst[e]] += g.distance[e] * g.distance[e];
    std::vector<CotanEdge> edges;
    for (std::size_t e = 0; e < g.edge_count(); ++e) {
        const Index i = g.src[e], j = g.dst[e];
        if (i >= j) continue;
        edges.push_back({i, j, 2.0 * (area[i] / s[i] + area[j] / s[j])});
    }
    return divergence_operator(x, area, edges);
}

// ---------------------------------------------------------------------------
// Generators

SurfaceMesh icosphere(int subdivisions, double radius) {
    if (subdivisions < 0) throw ParameterError("subdivision count must be >= 0");
    if (!(radius > 0.0)) throw ParameterError("radius must be positive");
    const double p = (1.0 + std::sqrt(5.0)) / 2.0;
    std::vector<Vec3> v{{-1, p, 0}, {1, p, 0}, {-1, -p, 0}, {1, -p, 0}, {0, -1, p}, {0, 1, p},
                        {0, -1, -p}, {0, 1, -p}, {p, 0, -1}, {p, 0, 1}, {-p, 0, -1}, {-p, 0, 1}};
    for (auto& x : v) x /= x.norm();
    std::vector<Triangle> f{{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
                            {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
                            {3, 8, 9},  {4, 9, 5},  {2, 4, 11}, {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
    for (int s = 0; s < subdivisions; ++s) {
        std::map<std::pair<Index, Index>, Index> cache;
        auto mid = [&](Index a, Index b) {
            auto key = std::minmax(a, b);
            auto it = cache.find(key);
            if (it != cache.end()) return it->second;
            Vec3 m = (v[a] + v[b]) * 0.5;
            v.push_back(m / m.norm());
            return cache[key] = static_cast<Index>(v.size() - 1);
        };
        std::vector<Triangle> next;
        next.reserve(f.size() * 4);
        for (const auto& t : f) {
            Index a = mid(t[0], t[1]), b = mid(t[1], t[2]), c = mid(t[2], t[0]);
            next.push_back({t[0], a, c});
            next.push_back({t[1], b, a});
            next.push_back({t[2], c, b});
            next.push_back({a, b, c});
        }
        f = std::move(next);
    }
    for (auto& t : f) {
        Vec3 n = (v[t[1]] - v[t[0]]).cross(v[t[2]] - v[t[0]]);
        if (n.dot(v[t[0]] + v[t[1]] + v[t[2]]) < 0.0) std::swap(t[1], t[2]);
    }
    for (auto& x : v) x *= radius;
    return compute_differentials(std::move(v), std::move(f));
}

SurfaceMesh ellipsoid(double a, double b, double c, int subdivisions) {
    if (!(a > 0 && b > 0 && c > 0)) throw ParameterError("ellipsoid semi-axes must be positive");
    if (subdivisions < 2) throw ParameterError("subdivision must be >= 2");
    SurfaceMesh s = icosphere(subdivisions);
    for (auto& x : s.vertices) x = Vec3(a * x[0], b * x[1], c * x[2]);
    return compute_differentials(std::move(s.vertices), std::move(s.triangles));
}

char family_tag(BodyFamily f) { return f == BodyFamily::A ? 'A' : f == BodyFamily::B ? 'B' : 'C'; }

BodyFamily family_from_tag(char c) {
    switch (c) {
        case 'A': return BodyFamily::A;
        case 'B': return BodyFamily::B;
        case 'C': return BodyFamily::C;
    }
    throw ParameterError(std::string("unknown body family '") + c + "'");
}

CarBodyParams sample_body_params(BodyFamily family, std::mt19937_64& rng) {
    auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    CarBodyParams p;
    p.family = family;
    p.length = u(4.3, 4.9);
    p.width = u(1.75, 1.95);
    p.height = u(1.3, 1.5);
    p.cabin_height = u(0.3, 0.55);
    p.cabin_center = u(-0.05, 0.15);
    p.cabin_length = u(0.35, 0.55);
    p.rear_taper = u(0.1, 0.35);
    p.nose_drop = u(0.05, 0.25);
    return p;
}

SurfaceMesh car_body(const CarBodyParams& p, int subdivisions) {
    if (!(p.length > 0 && p.width > 0 && p.height > 0)) throw ParameterError("body dimensions must be positive");
    if (!(p.cabin_length > 0) || p.cabin_height < 0 || p.rear_taper < 0 || p.rear_taper >= 0.9 || p.nose_drop < 0 ||
        p.nose_drop >= 0.9) {
        throw ParameterError("body shape parameters out of range");
    }
    if (subdivisions < 2) throw ParameterError("subdivision must be >= 2");
    SurfaceMesh s = icosphere(subdivisions);
    const double a = 0.5 * p.length, b = 0.5 * p.width, c = 0.5 * p.height;
    const double cc = p.cabin_center, cl = p.cabin_length;
    for (auto& v : s.vertices) {
        const double x = v[0], y = v[1], z = v[2];
        const double rear = std::pow(std::clamp((x - 0.3) / 0.7, 0.0, 1.0), 2);
        const double nose = std::pow(std::clamp((-x - 0.3) / 0.7, 0.0, 1.0), 2);
        const double rise = smoothstep((x - (cc - cl)) / 0.25);
        double h = 0.0;
        switch (p.family) {
            case BodyFamily::A: h = rise * (1.0 - 0.8 * smoothstep((x - 0.75) / 0.25)); break;
            case BodyFamily::B: h = rise * (1.0 - 0.9 * smoothstep((x - cc) / (1.0 - cc))); break;
            case BodyFamily::C: h = rise * (1.0 - 0.7 * smoothstep((x - (cc + cl)) / 0.15)); break;
        }
        const double up = z > 0.0 ? z * z : 0.0;
        const double Y = b * y * (1.0 - 0.5 * p.rear_taper * rear);
        double Z = c * z * (1.0 - 0.3 * p.rear_taper * rear);
        Z += c * up * (p.cabin_height * h - p.nose_drop * nose);
        v = Vec3(a * x, Y, Z);
    }
    return compute_differentials(std::move(s.vertices), std::move(s.triangles));
}

// ---------------------------------------------------------------------------
// I/O

RawMesh read_obj(const std::filesystem::path& path) {
    std::istringstream in(io::read_text(path));
    RawMesh m;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream ls(line);
        std::string tag;
        if (!(ls >> tag) || tag[0] == '#') continue;
        if (tag == "v") {
            Vec3 p;
            if (!(ls >> p[0] >> p[1] >> p[2])) throw SchemaError(path.string() + ":" + std::to_string(lineno) + ": bad vertex");
            m.vertices.push_back(p);
        } else if (tag == "f") {
            std::vector<Index> ids;
            std::string tok;
            while (ls >> tok) {
                Index id = std::stoll(tok.substr(0, tok.find('/')));
                ids.push_back(id < 0 ? static_cast<Index>(m.vertices.size()) + id : id - 1);
            }
            if (ids.size() != 3) {
                throw SchemaError(path.string() + ":" + std::to_string(lineno) + ": only triangular faces are supported");
            }
            m.triangles.push_back({ids[0], ids[1], ids[2]});
        }
    }
    check_triangles(m.vertices.size(), m.triangles);
    return m;
}

std::string obj_string(const std::vector<Vec3>& vertices, const std::vector<Triangle>& triangles) {
    std::string out;
    for (const auto& v : vertices) out += "v " + io::num(v[0]) + " " + io::num(v[1]) + " " + io::num(v[2]) + "\n";
    for (const auto& t : triangles) {
        out += "f " + std::to_string(t[0] + 1) + " " + std::to_string(t[1] + 1) + " " + std::to_string(t[2] + 1) + "\n";
    }
    return out;
}

FieldTable read_field_csv(const std::filesystem::path& path) {
    std::istringstream in(io::read_text(path));
    std::string line;
    if (!std::getline(in, line)) throw SchemaError(path.string() + ": empty field file");
    auto split = [](const std::string& s) {
        std::vector<std::string> parts;
        std::string cur;
        std::istringstream ss(s);
        while (std::getline(ss, cur, ',')) parts.push_back(cur);
        return parts;
    };
    auto header = split(line);
    if (header.empty() || header[0] != "vertex_id") throw SchemaError(path.string() + ": header must start with vertex_id");
    FieldTable t;
    t.columns.assign(header.begin() + 1, header.end());
    std::vector<std::pair<long long, std::vector<double>>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto parts = split(line);
        if (parts.size() != header.size()) throw SchemaError(path.string() + ": ragged row '" + line + "'");
        std::vector<double> vals;
        for (std::size_t i = 1; i < parts.size(); ++i) vals.push_back(std::stod(parts[i]));
        rows.emplace_back(std::stoll(parts[0]), std::move(vals));
    }
    std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].first != static_cast<long long>(i)) throw SchemaError(path.string() + ": vertex ids must be 0..N-1");
        t.rows.push_back(std::move(rows[i].second));
    }
    return t;
}

std::string field_csv_string(const FieldTable& table) {
    std::string out = "vertex_id";
    for (const auto& c : table.columns) out += "," + c;
    out += "\n";
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        out += std::to_string(i);
        for (double v : table.rows[i]) out += "," + io::num(v);
        out += "\n";
    }
    return out;
}

}  // namespace enggraph
