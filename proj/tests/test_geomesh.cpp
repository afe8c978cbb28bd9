#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>
#include <set>

#include "enggraph/geomesh.hpp"
#include "enggraph/io.hpp"

using namespace enggraph;

namespace {

// All-pairs oracle, ordered by (squared distance, index).
std::vector<Index> brute_knn(const std::vector<Vec3>& pts, std::size_t i, std::size_t k) {
    std::vector<std::pair<double, Index>> all;
    for (std::size_t j = 0; j < pts.size(); ++j)
        if (j != i) all.emplace_back((pts[j] - pts[i]).squaredNorm(), static_cast<Index>(j));
    std::sort(all.begin(), all.end());
    std::vector<Index> out;
    for (std::size_t t = 0; t < k; ++t) out.push_back(all[t].second);
    return out;
}

std::vector<Vec3> random_cloud(std::size_t n, std::uint64_t seed, bool lattice = false) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::uniform_int_distribution<int> g(-4, 4);
    std::vector<Vec3> pts(n);
    for (auto& p : pts) p = lattice ? Vec3(g(rng), g(rng), g(rng)) * 0.25 : Vec3(u(rng), u(rng), u(rng));
    return pts;
}

// n x n grid in the z=0 plane, spacing h, every quad split along the same diagonal.
SurfaceMesh grid_patch(int n, double h) {
    std::vector<Vec3> v;
    std::vector<Triangle> t;
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) v.emplace_back(i * h, j * h, 0.0);
    auto id = [n](int i, int j) { return static_cast<Index>(j * n + i); };
    for (int j = 0; j + 1 < n; ++j)
        for (int i = 0; i + 1 < n; ++i) {
            t.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
            t.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
        }
    return compute_differentials(std::move(v), std::move(t));
}

bool interior(int idx, int n) {
    int i = idx % n, j = idx / n;
    return i > 0 && j > 0 && i < n - 1 && j < n - 1;
}

std::vector<Vec3> random_tangential_field(const SurfaceMesh& m, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    Eigen::Matrix3d A;
    for (int i = 0; i < 9; ++i) A(i / 3, i % 3) = nd(rng);
    Vec3 b(nd(rng), nd(rng), nd(rng)), w(nd(rng), nd(rng), nd(rng));
    std::vector<Vec3> f;
    for (std::size_t i = 0; i < m.size(); ++i) {
        const Vec3& x = m.vertices[i];
        Vec3 g = A * x + b + std::sin(w.dot(x)) * Vec3(1.0, -0.5, 0.25);
        const Vec3& n = m.normals[i];
        f.push_back(g - g.dot(n) * n);
    }
    return f;
}

}  // namespace

TEST(Geomesh, FlatPatchHasZeroInteriorCurvature) {
    const int n = 9;
    SurfaceMesh m = grid_patch(n, 0.1);
    for (std::size_t i = 0; i < m.size(); ++i) {
        EXPECT_NEAR(m.normals[i].norm(), 1.0, 1e-9);
        if (interior(static_cast<int>(i), n)) EXPECT_NEAR(m.curvature[i], 0.0, 1e-6);
    }
}

TEST(Geomesh, IcosphereCurvatureAndArea) {
    SurfaceMesh m = icosphere(4);
    double area = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) {
        area += m.area[i];
        EXPECT_NEAR(m.curvature[i], 1.0, 0.05);
        EXPECT_NEAR(m.normals[i].norm(), 1.0, 1e-9);
        EXPECT_GT(m.normals[i].dot(m.vertices[i]), 0.99);
    }
    EXPECT_NEAR(area, 4.0 * std::numbers::pi, 0.01 * 4.0 * std::numbers::pi);
    EXPECT_NEAR(area, m.total_area(), 1e-9 * area);
}

TEST(Geomesh, CurvatureScalesWithRadius) {
    SurfaceMesh m = icosphere(3, 2.0);
    for (double h : m.curvature) {
        EXPECT_GT(h, 0.0);
        EXPECT_NEAR(h, 0.5, 0.025);
    }
}

TEST(Geomesh, RejectsIsolatedVertexAndZeroAreaTriangle) {
    SurfaceMesh s = icosphere(1);
    auto v = s.vertices;
    v.emplace_back(5.0, 5.0, 5.0);
    try {
        compute_differentials(v, s.triangles);
        FAIL();
    } catch (const DegenerateGeometryError& e) {
        EXPECT_NE(std::string(e.what()).find(std::to_string(v.size() - 1)), std::string::npos);
    }
    auto t = s.triangles;
    t.push_back({0, 0, 1});
    EXPECT_THROW(compute_differentials(s.vertices, t), DegenerateGeometryError);
    t.back() = {0, 1, 999};
    EXPECT_THROW(compute_differentials(s.vertices, t), DimensionError);
}

TEST(Geomesh, IcosphereCounts) {
    for (int s = 0; s <= 4; ++s) {
        SurfaceMesh m = icosphere(s);
        const std::size_t p = std::size_t{1} << (2 * s);
        EXPECT_EQ(m.size(), 10 * p + 2);
        EXPECT_EQ(m.triangles.size(), 20 * p);
    }
    SurfaceMesh m = icosphere(3);
    EXPECT_EQ(m.size(), 642u);
    EXPECT_EQ(m.triangles.size(), 1280u);
}

TEST(Geomesh, EllipsoidBoundingBox) {
    SurfaceMesh m = ellipsoid(2.0, 1.0, 0.8, 3);
    Vec3 e = m.extent();
    EXPECT_NEAR(e[0], 4.0, 1e-9);
    EXPECT_NEAR(e[1], 2.0, 1e-9);
    EXPECT_NEAR(e[2], 1.6, 1e-9);
    EXPECT_THROW(ellipsoid(-1.0, 1.0, 1.0, 3), ParameterError);
    EXPECT_THROW(ellipsoid(1.0, 1.0, 1.0, 1), ParameterError);
}

TEST(Geomesh, KdTreeMatchesBruteForceOnRandomCloud) {
    auto pts = random_cloud(1000, 42);
    KdTree tree(pts);
    for (std::size_t i = 0; i < pts.size(); ++i) EXPECT_EQ(tree.knn(pts[i], 16, i), brute_knn(pts, i, 16));
}

TEST(Geomesh, KdTreeMatchesBruteForceOnFiftyClouds) {
    for (std::uint64_t s = 0; s < 50; ++s) {
        // every fifth cloud sits on a coarse lattice so distances tie
        auto pts = random_cloud(100 + 37 * s, 1000 + s, s % 5 == 0);
        const std::size_t k = 1 + s % 20;
        KdTree tree(pts);
        for (std::size_t i = 0; i < pts.size(); ++i) ASSERT_EQ(tree.knn(pts[i], k, i), brute_knn(pts, i, k)) << s;
    }
}

TEST(Geomesh, KnnGraphStructure) {
    auto pts = random_cloud(300, 9);
    KnnGraph g = build_knn_graph(pts, {}, 16);
    EXPECT_EQ(g.k, 16u);
    std::vector<int> out(pts.size(), 0);
    for (Index s : g.directed_src) ++out[s];
    for (int c : out) EXPECT_EQ(c, 16);
    std::set<std::pair<Index, Index>> edges;
    for (std::size_t e = 0; e < g.edge_count(); ++e) {
        EXPECT_NE(g.src[e], g.dst[e]);
        EXPECT_TRUE(edges.emplace(g.src[e], g.dst[e]).second);
        EXPECT_NEAR((pts[g.dst[e]] - pts[g.src[e]] - g.offset[e]).norm(), 0.0, 0.0);
    }
    for (const auto& [a, b] : edges) EXPECT_TRUE(edges.count({b, a}));
    for (std::size_t e = 0; e < g.directed_src.size(); ++e) EXPECT_TRUE(edges.count({g.directed_src[e], g.directed_dst[e]}));
}

TEST(Geomesh, KnnGraphTwoVertices) {
    KnnGraph g = build_knn_graph({Vec3(0, 0, 0), Vec3(1, 0, 0)}, {}, 1);
    ASSERT_EQ(g.edge_count(), 2u);
    EXPECT_EQ(g.src[0], g.dst[1]);
    EXPECT_EQ(g.dst[0], g.src[1]);
    EXPECT_DOUBLE_EQ(g.distance[0], 1.0);
}

TEST(Geomesh, KnnGraphRejectsLargeK) {
    auto pts = random_cloud(10, 1);
    EXPECT_THROW(build_knn_graph(pts, {}, 10), ParameterError);
    EXPECT_THROW(build_knn_graph(pts, {}, 0), ParameterError);
    EXPECT_EQ(kDefaultNeighbors, 16u);
    SurfaceMesh m = icosphere(2);
    EXPECT_EQ(build_knn_graph(m).k, 16u);
}

TEST(Geomesh, IcosphereSymmetryPlane) {
    SurfaceMesh m = icosphere(3);
    SymmetryFrame f = detect_symmetry(m);
    EXPECT_NEAR(std::abs(f.normal[1]), 1.0, 1e-6);
    EXPECT_NEAR(f.normal[0], 0.0, 1e-6);
    EXPECT_NEAR(f.normal[2], 0.0, 1e-6);
    EXPECT_EQ(f.quality, 1.0);
    EXPECT_GT(f.epsilon, 0.0);
}

TEST(Geomesh, PerturbedMidlineVertexLowersQualityByOne) {
    SurfaceMesh m = icosphere(3);
    const double delta = 1e-4 * m.diagonal();
    auto it = std::find_if(m.vertices.begin(), m.vertices.end(), [](const Vec3& v) { return v[1] == 0.0; });
    ASSERT_NE(it, m.vertices.end());
    (*it)[1] += 10.0 * delta;
    SymmetryFrame f = detect_symmetry(m);
    const double n = static_cast<double>(m.size());
    EXPECT_DOUBLE_EQ(f.quality, (n - 1.0) / n);
    EXPECT_NEAR(std::abs(f.normal[1]), 1.0, 1e-6);
}

TEST(Geomesh, AsymmetricMeshRejected) {
    SurfaceMesh m = icosphere(2);
    std::mt19937_64 rng(4);
    std::normal_distribution<double> nd(0.0, 0.05);
    for (auto& v : m.vertices) v += Vec3(nd(rng), nd(rng), nd(rng));
    EXPECT_THROW(detect_symmetry(m), AsymmetricGeometryError);
    EXPECT_LT(detect_symmetry(m, SymmetryPlane::Detect, true).quality, 0.9);
}

TEST(Geomesh, CarBodyIsMirrorExact) {
    std::mt19937_64 rng(3);
    for (BodyFamily fam : {BodyFamily::A, BodyFamily::B, BodyFamily::C}) {
        SurfaceMesh m = car_body(sample_body_params(fam, rng), 3);
        EXPECT_EQ(detect_symmetry(m, SymmetryPlane::Y0).quality, 1.0);
        SymmetryFrame f = detect_symmetry(m);
        EXPECT_EQ(f.quality, 1.0);
        EXPECT_NEAR(std::abs(f.normal[1]), 1.0, 1e-12);
    }
}

TEST(Geomesh, MirrorIsAnInvolution) {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> nd;
    for (int rep = 0; rep < 100; ++rep) {
        SymmetryFrame f;
        f.normal = Vec3(nd(rng), nd(rng), nd(rng)).normalized();
        f.offset = nd(rng);
        Vec3 p(nd(rng), nd(rng), nd(rng));
        EXPECT_LT((f.reflect(f.reflect(p)) - p).norm(), 1e-12);
    }
}

TEST(Geomesh, DivergenceOfZeroFieldIsZero) {
    SurfaceMesh m = icosphere(2);
    for (double d : surface_divergence(m, std::vector<Vec3>(m.size(), Vec3::Zero()))) EXPECT_EQ(d, 0.0);
}

TEST(Geomesh, PlanarDivergenceOfLinearField) {
    const int n = 11;
    SurfaceMesh m = grid_patch(n, 0.1);
    std::vector<Vec3> f;
    for (const auto& v : m.vertices) f.emplace_back(v[0], 0.0, 0.0);
    auto div = surface_divergence(m, f);
    for (std::size_t i = 0; i < m.size(); ++i)
        if (interior(static_cast<int>(i), n)) EXPECT_NEAR(div[i], 1.0, 0.05);
}

TEST(Geomesh, ClosedSurfaceDivergenceIntegralVanishes) {
    SurfaceMesh m = icosphere(3);
    for (std::uint64_t s = 0; s < 10; ++s) {
        auto div = surface_divergence(m, random_tangential_field(m, s));
        double sum = 0.0, mag = 0.0;
        for (std::size_t i = 0; i < m.size(); ++i) {
            sum += m.area[i] * div[i];
            mag += m.area[i] * std::abs(div[i]);
        }
        EXPECT_GT(mag, 0.0);
        EXPECT_LT(std::abs(sum), 1e-3 * mag);
    }
}

TEST(Geomesh, KnnDivergenceOfLinearFieldOnPlane) {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> jitter(-0.02, 0.02);
    const int n = 25;
    std::vector<Vec3> pts;
    std::vector<Vec3> normals;
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) {
            pts.emplace_back(0.1 * i + jitter(rng), 0.1 * j + jitter(rng), 0.0);
            normals.emplace_back(0.0, 0.0, 1.0);
        }
    KnnGraph g = build_knn_graph(pts, normals, 8);
    std::vector<double> area(pts.size(), 0.01);
    SparseMatrix D = knn_divergence_operator(pts, area, g);
    Eigen::VectorXd f(3 * pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) f.segment<3>(3 * i) = Vec3(pts[i][0], pts[i][1], 0.0);
    Eigen::VectorXd d = D * f;
    double mean = 0.0;
    int count = 0;
    for (int j = 4; j < n - 4; ++j)
        for (int i = 4; i < n - 4; ++i) {
            mean += d[j * n + i];
            ++count;
        }
    EXPECT_NEAR(mean / count, 2.0, 0.2);
}

TEST(Geomesh, ObjAndFieldRoundTrip) {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "enggraph_geomesh_io";
    fs::create_directories(dir);
    SurfaceMesh m = car_body(CarBodyParams{}, 2);
    io::write_atomic(dir / "body.obj", obj_string(m.vertices, m.triangles));
    RawMesh r = read_obj(dir / "body.obj");
    ASSERT_EQ(r.vertices.size(), m.size());
    for (std::size_t i = 0; i < m.size(); ++i) EXPECT_EQ(r.vertices[i], m.vertices[i]);
    EXPECT_EQ(r.triangles, m.triangles);

    FieldTable t{{"p", "tau_x"}, {}};
    for (std::size_t i = 0; i < m.size(); ++i) t.rows.push_back({m.curvature[i], m.area[i] / 3.0});
    io::write_atomic(dir / "fields.csv", field_csv_string(t));
    FieldTable back = read_field_csv(dir / "fields.csv");
    EXPECT_EQ(back.columns, t.columns);
    EXPECT_EQ(back.rows, t.rows);
    EXPECT_EQ(io::read_text(dir / "fields.csv").substr(0, 20), "vertex_id,p,tau_x\n0,");
    fs::remove_all(dir);
}
