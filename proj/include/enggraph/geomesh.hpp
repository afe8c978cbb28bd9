#pragma once

// Triangle surface meshes, per-vertex differential quantities, k-NN graphs,
// mirror symmetry, discrete surface divergence and parametric bodies.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "enggraph/diffcore.hpp"

namespace enggraph {

using Vec3 = Eigen::Vector3d;
using Triangle = std::array<Index, 3>;

struct SurfaceMesh {
    std::vector<Vec3> vertices;
    std::vector<Triangle> triangles;
    std::vector<Vec3> normals;
    std::vector<double> area;       // barycentric, one third of incident triangle areas
    std::vector<double> curvature;  // signed mean curvature, positive on convex surfaces

    std::size_t size() const noexcept { return vertices.size(); }
    double total_area() const;
    Vec3 centroid() const;
    /// Axis-aligned bounding box extent (max - min per axis).
    Vec3 extent() const;
    double diagonal() const { return extent().norm(); }
};

/// Validates the triangles and fills normals, areas and curvature.
SurfaceMesh compute_differentials(std::vector<Vec3> vertices, std::vector<Triangle> triangles);

/// Cotangent edge weights (cot a + cot b) / 2 for every undirected edge i < j.
struct CotanEdge {
    Index i;
    Index j;
    double w;
};
std::vector<CotanEdge> cotan_edges(const std::vector<Vec3>& vertices, const std::vector<Triangle>& triangles);

// ---------------------------------------------------------------------------
// Spatial index

/// Static 3-d tree. Neighbor order is by (distance, index), so results are
/// unique even when distances tie.
class KdTree {
public:
    explicit KdTree(const std::vector<Vec3>& points, std::size_t leaf_size = 8);

    /// k nearest points to `q`, nearest first. `exclude` removes one index
    /// (the query point itself).
    std::vector<Index> knn(const Vec3& q, std::size_t k, Index exclude = -1) const;
    /// Index of the nearest point and its distance.
    std::pair<Index, double> nearest(const Vec3& q) const;
    std::size_t size() const noexcept { return pts_.size(); }

private:
    struct Node {
        double lo[3];
        double hi[3];
        std::uint32_t begin, end;
        std::int32_t left = -1, right = -1;
    };
    std::int32_t build(std::uint32_t begin, std::uint32_t end);
    std::vector<Vec3> pts_;
    std::vector<Index> perm_;
    std::vector<Node> nodes_;
    std::size_t leaf_size_;
};

struct KnnGraph {
    std::size_t k = 16;
    std::vector<Index> directed_src, directed_dst;  // exactly k per source vertex
    std::vector<Index> src, dst;                    // symmetrized, sorted by (dst, src)
    std::vector<Vec3> offset;                       // x[dst] - x[src]
    std::vector<double> distance;
    std::vector<double> normal_cos;
    std::size_t edge_count() const noexcept { return src.size(); }
};

constexpr std::size_t kDefaultNeighbors = 16;

/// k nearest neighbors of each point (kd-tree), symmetrized by union.
KnnGraph build_knn_graph(const std::vector<Vec3>& points, const std::vector<Vec3>& normals,
                         std::size_t k = kDefaultNeighbors);
KnnGraph build_knn_graph(const SurfaceMesh& mesh, std::size_t k = kDefaultNeighbors);

// ---------------------------------------------------------------------------
// Symmetry

struct SymmetryFrame {
    Vec3 normal{0.0, 1.0, 0.0};
    double offset = 0.0;   // plane: normal . x = offset
    double epsilon = 0.0;  // midline half-width
    double delta_match = 0.0;
    double quality = 0.0;

    double signed_distance(const Vec3& p) const { return normal.dot(p) - offset; }
    Vec3 reflect(const Vec3& p) const { return p - 2.0 * signed_distance(p) * normal; }
};

enum class SymmetryPlane { Detect, Y0 };

constexpr double kSymmetryQualityMin = 0.9;

/// Fraction of vertices whose reflection has a mesh vertex within delta.
double symmetry_quality(const SurfaceMesh& mesh, const SymmetryFrame& frame, const KdTree* tree = nullptr);

/// Finds the bilateral plane. Detect evaluates the principal axes of the
/// vertex cloud and the coordinate axes as candidate normals through the
/// centroid and keeps the best-matching one. Throws AsymmetricGeometryError
/// when quality < 0.9 unless `allow_asymmetric`.
SymmetryFrame detect_symmetry(const SurfaceMesh& mesh, SymmetryPlane plane = SymmetryPlane::Detect,
                              bool allow_asymmetric = false);

// ---------------------------------------------------------------------------
// Divergence

/// Sparse operator D (N x 3N) with div = D * vec(f), f stored row-major N x 3:
/// div_i = (1/A_i) sum_j w_ij (f_i + f_j)/2 . (x_j - x_i).
SparseMatrix divergence_operator(const std::vector<Vec3>& positions, const std::vector<double>& area,
                                 const std::vector<CotanEdge>& edges);
/// Mesh version with cotangent weights.
SparseMatrix surface_divergence_operator(const SurfaceMesh& mesh);
std::vector<double> surface_divergence(const SurfaceMesh& mesh, const std::vector<Vec3>& field);
/// Same form on a symmetrized k-NN graph with w_ij = 2 (A_i/S_i + A_j/S_j),
/// S_i = sum of squared neighbor distances; exact for linear fields on a
/// locally isotropic planar neighborhood.
SparseMatrix knn_divergence_operator(const std::vector<Vec3>& positions, const std::vector<double>& area,
                                     const KnnGraph& graph);

// ---------------------------------------------------------------------------
// Generators

/// Unit icosphere, 10*4^s + 2 vertices, mirror-exact about the three
/// coordinate planes and containing the six axis points.
SurfaceMesh icosphere(int subdivisions, double radius = 1.0);
SurfaceMesh ellipsoid(double a, double b, double c, int subdivisions);

/// Rear profile of the car-like body.
enum class BodyFamily { A, B, C };
char family_tag(BodyFamily f);
BodyFamily family_from_tag(char c);

struct CarBodyParams {
    BodyFamily family = BodyFamily::A;
    double length = 4.6;
    double width = 1.9;
    double height = 1.4;
    double cabin_height = 0.45;   // fraction of half-height added over the cabin
    double cabin_center = 0.05;   // fraction of half-length, +x is rearward
    double cabin_length = 0.55;   // fraction of half-length
    double rear_taper = 0.25;     // fraction removed at the tail
    double nose_drop = 0.15;      // fraction of half-height lowered at the nose
};

CarBodyParams sample_body_params(BodyFamily family, std::mt19937_64& rng);
/// Flow is along +x: the nose sits at min x. Exactly mirror-symmetric in y.
SurfaceMesh car_body(const CarBodyParams& p, int subdivisions);

// ---------------------------------------------------------------------------
// I/O

struct RawMesh {
    std::vector<Vec3> vertices;
    std::vector<Triangle> triangles;
};

RawMesh read_obj(const std::filesystem::path& path);
std::string obj_string(const std::vector<Vec3>& vertices, const std::vector<Triangle>& triangles);

/// Per-vertex field table with header `vertex_id,<columns>`.
struct FieldTable {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;  // rows[vertex][column]
};
FieldTable read_field_csv(const std::filesystem::path& path);
std::string field_csv_string(const FieldTable& table);

}  // namespace enggraph
