#pragma once

// Aerodynamic data pipeline: analytic surface-field labels on generated
// bodies, symmetric and baseline downsampling, surface-graph features.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "enggraph/geomesh.hpp"
#include "enggraph/graph.hpp"
#include "enggraph/modesynth.hpp"

namespace enggraph {

constexpr std::size_t kAeroNodeFeatures = 9;
constexpr std::size_t kAeroEdgeFeatures = 5;
constexpr std::size_t kAeroOutputs = 4;  // pressure + 3 WSS components
constexpr double kAirDensity = 1.225;

struct AeroSample {
    std::string id;
    BodyFamily family = BodyFamily::A;
    CarBodyParams params;
    SurfaceMesh mesh;
    double u_inf = 30.0;
    double rho = kAirDensity;
    std::vector<double> pressure;  // Pa, gauge
    std::vector<Vec3> wss;         // Pa

    double q_inf() const { return 0.5 * rho * u_inf * u_inf; }
};

struct AeroLabelOptions {
    bool family_modifiers = true;
    double perturbation = 0.05;  // amplitude of the smooth Cp and WSS perturbations
    double skin_friction = 0.004;
};

/// Pressure and WSS labels for `s.mesh` (freestream along +x).
void compute_aero_labels(AeroSample& s, std::uint64_t seed, const AeroLabelOptions& opt = {});

AeroSample make_aero_sample(const std::string& id, const CarBodyParams& params, int subdivisions, double u_inf,
                            double rho, std::uint64_t seed, const AeroLabelOptions& opt = {});
/// Sphere without family modifiers or perturbations.
AeroSample make_sphere_sample(double radius, int subdivisions, double u_inf, double rho = kAirDensity);

// ---------------------------------------------------------------------------
// Downsampling

enum class DownsampleMethod { Symmetric, Random, Curvature, Fps };
const char* method_name(DownsampleMethod m);
DownsampleMethod method_from_name(const std::string& s);

struct DownsampleResult {
    std::vector<Index> ids;
    std::vector<std::pair<Index, Index>> mirror_pairs;  // (right, left)
    std::vector<Index> midline;
    double score = 0.0;
    DownsampleMethod method = DownsampleMethod::Symmetric;
};

/// Greedy farthest-point sampling over `candidates`. The first pick is the
/// candidate farthest from the candidates' centroid; ties go to the lower index.
std::vector<Index> farthest_point_sampling(const std::vector<Vec3>& points, const std::vector<Index>& candidates,
                                           std::size_t count);

/// Fraction of selected off-midline vertices whose reflection lies within
/// delta_match of another selected vertex.
double correspondence_score(const SurfaceMesh& mesh, const SymmetryFrame& frame, const std::vector<Index>& ids);

DownsampleResult downsample_symmetric(const SurfaceMesh& mesh, const SymmetryFrame& frame, std::size_t n);
DownsampleResult downsample_random(const SurfaceMesh& mesh, const SymmetryFrame& frame, std::size_t n,
                                   std::uint64_t seed);
/// Top |H| first, skipping candidates within 0.5 sqrt(area / n) of a kept vertex.
DownsampleResult downsample_curvature(const SurfaceMesh& mesh, const SymmetryFrame& frame, std::size_t n);
DownsampleResult downsample(const SurfaceMesh& mesh, const SymmetryFrame& frame, DownsampleMethod method,
                            std::size_t n, std::uint64_t seed = 0);
double curvature_min_distance(const SurfaceMesh& mesh, std::size_t n);

// ---------------------------------------------------------------------------
// Surface graph

/// Pressure is scaled by q_inf and WSS by tau_ref = c_ref * q_inf.
struct AeroScales {
    double q_inf = 1.0;
    double tau_ref = 1.0;
    double normalize_p(double p) const { return p / q_inf; }
    double denormalize_p(double p) const { return p * q_inf; }
    double normalize_tau(double t) const { return t / tau_ref; }
    double denormalize_tau(double t) const { return t * tau_ref; }
};

/// Compact per-sample record; the k-NN graph is rebuilt on demand.
struct AeroGraphSample {
    std::string id;
    BodyFamily family = BodyFamily::A;
    double u_inf = 0.0, rho = kAirDensity;
    std::size_t k = kDefaultNeighbors;
    double length = 1.0;           // reference length: twice the max vertex distance from the centroid
    double correspondence = 0.0;
    std::vector<Index> source_ids;  // vertex ids on the full mesh
    std::vector<Vec3> position;     // centred at the mesh centroid, divided by length
    std::vector<Vec3> normal;
    std::vector<double> area;       // divided by the mean selected area
    Tensor x;                       // N x 9 node features
    std::vector<double> pressure;   // Pa
    std::vector<Vec3> wss;          // Pa

    std::size_t size() const noexcept { return position.size(); }
    double q_inf() const { return 0.5 * rho * u_inf * u_inf; }
};

AeroGraphSample assemble_aero_graph(const AeroSample& sample, const DownsampleResult& ds,
                                    std::size_t k = kDefaultNeighbors);

/// Graph topology and operators built from an AeroGraphSample.
struct AeroGraphContext {
    EngineeringGraph graph;  // x: 9 node features, r: 5 edge features
    KnnGraph knn;
    SparseMatrix divergence;  // k-NN divergence on normalized positions
};
AeroGraphContext build_aero_context(const AeroGraphSample& s);

/// N x 4 normalized targets [p / q, tau / tau_ref].
Tensor aero_targets(const AeroGraphSample& s, double c_ref);

// ---------------------------------------------------------------------------
// Dataset

struct AeroDatasetConfig {
    int per_family = 300;
    double u_min = 20.0, u_max = 40.0;
    double rho = kAirDensity;
    int subdivisions = 5;
    std::size_t nodes = 2000;
    std::size_t k = kDefaultNeighbors;
    DownsampleMethod method = DownsampleMethod::Symmetric;
    std::array<double, 3> ratios{0.70, 0.15, 0.15};
    double perturbation = 0.05;
    std::uint64_t seed = 11;
};

struct AeroDataset {
    AeroDatasetConfig config;
    std::vector<AeroGraphSample> samples;
    std::vector<Split> split;
    double c_ref = 1.0;  // WSS reference coefficient from the training split

    std::size_t count(Split s) const;
    AeroScales scales(std::size_t i) const { return {samples[i].q_inf(), c_ref * samples[i].q_inf()}; }
};

/// Parameters and seed of sample `index` (family = index mod 3).
AeroSample synth_aero_sample(const AeroDatasetConfig& cfg, int index);
AeroDataset build_aero_dataset(const AeroDatasetConfig& cfg, int workers = 1);

nlohmann::json to_json(const AeroDatasetConfig& c);
AeroDatasetConfig aero_config_from_json(const nlohmann::json& j);

/// OBJ mesh, fields CSV (vertex_id,p,tau_x,tau_y,tau_z) and JSON metadata.
void write_aero_sample(const AeroSample& s, const std::filesystem::path& dir);
AeroSample read_aero_sample(const std::filesystem::path& dir, const std::string& id);

void write_aero_dataset(const AeroDataset& ds, const std::filesystem::path& dir);
AeroDataset read_aero_dataset(const std::filesystem::path& dir);

}  // namespace enggraph
