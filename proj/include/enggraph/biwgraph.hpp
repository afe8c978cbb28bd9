#pragma once

// Body-in-white region graph: canonical 20-region skeleton, aggregation of
// wireframe displacement fields into region features, pooled scalars.

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "enggraph/geomesh.hpp"
#include "enggraph/graph.hpp"

namespace enggraph {

constexpr std::size_t kRegionCount = 20;
constexpr std::size_t kNodeFeatures = 10;
constexpr std::size_t kEdgeFeatures = 6;
constexpr std::size_t kPooledScalars = 6;
constexpr std::size_t kLevel1 = 4;
constexpr std::size_t kLevel2 = 11;

const std::array<std::string, kRegionCount>& region_names();
/// Index of a region name, or -1.
int region_index(const std::string& name);

enum class RegionGroup { Floor, Roof, Rail, Pillar, Sill, Panel };
RegionGroup region_group(int region);
const char* group_name(RegionGroup g);

enum class EdgeType { Adjacency = 0, Symmetry = 1, Longitudinal = 2, Vertical = 3 };
const char* edge_type_name(EdgeType t);

// ---------------------------------------------------------------------------
// Taxonomy

const std::array<std::string, kLevel1>& level1_names();
const std::array<std::string, kLevel2>& level2_names();
/// Level-1 family of a Level-2 subtype.
int level1_of(int level2);
int level2_index(const std::string& name);

struct ModeLabel {
    int level1 = 0;
    int level2 = 0;
};
ModeLabel label_of(int level2);

// ---------------------------------------------------------------------------

struct Wireframe {
    std::vector<Index> ids;
    std::vector<Vec3> positions;
    std::vector<std::string> regions;
    std::size_t size() const noexcept { return ids.size(); }
};

struct ModeSample {
    std::string vehicle_id;
    int mode_id = 0;
    double frequency = 0.0;
    std::shared_ptr<const Wireframe> wireframe;
    std::vector<Vec3> displacement;  // aligned with wireframe rows
    std::optional<ModeLabel> label;
};

struct SkeletonEdge {
    int a;
    int b;
    EdgeType type;
};

struct RegionalSkeleton {
    /// Wireframe rows of each region, ordered by node id.
    std::array<std::vector<std::size_t>, kRegionCount> members;
    /// Undirected edges, each unordered pair listed once.
    std::vector<SkeletonEdge> edges;
    std::size_t count(EdgeType t) const;
};

/// Fixed engineering edge table (undirected).
const std::vector<SkeletonEdge>& skeleton_edge_table();

RegionalSkeleton build_canonical_skeleton(const Wireframe& wf);

/// Region graph with raw (unstandardized) features. Edge rows are directed,
/// two per skeleton edge, in table order (a->b, then b->a).
struct RegionGraphSample {
    std::string vehicle_id;
    int mode_id = 0;
    EngineeringGraph graph;
    std::array<double, kPooledScalars> scalars{};
    std::array<double, kRegionCount> vertical_energy{};  // mean u_z^2 per region
    std::optional<ModeLabel> label;
};

struct AggregateOptions {
    bool normalize_amplitude = true;  // divide by global RMS of |u|
};

RegionGraphSample aggregate_mode(const ModeSample& sample, const RegionalSkeleton& skeleton,
                                 const AggregateOptions& opt = {});

/// [E_floor, E_roof, vertical uniformity, antisymmetry, E_rail, E_pillar].
std::array<double, kPooledScalars> pooled_scalars(const RegionGraphSample& sample);

// ---------------------------------------------------------------------------
// Standardization

/// Per-dimension mean/std from training samples. Statistics are taken over
/// each sample and its sign-flipped twin, so signed columns have zero mean.
/// One-hot edge-type columns are left as is.
struct FeatureStats {
    std::array<double, kNodeFeatures> node_mean{}, node_std{};
    std::array<double, kEdgeFeatures> edge_mean{}, edge_std{};
    std::array<double, kPooledScalars> scalar_mean{}, scalar_std{};
    std::string tag;  // content hash, carried by standardized samples and models
};

FeatureStats compute_feature_stats(const std::vector<RegionGraphSample>& train);
/// Node feature columns that flip sign with the displacement field.
bool node_feature_is_signed(std::size_t column);
/// Features of aggregate_mode(-u) computed from aggregate_mode(u).
RegionGraphSample sign_flipped(const RegionGraphSample& s);

struct StandardizedSample {
    RegionGraphSample sample;  // features standardized
    std::string stats_tag;
};
StandardizedSample standardize(const RegionGraphSample& s, const FeatureStats& stats);

nlohmann::json to_json(const FeatureStats& s);
FeatureStats feature_stats_from_json(const nlohmann::json& j);

}  // namespace enggraph
