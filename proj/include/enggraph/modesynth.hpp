#pragma once

// Synthetic multi-vehicle mode-shape data: parametric wireframes, analytic
// mode fields, MAC, MAC-based tracking and stratified dataset assembly.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "enggraph/biwgraph.hpp"

namespace enggraph {

struct VehicleSpec {
    std::string id = "ref";
    double wheelbase = 1.0;  // scale factors on a 4.6 x 1.6 x 1.3 m cage
    double width = 1.0;
    double height = 1.0;
    int node_count = 180;
    std::array<double, kRegionCount> stiffness{1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1};
    /// Amplitude of the within-family partner shape mixed into each mode.
    double coupling = 0.12;
    /// When set, the partner subtype is fixed per label for this vehicle.
    bool systematic_coupling = false;

    double length_m() const { return 4.6 * wheelbase; }
    double width_m() const { return 1.6 * width; }
    double height_m() const { return 1.3 * height; }
    void validate() const;
};

/// Nodes per region for a given total.
std::array<int, kRegionCount> region_allocation(int node_count);

Wireframe synth_wireframe(const VehicleSpec& spec, std::uint64_t seed);

struct ModeSynthOptions {
    double noise = 0.05;                 // Gaussian noise sigma as a fraction of the field RMS
    std::optional<double> amplitude;     // default: uniform in [0.5, 2]
    std::optional<int> sign;             // default: random
    bool coupling = true;
    bool stiffness = true;
};

/// Noise-free analytic field of a subtype (unit amplitude, positive sign, no
/// coupling or stiffness). `pick` selects the region for local subtypes.
std::vector<Vec3> closed_form_field(const VehicleSpec& spec, const Wireframe& wf, int level2, int pick = 0);

ModeSample synth_mode(const VehicleSpec& spec, std::shared_ptr<const Wireframe> wf, int level2, std::uint64_t seed,
                      const ModeSynthOptions& opt = {});

/// Frequency band [lo, hi] in Hz of a subtype.
std::pair<double, double> frequency_band(int level2);

/// seed = mix(master, vehicle id, index).
std::uint64_t derive_seed(std::uint64_t master, const std::string& vehicle, std::uint64_t index);

// ---------------------------------------------------------------------------
// MAC and tracking

double mac(const std::vector<double>& a, const std::vector<double>& b);
std::vector<double> flatten(const std::vector<Vec3>& field);

constexpr double kMacThreshold = 0.7;

struct TrackResult {
    std::vector<int> match;     // variant index -> base index, -1 if unmatched
    std::vector<double> score;  // MAC of the match (0 if unmatched)
    std::vector<std::optional<ModeLabel>> labels;
};

/// Greedy maximum-MAC one-to-one pairing; pairs below 0.7 stay unmatched.
TrackResult track_modes(const std::vector<ModeSample>& base, const std::vector<ModeSample>& variant,
                        double threshold = kMacThreshold);

// ---------------------------------------------------------------------------
// Dataset

enum class Split { Train = 0, Val = 1, Test = 2, Unlabeled = 3 };
const char* split_name(Split s);
Split split_from_name(const std::string& s);

/// Largest-remainder rounding of n * ratio.
std::array<int, 3> split_counts(int n, const std::array<double, 3>& ratios);

/// Stratified assignment: global counts follow split_counts and every class
/// deviates by at most one from its own proportional share.
std::vector<Split> stratified_split(const std::vector<int>& classes, const std::array<double, 3>& ratios,
                                   std::uint64_t seed);

struct VehiclePlan {
    VehicleSpec spec;
    bool reference = false;
    int modes = 60;       // generated modes
    int train = 9;        // labeled training budget (targets)
    int val = 4;          // labeled held-out validation (targets)
    int test = 11;        // labeled held-out test (targets)
};

struct ModeDatasetConfig {
    std::vector<VehiclePlan> vehicles;
    std::array<double, 3> ratios{0.70, 0.15, 0.15};
    std::uint64_t seed = 7;
};

/// Reference vehicle with 300 modes and three targets with 9, 2 and 5 training labels.
ModeDatasetConfig default_mode_config();

struct ModeDataset {
    ModeDatasetConfig config;
    std::map<std::string, std::shared_ptr<const Wireframe>> wireframes;
    std::vector<ModeSample> samples;
    std::vector<Split> split;  // per sample
    FeatureStats stats;

    std::size_t count(Split s) const;
};

ModeDataset build_mode_dataset(const ModeDatasetConfig& cfg);

/// Aggregated region graphs of every sample (same order as samples).
std::vector<RegionGraphSample> aggregate_dataset(const ModeDataset& ds);

/// Writes vehicles/<id>.json and manifest.json.
void write_mode_dataset(const ModeDataset& ds, const std::filesystem::path& dir);
ModeDataset read_mode_dataset(const std::filesystem::path& dir);

nlohmann::json to_json(const VehicleSpec& s);
VehicleSpec vehicle_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ModeDatasetConfig& c);
ModeDatasetConfig mode_config_from_json(const nlohmann::json& j);

/// Threshold rules on pooled scalars and regional energies.
int rule_oracle_level1(const RegionGraphSample& s);

}  // namespace enggraph
