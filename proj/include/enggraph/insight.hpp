#pragma once

// Gradient x input attribution, MC-dropout uncertainty and uncertainty-based
// ranking of candidate samples for both models.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "enggraph/aerograph.hpp"
#include "enggraph/biwgraph.hpp"
#include "enggraph/models.hpp"

namespace enggraph {

struct AttributionMap {
    std::string target;
    std::vector<double> node;              // >= 0, sums to 1
    std::vector<std::string> node_label;   // region name or source vertex id
    std::vector<Index> edge_src, edge_dst;  // real edges only
    std::vector<double> edge;               // mean attention x |d target / d r_e|, sums to 1 unless all zero
    bool uniform_fallback = false;          // gradient x input vanished everywhere
};

/// `target` is a Level-2 name, "level1:<name>" or "predicted". Unknown names
/// throw ContractError, as does a sample standardized with other statistics.
AttributionMap attribute(ModeClassifier& model, const StandardizedSample& s, const std::string& target);

/// `field` is pressure, wss_x, wss_y, wss_z or wss (sum of the three). The
/// target is the output at `node`, or the sum over all nodes when absent.
AttributionMap attribute(AeroGraphNetLite& model, const AeroGraphSample& s, const std::string& field,
                         std::optional<std::size_t> node = std::nullopt);

/// -sum p ln p with 0 ln 0 = 0, clamped to [0, ln n].
double predictive_entropy(std::span<const double> p);

struct McConfig {
    int passes = 30;
    std::uint64_t seed = 1;
    int workers = 1;
    std::size_t top_k = 0;  // 0: whole pool
};

struct ClassifierUncertainty {
    int passes = 0;
    std::array<double, kLevel2> mean_probs{};
    double entropy = 0.0;  // of mean Level-2 probabilities
};

/// Throws ParameterError when passes < 2.
ClassifierUncertainty mc_uncertainty(ModeClassifier& model, const StandardizedSample& s, int passes,
                                     std::uint64_t seed);

struct FieldUncertainty {
    int passes = 0;
    std::vector<double> variance;  // per node, Pa^2, of the pressure
    double score = 0.0;            // area-weighted mean variance
};

FieldUncertainty mc_uncertainty(AeroGraphNetLite& model, const AeroGraphSample& s, int passes, std::uint64_t seed);

struct RankedCandidate {
    std::string id;
    std::size_t index = 0;  // position in the pool
    double score = 0.0;
};

/// Descending by score, ties by id; keeps the first top_k (0: all).
std::vector<RankedCandidate> rank_candidates(std::vector<RankedCandidate> scored, std::size_t top_k);

/// Entropy ranking. `ids` names the pool entries.
std::vector<RankedCandidate> rank_data_candidates(ModeClassifier& model, const std::vector<StandardizedSample>& pool,
                                                  const std::vector<std::string>& ids, const McConfig& cfg);
/// Area-weighted pressure variance ranking; ids are the sample ids.
std::vector<RankedCandidate> rank_data_candidates(AeroGraphNetLite& model, const std::vector<AeroGraphSample>& pool,
                                                  const McConfig& cfg);

nlohmann::json to_json(const AttributionMap& a);
/// node,label,score rows.
std::string attribution_csv(const AttributionMap& a);
nlohmann::json to_json(const std::vector<RankedCandidate>& ranking, const McConfig& cfg);

}  // namespace enggraph
