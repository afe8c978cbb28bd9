#pragma once

// Graph-attention mode classifier and the aerodynamic field surrogate, with
// a shared attention layer and a JSON + binary checkpoint format.

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "enggraph/biwgraph.hpp"
#include "enggraph/diffcore.hpp"
#include "enggraph/graph.hpp"

namespace enggraph {

enum class RunMode { Train, Eval, McDropout };

/// How a layer combines neighbor messages.
enum class Aggregator {
    Attention,  // GAT softmax weights
    Mean,       // degree-normalized mean (GCN-style baseline)
    None        // node-wise only (MLP baseline)
};
const char* aggregator_name(Aggregator a);
Aggregator aggregator_from_name(const std::string& s);

/// Disjoint union of graphs with one self-loop per node appended after the
/// real edges. Self-loop edge features are zero.
struct GraphBatch {
    std::size_t nodes = 0;
    std::size_t graphs = 0;
    std::size_t real_edges = 0;
    std::vector<Index> src, dst;
    Tensor x;                     // nodes x node features
    Tensor r;                     // (real edges + nodes) x edge features
    std::vector<Index> graph_of;  // node -> graph
    std::vector<std::size_t> offset;  // first node of each graph, plus total
    Tensor inv_degree;            // edges x 1, 1 / in-degree of dst (self-loop included)
};

GraphBatch make_batch(const std::vector<const EngineeringGraph*>& graphs);

/// Parameter shapes of one attention layer.
struct GatShape {
    std::size_t in = 0;
    std::size_t edge_in = 0;  // 0: no edge features
    std::size_t heads = 1;
    std::size_t dim = 1;      // per head
    bool average = false;     // average heads instead of concatenating
    Aggregator aggregator = Aggregator::Attention;
    bool edge_logits = true;  // u_e . r_ij term from r; false when the caller supplies it
    std::size_t out() const { return average ? dim : heads * dim; }
};

/// e_ij = leaky(a_dst . W h_i + a_src . W h_j + u_e . r_ij) per head, softmax
/// over the in-neighbors of i, message W h_j + W_e r_ij.
class GatLayer {
public:
    GatLayer() = default;
    GatLayer(std::string name, GatShape shape);

    void init(ParamSet& params, std::mt19937_64& rng) const;

    struct Result {
        Var out;    // nodes x out()
        Var alpha;  // edges x heads (constant weights for Mean, invalid for None)
    };
    /// `r` must have one row per batch edge (self-loops included) when edge_in > 0.
    /// `edge_logit` (edges x heads) is added to the attention logits when given.
    Result forward(Tape& tape, ParamSet& params, const Var& h, const Var& r, const GraphBatch& g,
                   const Var* edge_logit = nullptr) const;

    const GatShape& shape() const { return shape_; }
    const std::string& name() const { return name_; }

private:
    std::string name_;
    GatShape shape_;
};

// ---------------------------------------------------------------------------
// Mode classifier

struct ClassifierConfig {
    std::size_t layers = 4;
    std::size_t heads = 8;
    std::size_t head_dim = 32;
    std::size_t trunk = 64;
    double dropout = 0.1;
    double hybrid_gap = 0.15;
    Aggregator aggregator = Aggregator::Attention;
    std::uint64_t seed = 1;
};

nlohmann::json to_json(const ClassifierConfig& c);
ClassifierConfig classifier_config_from_json(const nlohmann::json& j);

struct ClassifierOutput {
    Var input;     // node features as fed (gradients available when requested)
    Var edges;     // edge features as fed, self-loops included
    Var logits1;   // graphs x 4
    Var logits2;   // graphs x 11
    Var probs1;
    Var probs2;
    std::vector<Var> attention;  // per layer, edges x heads
};

struct ClassifierPrediction {
    std::array<double, kLevel1> probs1{};
    std::array<double, kLevel2> probs2{};
    int level1 = 0;
    int level2 = 0;  // argmax of probs2 within the predicted family
    bool hybrid = false;
    std::vector<Tensor> attention;
};

class ModeClassifier {
public:
    ModeClassifier(ClassifierConfig cfg, std::string stats_tag);

    /// `scalars` is graphs x 6. `rng` is required in Train and McDropout modes.
    ClassifierOutput forward(Tape& tape, const GraphBatch& batch, const Tensor& scalars, RunMode mode,
                             std::mt19937_64* rng, bool input_grad = false);

    /// Throws ContractError when the sample was standardized with other statistics.
    ClassifierPrediction classify(const StandardizedSample& s, RunMode mode = RunMode::Eval,
                                  std::mt19937_64* rng = nullptr);

    /// Sets both output heads to zero.
    void zero_heads();

    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }
    const ClassifierConfig& config() const { return cfg_; }
    const std::string& stats_tag() const { return stats_tag_; }
    std::size_t parameter_count() const { return params_.scalar_count(); }
    const std::vector<GatLayer>& layers() const { return layers_; }

private:
    ClassifierConfig cfg_;
    std::string stats_tag_;
    ParamSet params_;
    std::vector<GatLayer> layers_;
};

/// Decoded prediction from probability rows.
ClassifierPrediction decode_prediction(const double* p1, const double* p2, double hybrid_gap);

// ---------------------------------------------------------------------------
// Aerodynamic surrogate

struct AeroNetConfig {
    std::size_t node_in = 9;
    std::size_t edge_in = 5;
    std::size_t hidden = 64;
    std::size_t layers = 6;
    std::size_t heads = 4;
    std::size_t head_dim = 0;       // 0: hidden / heads
    std::size_t ffn = 0;            // feed-forward width per block, 0: none
    std::size_t edge_encoder_layers = 1;
    std::size_t outputs = 4;
    double dropout = 0.0;
    Aggregator aggregator = Aggregator::Attention;
    std::uint64_t seed = 1;

    std::size_t dim() const { return head_dim ? head_dim : hidden / heads; }
};

/// Full-size network: 128 hidden, 6 layers, 4 full-width heads, 4x feed-forward.
AeroNetConfig aero_full_config();

nlohmann::json to_json(const AeroNetConfig& c);
AeroNetConfig aero_net_config_from_json(const nlohmann::json& j);

struct AeroOutput {
    Var input;
    Var edges;
    Var y;  // nodes x 4, normalized [p, tau_x, tau_y, tau_z]
    std::vector<Var> attention;
};

class AeroGraphNetLite {
public:
    explicit AeroGraphNetLite(AeroNetConfig cfg);

    AeroOutput forward(Tape& tape, const GraphBatch& batch, RunMode mode, std::mt19937_64* rng,
                       bool input_grad = false);
    /// Single pass; Eval mode is bit-deterministic.
    Tensor predict(const GraphBatch& batch, RunMode mode = RunMode::Eval, std::mt19937_64* rng = nullptr);

    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }
    const AeroNetConfig& config() const { return cfg_; }
    std::size_t parameter_count() const { return params_.scalar_count(); }

private:
    AeroNetConfig cfg_;
    ParamSet params_;
    std::vector<GatLayer> layers_;
};

// ---------------------------------------------------------------------------
// Checkpoints

/// Writes manifest.json (architecture + offsets table) and params.bin
/// (little-endian float64, parameters in registration order).
void write_checkpoint(const std::filesystem::path& dir, const nlohmann::json& architecture, const ParamSet& params);
/// Architecture section of a checkpoint manifest.
nlohmann::json read_checkpoint_architecture(const std::filesystem::path& dir);
/// Loads values into `params`; names, order and shapes must match.
void read_checkpoint_params(const std::filesystem::path& dir, ParamSet& params);

/// `extra` is stored verbatim under architecture.extra in the manifest.
void save_classifier(const ModeClassifier& m, const std::filesystem::path& dir, const nlohmann::json& extra);
ModeClassifier load_classifier(const std::filesystem::path& dir);
void save_aero_net(const AeroGraphNetLite& m, const std::filesystem::path& dir, const nlohmann::json& extra);
AeroGraphNetLite load_aero_net(const std::filesystem::path& dir);

}  // namespace enggraph
