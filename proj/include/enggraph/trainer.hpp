#pragma once

// Losses, training loops, metrics and baselines for the mode classifier and
// the aerodynamic surrogate.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "enggraph/aerograph.hpp"
#include "enggraph/biwgraph.hpp"
#include "enggraph/diffcore.hpp"
#include "enggraph/models.hpp"
#include "enggraph/modesynth.hpp"

namespace enggraph {

struct LossConfig {
    std::array<double, kLevel1> class_weights{1.0, 1.0, 1.0, 1.0};
    double gamma = 2.0;
    double alpha = 1.0;
    double beta = 0.5;  // L = beta * L1 + (1 - beta) * L2
    double lambda_wss = 1.0;
    double lambda_bern = 0.1;
    double lambda_mass = 0.01;
    double lambda_tan = 0.1;
    double bern_c = 3.0;  // lower bound p >= -c q_inf

    /// Throws ConfigError on negative weights or gamma.
    void validate() const;
};

/// w_c = n / (K n_c) over the labels given; absent classes get weight 0.
std::array<double, kLevel1> inverse_frequency_weights(const std::vector<int>& level1);

/// beta * w[y1] (-log p1[y1]) + (1 - beta) * alpha (1 - p2[y2])^gamma (-log p2[y2]),
/// averaged over the batch; probabilities are clamped at 1e-12 before the log.
Var classification_loss(const Var& probs1, const Var& probs2, const std::vector<int>& y1,
                        const std::vector<int>& y2, const LossConfig& cfg);

/// Per-sample inputs of the physics loss. Pressure terms are divided by
/// p_ref^2 and shear terms by tau_ref^2, and the divergence is multiplied by
/// length_ref; unit references give the raw formulas.
struct PhysicsContext {
    Tensor normal;                  // N x 3, unit normals
    Tensor area;                    // N x 1, area weights
    SparseMatrix divergence;        // N x 3N
    double q_inf = 1.0;
    double p_ref = 1.0;
    double tau_ref = 1.0;
    double length_ref = 1.0;  // mean k-NN edge length in the operator's coordinates
};

PhysicsContext physics_context(const AeroGraphSample& s, const AeroGraphContext& ctx, double c_ref);

struct PhysicsLoss {
    Var total, data, tangency, bernoulli, mass;
};

/// `pred` and `target` are N x 4 [p, tau_x, tau_y, tau_z] in physical units.
PhysicsLoss physics_loss(const Var& pred, const Tensor& target, const PhysicsContext& ctx, const LossConfig& cfg);

// ---------------------------------------------------------------------------
// Metrics

/// 1 - SS_res / SS_tot; throws DomainError when the target is constant.
double r2_score(const std::vector<double>& y, const std::vector<double>& yhat);
double combined_score(double level1_accuracy, double level2_accuracy);

struct ClassGroupMetrics {
    std::size_t count = 0;
    double level1_accuracy = 0.0;
    double level2_accuracy = 0.0;
    double combined = 0.0;
};

struct ClassMetrics {
    std::size_t count = 0;
    double level1_accuracy = 0.0;
    double level2_accuracy = 0.0;
    double combined = 0.0;
    double consistency = 0.0;  // predicted Level-2 lies in the predicted Level-1 family
    double hybrid_rate = 0.0;
    double mean_loss = 0.0;
    std::array<std::array<long, kLevel2>, kLevel2> confusion{};  // [true][predicted]
    std::map<std::string, ClassGroupMetrics> per_vehicle;
};

struct FieldGroupMetrics {
    std::size_t count = 0;
    double r2_pressure = 0.0;
    double r2_wss = 0.0;
};

struct FieldMetrics {
    std::size_t count = 0;
    std::size_t nodes = 0;
    double r2_pressure = 0.0;  // pooled over nodes and samples, Pa
    double r2_wss = 0.0;       // pooled over nodes, samples and components, Pa
    double r2_pressure_per_sample = 0.0;
    double r2_wss_per_sample = 0.0;
    double r2_pressure_normalized = 0.0;  // p / q_inf
    double r2_wss_normalized = 0.0;       // tau / tau_ref
    double mae_pressure = 0.0;            // Pa
    double mae_wss = 0.0;                 // Pa, per component
    std::map<std::string, FieldGroupMetrics> per_family;

    double mean_r2() const { return 0.5 * (r2_pressure + r2_wss); }
};

/// Samples must carry labels and have been standardized with the model's statistics.
ClassMetrics evaluate_classifier(ModeClassifier& model, const std::vector<StandardizedSample>& samples,
                                 const LossConfig& loss = {});

/// Physical-unit predictions (N x 4) of one sample.
Tensor predict_aero(AeroGraphNetLite& model, const AeroGraphSample& s, double c_ref);

FieldMetrics evaluate_aero(AeroGraphNetLite& model, const AeroDataset& ds, const std::vector<std::size_t>& indices,
                           int workers = 1);
/// Same, from physical-unit predictions aligned with `indices`.
FieldMetrics field_metrics(const AeroDataset& ds, const std::vector<std::size_t>& indices,
                           const std::vector<Tensor>& predictions);

std::vector<std::size_t> split_indices(const std::vector<Split>& split, Split which);

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
    int epochs = 200;
    int patience = 20;
    std::size_t batch = 16;
    double lr = 1e-3;
    bool cosine = false;            // cosine decay from lr to lr * lr_floor over `epochs`
    double lr_floor = 0.05;
    std::size_t steps_per_epoch = 0;  // 0: one pass over the training set
    std::size_t val_limit = 0;        // 0: whole validation split
    bool augment = true;              // classifier: random global sign flip
    std::uint64_t seed = 1;
    int workers = 1;
};

struct CurvePoint {
    int epoch = 0;
    long steps = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_metric = 0.0;
    std::map<std::string, double> terms;  // mean training loss terms
};

struct TrainResult {
    std::vector<CurvePoint> curve;
    int best_epoch = -1;
    double best_metric = 0.0;
    bool lr_halved = false;
    bool stopped_early = false;
};

/// Trains in place and leaves the best validation parameters in `model`.
/// Samples must be labeled and standardized with the model's statistics;
/// `flipped` (optional, same order as `train`) holds standardized sign-flipped twins.
TrainResult train_classifier(ModeClassifier& model, const std::vector<StandardizedSample>& train,
                             const std::vector<StandardizedSample>& flipped,
                             const std::vector<StandardizedSample>& val, const LossConfig& loss,
                             const TrainConfig& cfg);

TrainResult train_aero(AeroGraphNetLite& model, const AeroDataset& ds, const LossConfig& loss, const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Baselines and experiments

enum class Baseline { Full, Mlp, MeanPoolGcn, NoPhysics, SingleVehicle, MeshGraphNet };
const char* baseline_name(Baseline b);
Baseline baseline_from_name(const std::string& s);

struct ModeExperiment {
    ModeClassifier model;
    FeatureStats stats;
    TrainResult train;
    ClassMetrics test;         // all labeled test samples
    ClassMetrics target_test;  // test samples of non-reference vehicles
};

/// Full, Mlp, MeanPoolGcn or SingleVehicle. Statistics come from the
/// training samples actually used.
ModeExperiment run_mode_experiment(const ModeDataset& ds, Baseline b, ClassifierConfig model_cfg, LossConfig loss,
                                   const TrainConfig& cfg);

/// Standardized labeled samples of one split (all vehicles unless `vehicles` is given).
std::vector<StandardizedSample> standardized_split(const ModeDataset& ds, const std::vector<RegionGraphSample>& graphs,
                                                   Split which, const FeatureStats& stats,
                                                   const std::vector<std::string>* vehicles = nullptr);

struct AeroExperiment {
    AeroGraphNetLite model;
    TrainResult train;
    FieldMetrics test;
};

/// Full, Mlp, MeanPoolGcn or NoPhysics.
AeroExperiment run_aero_experiment(const AeroDataset& ds, Baseline b, AeroNetConfig model_cfg, LossConfig loss,
                                   const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Serialization

nlohmann::json to_json(const LossConfig& c);
LossConfig loss_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig defaults = {});
nlohmann::json to_json(const ClassMetrics& m);
nlohmann::json to_json(const FieldMetrics& m);
nlohmann::json to_json(const TrainResult& r);
/// Header row of Level-2 names, then one row per true class.
std::string confusion_csv(const ClassMetrics& m);

}  // namespace enggraph
