#include "enggraph/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "enggraph/error.hpp"
#include "enggraph/io.hpp"
#include "enggraph/parallel.hpp"

namespace enggraph {

namespace {

using json = nlohmann::json;

constexpr double kProbFloor = 1e-12;
constexpr double kPi = 3.14159265358979323846;

Var pick(const Var& probs, const std::vector<int>& y, std::size_t classes) {
    const std::size_t B = probs.rows();
    Tensor onehot({B, classes});
    for (std::size_t b = 0; b < B; ++b) onehot.at(b, static_cast<std::size_t>(y[b])) = 1.0;
    return ops::row_sum(ops::mul(probs, probs.tape()->constant(std::move(onehot))));
}

double cosine_lr(const TrainConfig& cfg, double base, long step, long total) {
    if (!cfg.cosine || total <= 1) return base;
    const double t = std::min(1.0, static_cast<double>(step) / static_cast<double>(total - 1));
    const double lo = base * cfg.lr_floor;
    return lo + (base - lo) * 0.5 * (1.0 + std::cos(kPi * t));
}

bool finite(double v) { return std::isfinite(v); }

// Column-mean R^2 pooled over the given columns.
struct R2Acc {
    std::vector<double> y, yhat;
    std::size_t cols = 1;

    double r2() const {
        const std::size_t n = y.size() / cols;
        double res = 0.0, tot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            double mean = 0.0;
            for (std::size_t i = 0; i < n; ++i) mean += y[i * cols + c];
            mean /= static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) {
                const double d = y[i * cols + c] - yhat[i * cols + c];
                const double e = y[i * cols + c] - mean;
                res += d * d;
                tot += e * e;
            }
        }
        if (tot == 0.0) throw DomainError("R^2 of a constant target");
        return 1.0 - res / tot;
    }
};

std::vector<int> labels1(const std::vector<StandardizedSample>& s) {
    std::vector<int> y;
    for (const auto& x : s) y.push_back(x.sample.label->level1);
    return y;
}

void require_labeled(const std::vector<StandardizedSample>& s, const std::string& tag, const char* what) {
    for (const auto& x : s) {
        if (!x.sample.label) throw ContractError(std::string(what) + " sample without a label");
        if (x.stats_tag != tag) throw ContractError(std::string(what) + " sample standardized with other statistics");
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Losses

void LossConfig::validate() const {
    for (double w : class_weights)
        if (!(w >= 0.0)) throw ConfigError("class weights must be >= 0");
    if (!(gamma >= 0.0)) throw ConfigError("gamma must be >= 0");
    if (!(alpha >= 0.0)) throw ConfigError("alpha must be >= 0");
    if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("beta must be in [0, 1]");
    for (double v : {lambda_wss, lambda_bern, lambda_mass, lambda_tan, bern_c})
        if (!(v >= 0.0)) throw ConfigError("loss weights must be >= 0");
}

std::array<double, kLevel1> inverse_frequency_weights(const std::vector<int>& level1) {
    std::array<double, kLevel1> count{};
    for (int c : level1) {
        if (c < 0 || c >= static_cast<int>(kLevel1)) throw ContractError("Level-1 label out of range");
        count[c] += 1.0;
    }
    std::array<double, kLevel1> w{};
    const double n = static_cast<double>(level1.size());
    for (std::size_t c = 0; c < kLevel1; ++c) w[c] = count[c] > 0 ? n / (static_cast<double>(kLevel1) * count[c]) : 0.0;
    return w;
}

Var classification_loss(const Var& probs1, const Var& probs2, const std::vector<int>& y1, const std::vector<int>& y2,
                        const LossConfig& cfg) {
    const std::size_t B = probs1.rows();
    if (probs1.cols() != kLevel1 || probs2.cols() != kLevel2 || probs2.rows() != B)
        throw DimensionError("classification loss expects B x 4 and B x 11 probabilities");
    if (y1.size() != B || y2.size() != B) throw DimensionError("label count differs from batch size");
    for (std::size_t b = 0; b < B; ++b) {
        if (y1[b] < 0 || y1[b] >= static_cast<int>(kLevel1) || y2[b] < 0 || y2[b] >= static_cast<int>(kLevel2))
            throw ContractError("label out of range");
    }
    Tape& tape = *probs1.tape();
    Tensor w({B, 1});
    for (std::size_t b = 0; b < B; ++b) w[b] = cfg.class_weights[y1[b]];
    Var p1 = pick(probs1, y1, kLevel1);
    Var p2 = pick(probs2, y2, kLevel2);
    Var ce1 = ops::mul(ops::scale(ops::log(ops::clamp_min(p1, kProbFloor)), -1.0), tape.constant(std::move(w)));
    Var ce2 = ops::scale(ops::log(ops::clamp_min(p2, kProbFloor)), -1.0);
    Var focal = ce2;
    if (cfg.gamma > 0.0) {
        Var q = ops::clamp_min(ops::add_scalar(ops::scale(p2, -1.0), 1.0), 0.0);
        focal = ops::mul(ops::pow(q, cfg.gamma), ce2);
    }
    Var per = ops::add(ops::scale(ce1, cfg.beta), ops::scale(focal, (1.0 - cfg.beta) * cfg.alpha));
    return ops::reduce_mean(per);
}

PhysicsContext physics_context(const AeroGraphSample& s, const AeroGraphContext& ctx, double c_ref) {
    PhysicsContext p;
    const std::size_t N = s.size();
    p.normal = Tensor({N, 3});
    p.area = Tensor({N, 1});
    for (std::size_t i = 0; i < N; ++i) {
        for (int c = 0; c < 3; ++c) p.normal.at(i, c) = s.normal[i][c];
        p.area[i] = s.area[i];
    }
    p.divergence = ctx.divergence;
    p.q_inf = s.q_inf();
    p.p_ref = s.q_inf();
    p.tau_ref = c_ref * s.q_inf();
    double len = 0.0;
    for (double d : ctx.knn.distance) len += d;
    if (!ctx.knn.distance.empty()) p.length_ref = len / static_cast<double>(ctx.knn.distance.size());
    return p;
}

PhysicsLoss physics_loss(const Var& pred, const Tensor& target, const PhysicsContext& ctx, const LossConfig& cfg) {
    const std::size_t N = pred.rows();
    if (pred.cols() != kAeroOutputs || target.rows() != N || target.cols() != kAeroOutputs)
        throw DimensionError("physics loss expects N x 4 predictions and targets");
    if (ctx.normal.rows() != N || ctx.area.rows() != N) throw DimensionError("physics context size mismatch");
    if (static_cast<std::size_t>(ctx.divergence.rows()) != N || static_cast<std::size_t>(ctx.divergence.cols()) != 3 * N)
        throw DimensionError("divergence operator must be N x 3N");
    Tape& tape = *pred.tape();
    const double ip2 = 1.0 / (ctx.p_ref * ctx.p_ref), it2 = 1.0 / (ctx.tau_ref * ctx.tau_ref);
    Var p = ops::slice_cols(pred, 0, 1);
    Var tau = ops::slice_cols(pred, 1, 4);
    Var d = ops::sub(pred, tape.constant(target));
    Var dp = ops::slice_cols(d, 0, 1), dt = ops::slice_cols(d, 1, 4);

    PhysicsLoss out;
    Var mse_p = ops::scale(ops::reduce_mean(ops::mul(dp, dp)), ip2);
    Var mse_t = ops::scale(ops::reduce_mean(ops::mul(dt, dt)), it2);
    out.data = ops::add(mse_p, ops::scale(mse_t, cfg.lambda_wss));

    Var n = tape.constant(ctx.normal);
    Var tn = ops::row_sum(ops::mul(tau, n));
    out.tangency = ops::scale(ops::reduce_mean(ops::mul(tn, tn)), it2);

    Var hi = ops::relu(ops::add_scalar(p, -ctx.q_inf));
    Var lo = ops::relu(ops::add_scalar(ops::scale(p, -1.0), -cfg.bern_c * ctx.q_inf));
    out.bernoulli = ops::scale(ops::reduce_mean(ops::add(ops::mul(hi, hi), ops::mul(lo, lo))), ip2);

    Var tangential = ops::sub(tau, ops::mul(n, tn));
    Var div = ops::spmm(ctx.divergence, ops::reshape(tangential, {3 * N, 1}));
    double total_area = 0.0;
    for (double a : ctx.area.values()) total_area += a;
    if (!(total_area > 0.0)) throw DomainError("physics loss needs positive total area");
    Tensor w = ctx.area;
    for (auto& v : w.storage()) v /= total_area;
    const double l2 = ctx.length_ref * ctx.length_ref;
    out.mass = ops::scale(ops::reduce_sum(ops::mul(ops::mul(div, div), tape.constant(std::move(w)))), it2 * l2);

    out.total = ops::add(ops::add(out.data, ops::scale(out.bernoulli, cfg.lambda_bern)),
                         ops::add(ops::scale(out.mass, cfg.lambda_mass), ops::scale(out.tangency, cfg.lambda_tan)));
    return out;
}

// ---------------------------------------------------------------------------
// Metrics

double r2_score(const std::vector<double>& y, const std::vector<double>& yhat) {
    if (y.size() != yhat.size()) throw DimensionError("r2: length mismatch");
    if (y.empty()) throw ContractError("r2 of an empty set");
    R2Acc acc;
    acc.y = y;
    acc.yhat = yhat;
    return acc.r2();
}

double combined_score(double level1_accuracy, double level2_accuracy) {
    return 0.4 * level1_accuracy + 0.6 * level2_accuracy;
}

ClassMetrics evaluate_classifier(ModeClassifier& model, const std::vector<StandardizedSample>& samples,
                                 const LossConfig& loss) {
    if (samples.empty()) throw ContractError("evaluation split is empty");
    require_labeled(samples, model.stats_tag(), "evaluation");
    ClassMetrics m;
    m.count = samples.size();
    std::map<std::string, std::array<double, 3>> groups;  // count, l1 hits, l2 hits
    double l1 = 0, l2 = 0, cons = 0, hyb = 0, loss_sum = 0;
    constexpr std::size_t kChunk = 64;
    for (std::size_t s0 = 0; s0 < samples.size(); s0 += kChunk) {
        const std::size_t s1 = std::min(samples.size(), s0 + kChunk);
        std::vector<const EngineeringGraph*> gs;
        Tensor sc({s1 - s0, kPooledScalars});
        std::vector<int> y1, y2;
        for (std::size_t i = s0; i < s1; ++i) {
            gs.push_back(&samples[i].sample.graph);
            for (std::size_t k = 0; k < kPooledScalars; ++k) sc.at(i - s0, k) = samples[i].sample.scalars[k];
            y1.push_back(samples[i].sample.label->level1);
            y2.push_back(samples[i].sample.label->level2);
        }
        Tape tape;
        auto out = model.forward(tape, make_batch(gs), sc, RunMode::Eval, nullptr);
        loss_sum += classification_loss(out.probs1, out.probs2, y1, y2, loss).value()[0] *
                    static_cast<double>(s1 - s0);
        for (std::size_t i = s0; i < s1; ++i) {
            const std::size_t r = i - s0;
            auto p = decode_prediction(out.probs1.value().data() + r * kLevel1, out.probs2.value().data() + r * kLevel2,
                                       model.config().hybrid_gap);
            const bool h1 = p.level1 == y1[r], h2 = p.level2 == y2[r];
            l1 += h1;
            l2 += h2;
            cons += level1_of(p.level2) == p.level1;
            hyb += p.hybrid;
            m.confusion[y2[r]][p.level2] += 1;
            auto& g = groups[samples[i].sample.vehicle_id];
            g[0] += 1;
            g[1] += h1;
            g[2] += h2;
        }
    }
    const double n = static_cast<double>(m.count);
    m.level1_accuracy = l1 / n;
    m.level2_accuracy = l2 / n;
    m.combined = combined_score(m.level1_accuracy, m.level2_accuracy);
    m.consistency = cons / n;
    m.hybrid_rate = hyb / n;
    m.mean_loss = loss_sum / n;
    for (const auto& [v, g] : groups) {
        ClassGroupMetrics gm;
        gm.count = static_cast<std::size_t>(g[0]);
        gm.level1_accuracy = g[1] / g[0];
        gm.level2_accuracy = g[2] / g[0];
        gm.combined = combined_score(gm.level1_accuracy, gm.level2_accuracy);
        m.per_vehicle[v] = gm;
    }
    return m;
}

Tensor predict_aero(AeroGraphNetLite& model, const AeroGraphSample& s, double c_ref) {
    const AeroGraphContext ctx = build_aero_context(s);
    Tensor y = model.predict(make_batch({&ctx.graph}));
    const AeroScales sc{s.q_inf(), c_ref * s.q_inf()};
    for (std::size_t i = 0; i < y.rows(); ++i) {
        y.at(i, 0) = sc.denormalize_p(y.at(i, 0));
        for (std::size_t c = 1; c < kAeroOutputs; ++c) y.at(i, c) = sc.denormalize_tau(y.at(i, c));
    }
    return y;
}

std::vector<std::size_t> split_indices(const std::vector<Split>& split, Split which) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < split.size(); ++i)
        if (split[i] == which) out.push_back(i);
    return out;
}

FieldMetrics field_metrics(const AeroDataset& ds, const std::vector<std::size_t>& indices,
                           const std::vector<Tensor>& predictions) {
    if (indices.empty()) throw ContractError("evaluation split is empty");
    if (predictions.size() != indices.size()) throw DimensionError("one prediction per sample required");
    FieldMetrics m;
    m.count = indices.size();
    R2Acc p, t, pn, tn;
    t.cols = tn.cols = 3;
    std::map<std::string, std::pair<R2Acc, R2Acc>> fam;
    double abs_p = 0.0, abs_t = 0.0, r2p = 0.0, r2t = 0.0;
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const auto& s = ds.samples[indices[k]];
        const Tensor& y = predictions[k];
        if (y.rows() != s.size() || y.cols() != kAeroOutputs) throw DimensionError("prediction shape mismatch");
        const AeroScales sc = ds.scales(indices[k]);
        R2Acc sp, st;
        st.cols = 3;
        auto& [fp, ft] = fam[std::string(1, family_tag(s.family))];
        ft.cols = 3;
        for (std::size_t i = 0; i < s.size(); ++i) {
            for (R2Acc* a : {&p, &sp, &fp}) {
                a->y.push_back(s.pressure[i]);
                a->yhat.push_back(y.at(i, 0));
            }
            pn.y.push_back(sc.normalize_p(s.pressure[i]));
            pn.yhat.push_back(sc.normalize_p(y.at(i, 0)));
            abs_p += std::abs(s.pressure[i] - y.at(i, 0));
            for (int c = 0; c < 3; ++c) {
                for (R2Acc* a : {&t, &st, &ft}) {
                    a->y.push_back(s.wss[i][c]);
                    a->yhat.push_back(y.at(i, 1 + c));
                }
                tn.y.push_back(sc.normalize_tau(s.wss[i][c]));
                tn.yhat.push_back(sc.normalize_tau(y.at(i, 1 + c)));
                abs_t += std::abs(s.wss[i][c] - y.at(i, 1 + c));
            }
        }
        m.nodes += s.size();
        r2p += sp.r2();
        r2t += st.r2();
    }
    m.r2_pressure = p.r2();
    m.r2_wss = t.r2();
    m.r2_pressure_normalized = pn.r2();
    m.r2_wss_normalized = tn.r2();
    m.r2_pressure_per_sample = r2p / static_cast<double>(m.count);
    m.r2_wss_per_sample = r2t / static_cast<double>(m.count);
    m.mae_pressure = abs_p / static_cast<double>(m.nodes);
    m.mae_wss = abs_t / static_cast<double>(3 * m.nodes);
    for (const auto& [tag, acc] : fam) {
        FieldGroupMetrics g;
        g.r2_pressure = acc.first.r2();
        g.r2_wss = acc.second.r2();
        m.per_family[tag] = g;
    }
    for (auto& [tag, g] : m.per_family) {
        std::size_t c = 0;
        for (std::size_t idx : indices) c += std::string(1, family_tag(ds.samples[idx].family)) == tag;
        g.count = c;
    }
    return m;
}

FieldMetrics evaluate_aero(AeroGraphNetLite& model, const AeroDataset& ds, const std::vector<std::size_t>& indices,
                           int workers) {
    if (indices.empty()) throw ContractError("evaluation split is empty");
    std::vector<Tensor> pred(indices.size());
    parallel_for(indices.size(), workers,
                 [&](std::size_t k) { pred[k] = predict_aero(model, ds.samples[indices[k]], ds.c_ref); });
    return field_metrics(ds, indices, pred);
}

// ---------------------------------------------------------------------------
// Training

namespace {

template <class Run>
TrainResult with_retry(ParamSet& params, const TrainConfig& cfg, Run run) {
    const ParamSet initial = params.clone();
    try {
        return run(cfg.lr);
    } catch (const DivergenceError&) {
        params.assign(initial);
        TrainResult r = run(0.5 * cfg.lr);
        r.lr_halved = true;
        return r;
    }
}

void check_train_config(const TrainConfig& cfg) {
    if (cfg.epochs < 1) throw ConfigError("epochs must be >= 1");
    if (cfg.patience < 1) throw ConfigError("patience must be >= 1");
    if (cfg.batch < 1) throw ConfigError("batch must be >= 1");
    if (!(cfg.lr > 0.0)) throw ConfigError("learning rate must be > 0");
    if (!(cfg.lr_floor >= 0.0 && cfg.lr_floor <= 1.0)) throw ConfigError("lr_floor must be in [0, 1]");
}

// Names the first non-finite parameter, or `what` when all parameters are finite.
[[noreturn]] void diverged(const ParamSet& params, const char* what) {
    for (std::size_t i = 0; i < params.size(); ++i)
        for (double v : params[i].value.values())
            if (!finite(v)) throw DivergenceError(params[i].name, "parameter " + params[i].name + " is not finite");
    throw DivergenceError(what, std::string(what) + " is not finite");
}

void check_finite(const Tensor& t, const ParamSet& params, const char* what) {
    for (double v : t.values())
        if (!finite(v)) diverged(params, what);
}

}  // namespace

TrainResult train_classifier(ModeClassifier& model, const std::vector<StandardizedSample>& train,
                             const std::vector<StandardizedSample>& flipped,
                             const std::vector<StandardizedSample>& val, const LossConfig& loss,
                             const TrainConfig& cfg) {
    check_train_config(cfg);
    loss.validate();
    if (train.empty()) throw ContractError("training split is empty");
    if (val.empty()) throw ContractError("validation split is empty");
    if (!flipped.empty() && flipped.size() != train.size()) throw DimensionError("flipped twins must match training set");
    require_labeled(train, model.stats_tag(), "training");
    require_labeled(flipped, model.stats_tag(), "training");
    require_labeled(val, model.stats_tag(), "validation");
    std::vector<StandardizedSample> vset(val.begin(),
                                         cfg.val_limit ? val.begin() + static_cast<std::ptrdiff_t>(std::min(cfg.val_limit, val.size()))
                                                       : val.end());

    return with_retry(model.params(), cfg, [&](double lr0) {
        TrainResult res;
        Adam opt(AdamConfig{lr0});
        std::mt19937_64 rng(cfg.seed);
        ParamSet best = model.params().clone();
        double best_metric = -std::numeric_limits<double>::infinity(), best_loss = std::numeric_limits<double>::infinity();
        int since = 0;
        const std::size_t n = train.size();
        const std::size_t batches = cfg.steps_per_epoch ? cfg.steps_per_epoch : (n + cfg.batch - 1) / cfg.batch;
        const long total = static_cast<long>(batches) * cfg.epochs;
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::size_t cursor = n;
        for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
            double loss_sum = 0.0;
            for (std::size_t b = 0; b < batches; ++b) {
                std::vector<const EngineeringGraph*> gs;
                Tensor sc({std::min(cfg.batch, n), kPooledScalars});
                std::vector<int> y1, y2;
                for (std::size_t k = 0; k < sc.rows(); ++k) {
                    if (cursor == n) {
                        std::shuffle(order.begin(), order.end(), rng);
                        cursor = 0;
                    }
                    const std::size_t i = order[cursor++];
                    const bool flip = cfg.augment && !flipped.empty() && (rng() & 1u);
                    const StandardizedSample& s = flip ? flipped[i] : train[i];
                    gs.push_back(&s.sample.graph);
                    for (std::size_t c = 0; c < kPooledScalars; ++c) sc.at(k, c) = s.sample.scalars[c];
                    y1.push_back(s.sample.label->level1);
                    y2.push_back(s.sample.label->level2);
                }
                opt.config().lr = cosine_lr(cfg, lr0, res.curve.size() * static_cast<long>(batches) + static_cast<long>(b), total);
                model.params().zero_grad();
                Tape tape;
                auto out = model.forward(tape, make_batch(gs), sc, RunMode::Train, &rng);
                check_finite(out.probs1.value(), model.params(), "classifier output");
                check_finite(out.probs2.value(), model.params(), "classifier output");
                Var L = classification_loss(out.probs1, out.probs2, y1, y2, loss);
                check_finite(L.value(), model.params(), "classification loss");
                tape.backward(L);
                opt.step(model.params());
                loss_sum += L.value()[0];
            }
            const ClassMetrics vm = evaluate_classifier(model, vset, loss);
            CurvePoint pt;
            pt.epoch = epoch;
            pt.steps = opt.step_count();
            pt.lr = opt.config().lr;
            pt.train_loss = loss_sum / static_cast<double>(batches);
            pt.val_loss = vm.mean_loss;
            pt.val_metric = vm.combined;
            res.curve.push_back(pt);
            const bool better = vm.combined > best_metric || (vm.combined == best_metric && vm.mean_loss < best_loss);
            if (better) {
                best_metric = vm.combined;
                best_loss = vm.mean_loss;
                best.assign(model.params());
                res.best_epoch = epoch;
                since = 0;
            } else if (++since >= cfg.patience) {
                res.stopped_early = true;
                break;
            }
        }
        model.params().assign(best);
        res.best_metric = best_metric;
        return res;
    });
}

TrainResult train_aero(AeroGraphNetLite& model, const AeroDataset& ds, const LossConfig& loss, const TrainConfig& cfg) {
    check_train_config(cfg);
    loss.validate();
    const auto train = split_indices(ds.split, Split::Train);
    auto val = split_indices(ds.split, Split::Val);
    if (train.empty()) throw ContractError("training split is empty");
    if (val.empty()) throw ContractError("validation split is empty");
    if (cfg.val_limit && cfg.val_limit < val.size()) val.resize(cfg.val_limit);

    return with_retry(model.params(), cfg, [&](double lr0) {
        TrainResult res;
        Adam opt(AdamConfig{lr0});
        std::mt19937_64 rng(cfg.seed);
        ParamSet best = model.params().clone();
        double best_metric = -std::numeric_limits<double>::infinity();
        int since = 0;
        const std::size_t n = train.size();
        const std::size_t steps = cfg.steps_per_epoch ? cfg.steps_per_epoch : (n + cfg.batch - 1) / cfg.batch;
        const long total = static_cast<long>(steps) * cfg.epochs;
        std::vector<std::size_t> order = train;
        std::size_t cursor = n;
        for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
            double loss_sum = 0.0;
            std::map<std::string, double> terms{{"data", 0.0}, {"tangency", 0.0}, {"bernoulli", 0.0}, {"mass", 0.0}};
            for (std::size_t st = 0; st < steps; ++st) {
                opt.config().lr = cosine_lr(cfg, lr0, res.curve.size() * static_cast<long>(steps) + static_cast<long>(st), total);
                model.params().zero_grad();
                double step_loss = 0.0;
                for (std::size_t k = 0; k < cfg.batch; ++k) {
                    if (cursor == n) {
                        std::shuffle(order.begin(), order.end(), rng);
                        cursor = 0;
                    }
                    const std::size_t i = order[cursor++];
                    const AeroGraphSample& s = ds.samples[i];
                    const AeroGraphContext ctx = build_aero_context(s);
                    const PhysicsContext pc = physics_context(s, ctx, ds.c_ref);
                    Tensor target({s.size(), kAeroOutputs});
                    for (std::size_t r = 0; r < s.size(); ++r) {
                        target.at(r, 0) = s.pressure[r];
                        for (int c = 0; c < 3; ++c) target.at(r, 1 + c) = s.wss[r][c];
                    }
                    Tape tape;
                    auto out = model.forward(tape, make_batch({&ctx.graph}), RunMode::Train, &rng);
                    Tensor sc({1, kAeroOutputs}, pc.tau_ref);
                    sc[0] = pc.p_ref;
                    Var pred = ops::mul(out.y, tape.constant(std::move(sc)));
                    PhysicsLoss pl = physics_loss(pred, target, pc, loss);
                    check_finite(pl.total.value(), model.params(), "physics loss");
                    tape.backward(ops::scale(pl.total, 1.0 / static_cast<double>(cfg.batch)));
                    step_loss += pl.total.value()[0];
                    terms["data"] += pl.data.value()[0];
                    terms["tangency"] += pl.tangency.value()[0];
                    terms["bernoulli"] += pl.bernoulli.value()[0];
                    terms["mass"] += pl.mass.value()[0];
                }
                opt.step(model.params());
                loss_sum += step_loss / static_cast<double>(cfg.batch);
            }
            const FieldMetrics vm = evaluate_aero(model, ds, val, cfg.workers);
            CurvePoint pt;
            pt.epoch = epoch;
            pt.steps = opt.step_count();
            pt.lr = opt.config().lr;
            pt.train_loss = loss_sum / static_cast<double>(steps);
            pt.val_metric = vm.mean_r2();
            for (auto& [k, v] : terms) v /= static_cast<double>(steps * cfg.batch);
            pt.terms = terms;
            res.curve.push_back(pt);
            if (vm.mean_r2() > best_metric) {
                best_metric = vm.mean_r2();
                best.assign(model.params());
                res.best_epoch = epoch;
                since = 0;
            } else if (++since >= cfg.patience) {
                res.stopped_early = true;
                break;
            }
        }
        model.params().assign(best);
        res.best_metric = best_metric;
        return res;
    });
}

// ---------------------------------------------------------------------------
// Baselines

const char* baseline_name(Baseline b) {
    switch (b) {
        case Baseline::Full: return "full";
        case Baseline::Mlp: return "mlp";
        case Baseline::MeanPoolGcn: return "mean-pool-gcn";
        case Baseline::NoPhysics: return "no-physics";
        case Baseline::SingleVehicle: return "single-vehicle";
        case Baseline::MeshGraphNet: return "meshgraphnet";
    }
    return "?";
}

Baseline baseline_from_name(const std::string& s) {
    for (auto b : {Baseline::Full, Baseline::Mlp, Baseline::MeanPoolGcn, Baseline::NoPhysics, Baseline::SingleVehicle,
                   Baseline::MeshGraphNet})
        if (s == baseline_name(b)) return b;
    throw ConfigError("unknown baseline '" + s + "'");
}

std::vector<StandardizedSample> standardized_split(const ModeDataset& ds, const std::vector<RegionGraphSample>& graphs,
                                                   Split which, const FeatureStats& stats,
                                                   const std::vector<std::string>* vehicles) {
    if (graphs.size() != ds.samples.size()) throw DimensionError("one region graph per dataset sample required");
    std::vector<StandardizedSample> out;
    for (std::size_t i = 0; i < graphs.size(); ++i) {
        if (ds.split[i] != which || !graphs[i].label) continue;
        if (vehicles && std::find(vehicles->begin(), vehicles->end(), graphs[i].vehicle_id) == vehicles->end()) continue;
        out.push_back(standardize(graphs[i], stats));
    }
    return out;
}

ModeExperiment run_mode_experiment(const ModeDataset& ds, Baseline b, ClassifierConfig model_cfg, LossConfig loss,
                                   const TrainConfig& cfg) {
    switch (b) {
        case Baseline::Full:
        case Baseline::SingleVehicle: break;
        case Baseline::Mlp: model_cfg.aggregator = Aggregator::None; break;
        case Baseline::MeanPoolGcn: model_cfg.aggregator = Aggregator::Mean; break;
        default: throw ConfigError(std::string("baseline '") + baseline_name(b) + "' does not apply to the classifier");
    }
    std::vector<std::string> refs, targets;
    for (const auto& v : ds.config.vehicles) (v.reference ? refs : targets).push_back(v.spec.id);
    const std::vector<std::string>* only = b == Baseline::SingleVehicle ? &refs : nullptr;
    if (only && refs.empty()) throw ConfigError("single-vehicle training needs a reference vehicle");

    const auto graphs = aggregate_dataset(ds);
    std::vector<RegionGraphSample> raw;
    for (std::size_t i = 0; i < graphs.size(); ++i) {
        if (ds.split[i] != Split::Train || !graphs[i].label) continue;
        if (only && std::find(only->begin(), only->end(), graphs[i].vehicle_id) == only->end()) continue;
        raw.push_back(graphs[i]);
    }
    if (raw.empty()) throw ContractError("training split is empty");
    const FeatureStats stats = compute_feature_stats(raw);
    std::vector<StandardizedSample> train, flipped;
    std::vector<int> l1;
    for (const auto& g : raw) {
        train.push_back(standardize(g, stats));
        flipped.push_back(standardize(sign_flipped(g), stats));
        l1.push_back(g.label->level1);
    }
    loss.class_weights = inverse_frequency_weights(l1);
    const auto val = standardized_split(ds, graphs, Split::Val, stats, only);

    ModeExperiment ex{ModeClassifier(model_cfg, stats.tag), stats, {}, {}, {}};
    ex.train = train_classifier(ex.model, train, flipped, val, loss, cfg);
    ex.test = evaluate_classifier(ex.model, standardized_split(ds, graphs, Split::Test, stats), loss);
    if (!targets.empty()) {
        const auto tt = standardized_split(ds, graphs, Split::Test, stats, &targets);
        if (!tt.empty()) ex.target_test = evaluate_classifier(ex.model, tt, loss);
    }
    return ex;
}

AeroExperiment run_aero_experiment(const AeroDataset& ds, Baseline b, AeroNetConfig model_cfg, LossConfig loss,
                                   const TrainConfig& cfg) {
    switch (b) {
        case Baseline::Full: break;
        case Baseline::Mlp: model_cfg.aggregator = Aggregator::None; break;
        case Baseline::MeanPoolGcn: model_cfg.aggregator = Aggregator::Mean; break;
        case Baseline::NoPhysics: loss.lambda_bern = loss.lambda_mass = loss.lambda_tan = 0.0; break;
        default: throw ConfigError(std::string("baseline '") + baseline_name(b) + "' does not apply to the surrogate");
    }
    AeroExperiment ex{AeroGraphNetLite(model_cfg), {}, {}};
    ex.train = train_aero(ex.model, ds, loss, cfg);
    ex.test = evaluate_aero(ex.model, ds, split_indices(ds.split, Split::Test), cfg.workers);
    return ex;
}

// ---------------------------------------------------------------------------
// Serialization

json to_json(const LossConfig& c) {
    return json{{"class_weights", c.class_weights}, {"gamma", c.gamma},
                {"alpha", c.alpha},                 {"beta", c.beta},
                {"lambda_wss", c.lambda_wss},       {"lambda_bern", c.lambda_bern},
                {"lambda_mass", c.lambda_mass},     {"lambda_tan", c.lambda_tan},
                {"bern_c", c.bern_c}};
}

LossConfig loss_config_from_json(const json& j) {
    io::check_keys(j, {"class_weights", "gamma", "alpha", "beta", "lambda_wss", "lambda_bern", "lambda_mass",
                       "lambda_tan", "bern_c"},
                   "loss config");
    LossConfig c;
    try {
        if (j.contains("class_weights")) c.class_weights = j.at("class_weights").get<std::array<double, kLevel1>>();
        c.gamma = j.value("gamma", c.gamma);
        c.alpha = j.value("alpha", c.alpha);
        c.beta = j.value("beta", c.beta);
        c.lambda_wss = j.value("lambda_wss", c.lambda_wss);
        c.lambda_bern = j.value("lambda_bern", c.lambda_bern);
        c.lambda_mass = j.value("lambda_mass", c.lambda_mass);
        c.lambda_tan = j.value("lambda_tan", c.lambda_tan);
        c.bern_c = j.value("bern_c", c.bern_c);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("loss config: ") + e.what());
    }
    c.validate();
    return c;
}

json to_json(const TrainConfig& c) {
    return json{{"epochs", c.epochs},
                {"patience", c.patience},
                {"batch", c.batch},
                {"lr", c.lr},
                {"cosine", c.cosine},
                {"lr_floor", c.lr_floor},
                {"steps_per_epoch", c.steps_per_epoch},
                {"val_limit", c.val_limit},
                {"augment", c.augment},
                {"seed", c.seed},
                {"workers", c.workers}};
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
    io::check_keys(j, {"epochs", "patience", "batch", "lr", "cosine", "lr_floor", "steps_per_epoch", "val_limit",
                       "augment", "seed", "workers"},
                   "train config");
    try {
        c.epochs = j.value("epochs", c.epochs);
        c.patience = j.value("patience", c.patience);
        c.batch = j.value("batch", c.batch);
        c.lr = j.value("lr", c.lr);
        c.cosine = j.value("cosine", c.cosine);
        c.lr_floor = j.value("lr_floor", c.lr_floor);
        c.steps_per_epoch = j.value("steps_per_epoch", c.steps_per_epoch);
        c.val_limit = j.value("val_limit", c.val_limit);
        c.augment = j.value("augment", c.augment);
        c.seed = j.value("seed", c.seed);
        c.workers = j.value("workers", c.workers);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("train config: ") + e.what());
    }
    check_train_config(c);
    return c;
}

json to_json(const ClassMetrics& m) {
    json per = json::object();
    for (const auto& [v, g] : m.per_vehicle) {
        per[v] = {{"count", g.count},
                  {"level1_accuracy", g.level1_accuracy},
                  {"level2_accuracy", g.level2_accuracy},
                  {"combined", g.combined}};
    }
    json conf = json::array();
    for (const auto& row : m.confusion) conf.push_back(row);
    return json{{"count", m.count},
                {"level1_accuracy", m.level1_accuracy},
                {"level2_accuracy", m.level2_accuracy},
                {"combined", m.combined},
                {"consistency", m.consistency},
                {"hybrid_rate", m.hybrid_rate},
                {"mean_loss", m.mean_loss},
                {"confusion", conf},
                {"per_vehicle", per}};
}

json to_json(const FieldMetrics& m) {
    json per = json::object();
    for (const auto& [f, g] : m.per_family)
        per[f] = {{"count", g.count}, {"r2_pressure", g.r2_pressure}, {"r2_wss", g.r2_wss}};
    return json{{"count", m.count},
                {"nodes", m.nodes},
                {"r2_pressure", m.r2_pressure},
                {"r2_wss", m.r2_wss},
                {"r2_pressure_per_sample", m.r2_pressure_per_sample},
                {"r2_wss_per_sample", m.r2_wss_per_sample},
                {"r2_pressure_normalized", m.r2_pressure_normalized},
                {"r2_wss_normalized", m.r2_wss_normalized},
                {"mae_pressure_pa", m.mae_pressure},
                {"mae_wss_pa", m.mae_wss},
                {"per_family", per}};
}

json to_json(const TrainResult& r) {
    json curve = json::array();
    for (const auto& p : r.curve) {
        json e{{"epoch", p.epoch},           {"steps", p.steps},         {"lr", p.lr},
               {"train_loss", p.train_loss}, {"val_metric", p.val_metric}};
        if (p.terms.empty()) e["val_loss"] = p.val_loss;
        else e["terms"] = p.terms;
        curve.push_back(e);
    }
    return json{{"curve", curve},
                {"best_epoch", r.best_epoch},
                {"best_metric", r.best_metric},
                {"lr_halved", r.lr_halved},
                {"stopped_early", r.stopped_early}};
}

std::string confusion_csv(const ClassMetrics& m) {
    std::ostringstream os;
    os << "true\\predicted";
    for (const auto& n : level2_names()) os << ',' << n;
    os << '\n';
    for (std::size_t i = 0; i < kLevel2; ++i) {
        os << level2_names()[i];
        for (std::size_t j = 0; j < kLevel2; ++j) os << ',' << m.confusion[i][j];
        os << '\n';
    }
    return os.str();
}

}  // namespace enggraph
