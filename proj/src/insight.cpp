#include "enggraph/insight.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "enggraph/error.hpp"
#include "enggraph/parallel.hpp"

namespace enggraph {

namespace {

using json = nlohmann::json;

// Welford running mean and sum of squared deviations; identical inputs leave
// m2 at exactly zero.
struct Running {
    std::vector<double> mean, m2;
    long n = 0;

    void add(const double* x, std::size_t size) {
        if (n == 0) {
            mean.assign(x, x + size);
            m2.assign(size, 0.0);
            n = 1;
            return;
        }
        ++n;
        for (std::size_t i = 0; i < size; ++i) {
            const double d = x[i] - mean[i];
            mean[i] += d / static_cast<double>(n);
            m2[i] += d * (x[i] - mean[i]);
        }
    }
    double variance(std::size_t i) const { return n > 1 ? std::max(0.0, m2[i] / static_cast<double>(n - 1)) : 0.0; }
};

std::uint64_t candidate_seed(std::uint64_t seed, const std::string& id) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : id) h = (h ^ c) * 1099511628211ull;
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
    std::uint32_t parts[2];
    seq.generate(parts, parts + 2);
    return (static_cast<std::uint64_t>(parts[0]) << 32) | parts[1];
}

void check_passes(int passes) {
    if (passes < 2) throw ParameterError("MC dropout needs at least 2 passes");
}

// Fills node and edge scores from the gradients left on `input` and `edges`.
void fill_scores(AttributionMap& a, const Var& input, const Var& edges, const std::vector<Var>& attention,
                 const GraphBatch& batch) {
    const Tensor& x = input.value();
    const Tensor& g = input.grad();
    const std::size_t N = x.rows(), F = x.cols();
    a.node.assign(N, 0.0);
    double total = 0.0;
    if (g.size() == x.size()) {
        for (std::size_t i = 0; i < N; ++i) {
            double s = 0.0;
            for (std::size_t f = 0; f < F; ++f) s += std::abs(g.at(i, f) * x.at(i, f));
            a.node[i] = s;
            total += s;
        }
    }
    if (total > 0.0 && std::isfinite(total)) {
        for (double& v : a.node) v /= total;
    } else {
        a.uniform_fallback = true;
        std::fill(a.node.begin(), a.node.end(), 1.0 / static_cast<double>(N));
    }

    const std::size_t E = batch.real_edges;
    a.edge_src.assign(batch.src.begin(), batch.src.begin() + static_cast<std::ptrdiff_t>(E));
    a.edge_dst.assign(batch.dst.begin(), batch.dst.begin() + static_cast<std::ptrdiff_t>(E));
    a.edge.assign(E, 0.0);
    const Tensor& gr = edges.grad();
    const std::size_t R = edges.value().cols();
    if (gr.size() != edges.value().size()) return;
    std::vector<double> att(E, 0.0);
    std::size_t count = 0;
    for (const Var& al : attention) {
        if (!al.valid()) continue;
        const Tensor& t = al.value();
        for (std::size_t e = 0; e < E; ++e)
            for (std::size_t h = 0; h < t.cols(); ++h) att[e] += t.at(e, h);
        count += t.cols();
    }
    if (count == 0) return;
    double esum = 0.0;
    for (std::size_t e = 0; e < E; ++e) {
        double n2 = 0.0;
        for (std::size_t c = 0; c < R; ++c) n2 += gr.at(e, c) * gr.at(e, c);
        a.edge[e] = att[e] / static_cast<double>(count) * std::sqrt(n2);
        esum += a.edge[e];
    }
    if (esum > 0.0 && std::isfinite(esum))
        for (double& v : a.edge) v /= esum;
}

Tensor scalars_of(const StandardizedSample& s) {
    Tensor t({1, kPooledScalars});
    for (std::size_t k = 0; k < kPooledScalars; ++k) t[k] = s.sample.scalars[k];
    return t;
}

void check_tag(const ModeClassifier& model, const StandardizedSample& s) {
    if (s.stats_tag != model.stats_tag())
        throw ContractError("sample standardized with statistics " + s.stats_tag + ", model expects " +
                            model.stats_tag());
}

}  // namespace

AttributionMap attribute(ModeClassifier& model, const StandardizedSample& s, const std::string& target) {
    check_tag(model, s);
    bool level1 = false;
    int cls = -1;
    if (target == "predicted") {
        cls = model.classify(s).level2;
    } else if (target.rfind("level1:", 0) == 0) {
        const auto& n = level1_names();
        auto it = std::find(n.begin(), n.end(), target.substr(7));
        if (it != n.end()) cls = static_cast<int>(it - n.begin());
        level1 = true;
    } else {
        const auto& n = level2_names();
        auto it = std::find(n.begin(), n.end(), target);
        if (it != n.end()) cls = static_cast<int>(it - n.begin());
    }
    if (cls < 0) throw ContractError("unknown attribution target '" + target + "'");

    const GraphBatch batch = make_batch({&s.sample.graph});
    Tape tape;
    auto out = model.forward(tape, batch, scalars_of(s), RunMode::Eval, nullptr, true);
    const Var& logits = level1 ? out.logits1 : out.logits2;
    Tensor mask({1, logits.cols()});
    mask[static_cast<std::size_t>(cls)] = 1.0;
    tape.backward(ops::reduce_sum(ops::mul(logits, tape.constant(std::move(mask)))));

    AttributionMap a;
    a.target = level1 ? "level1:" + level1_names()[cls] : level2_names()[cls];
    a.node_label = s.sample.graph.node_type;
    fill_scores(a, out.input, out.edges, out.attention, batch);
    return a;
}

AttributionMap attribute(AeroGraphNetLite& model, const AeroGraphSample& s, const std::string& field,
                         std::optional<std::size_t> node) {
    std::size_t c0 = 0, c1 = 0;
    if (field == "pressure") c0 = 0, c1 = 1;
    else if (field == "wss_x") c0 = 1, c1 = 2;
    else if (field == "wss_y") c0 = 2, c1 = 3;
    else if (field == "wss_z") c0 = 3, c1 = 4;
    else if (field == "wss") c0 = 1, c1 = 4;
    else throw ContractError("unknown attribution target '" + field + "'");
    if (node && *node >= s.size()) throw ContractError("attribution node out of range");

    const AeroGraphContext ctx = build_aero_context(s);
    const GraphBatch batch = make_batch({&ctx.graph});
    Tape tape;
    auto out = model.forward(tape, batch, RunMode::Eval, nullptr, true);
    Tensor mask({s.size(), kAeroOutputs});
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (node && i != *node) continue;
        for (std::size_t c = c0; c < c1; ++c) mask.at(i, c) = 1.0;
    }
    tape.backward(ops::reduce_sum(ops::mul(out.y, tape.constant(std::move(mask)))));

    AttributionMap a;
    a.target = node ? field + "@" + std::to_string(*node) : field;
    for (Index id : s.source_ids) a.node_label.push_back(std::to_string(id));
    fill_scores(a, out.input, out.edges, out.attention, batch);
    return a;
}

double predictive_entropy(std::span<const double> p) {
    if (p.empty()) throw ContractError("entropy of an empty distribution");
    double h = 0.0;
    for (double v : p) {
        if (v < 0.0 || !std::isfinite(v)) throw DomainError("probabilities must be finite and non-negative");
        if (v > 0.0) h -= v * std::log(v);
    }
    return std::clamp(h, 0.0, std::log(static_cast<double>(p.size())));
}

ClassifierUncertainty mc_uncertainty(ModeClassifier& model, const StandardizedSample& s, int passes,
                                     std::uint64_t seed) {
    check_passes(passes);
    check_tag(model, s);
    std::mt19937_64 rng(seed);
    const GraphBatch batch = make_batch({&s.sample.graph});
    const Tensor sc = scalars_of(s);
    Running acc;
    for (int t = 0; t < passes; ++t) {
        Tape tape;
        auto out = model.forward(tape, batch, sc, RunMode::McDropout, &rng);
        acc.add(out.probs2.value().data(), kLevel2);
    }
    ClassifierUncertainty u;
    u.passes = passes;
    std::copy(acc.mean.begin(), acc.mean.end(), u.mean_probs.begin());
    u.entropy = predictive_entropy(u.mean_probs);
    return u;
}

FieldUncertainty mc_uncertainty(AeroGraphNetLite& model, const AeroGraphSample& s, int passes, std::uint64_t seed) {
    check_passes(passes);
    std::mt19937_64 rng(seed);
    const AeroGraphContext ctx = build_aero_context(s);
    const GraphBatch batch = make_batch({&ctx.graph});
    const std::size_t N = s.size();
    const double q = s.q_inf();
    Running acc;
    std::vector<double> p(N);
    for (int t = 0; t < passes; ++t) {
        const Tensor y = model.predict(batch, RunMode::McDropout, &rng);
        for (std::size_t i = 0; i < N; ++i) p[i] = y.at(i, 0) * q;
        acc.add(p.data(), N);
    }
    FieldUncertainty u;
    u.passes = passes;
    u.variance.resize(N);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        u.variance[i] = acc.variance(i);
        num += s.area[i] * u.variance[i];
        den += s.area[i];
    }
    u.score = den > 0.0 ? num / den : 0.0;
    return u;
}

std::vector<RankedCandidate> rank_candidates(std::vector<RankedCandidate> scored, std::size_t top_k) {
    if (scored.empty()) throw ContractError("candidate pool is empty");
    std::stable_sort(scored.begin(), scored.end(), [](const RankedCandidate& a, const RankedCandidate& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.id < b.id;
    });
    if (top_k && top_k < scored.size()) scored.resize(top_k);
    return scored;
}

std::vector<RankedCandidate> rank_data_candidates(ModeClassifier& model, const std::vector<StandardizedSample>& pool,
                                                  const std::vector<std::string>& ids, const McConfig& cfg) {
    if (pool.empty()) throw ContractError("candidate pool is empty");
    if (ids.size() != pool.size()) throw DimensionError("one id per candidate required");
    check_passes(cfg.passes);
    std::vector<RankedCandidate> out(pool.size());
    parallel_for(pool.size(), cfg.workers, [&](std::size_t i) {
        const auto u = mc_uncertainty(model, pool[i], cfg.passes, candidate_seed(cfg.seed, ids[i]));
        out[i] = {ids[i], i, u.entropy};
    });
    return rank_candidates(std::move(out), cfg.top_k);
}

std::vector<RankedCandidate> rank_data_candidates(AeroGraphNetLite& model, const std::vector<AeroGraphSample>& pool,
                                                  const McConfig& cfg) {
    if (pool.empty()) throw ContractError("candidate pool is empty");
    check_passes(cfg.passes);
    std::vector<RankedCandidate> out(pool.size());
    parallel_for(pool.size(), cfg.workers, [&](std::size_t i) {
        const auto u = mc_uncertainty(model, pool[i], cfg.passes, candidate_seed(cfg.seed, pool[i].id));
        out[i] = {pool[i].id, i, u.score};
    });
    return rank_candidates(std::move(out), cfg.top_k);
}

json to_json(const AttributionMap& a) {
    json nodes = json::array();
    for (std::size_t i = 0; i < a.node.size(); ++i)
        nodes.push_back({{"node", i}, {"label", i < a.node_label.size() ? a.node_label[i] : ""}, {"score", a.node[i]}});
    json edges = json::array();
    for (std::size_t e = 0; e < a.edge.size(); ++e)
        edges.push_back({{"src", a.edge_src[e]}, {"dst", a.edge_dst[e]}, {"score", a.edge[e]}});
    return json{{"target", a.target}, {"uniform_fallback", a.uniform_fallback}, {"nodes", nodes}, {"edges", edges}};
}

std::string attribution_csv(const AttributionMap& a) {
    std::ostringstream os;
    os.precision(17);
    os << "node,label,score\n";
    for (std::size_t i = 0; i < a.node.size(); ++i)
        os << i << ',' << (i < a.node_label.size() ? a.node_label[i] : "") << ',' << a.node[i] << '\n';
    return os.str();
}

json to_json(const std::vector<RankedCandidate>& ranking, const McConfig& cfg) {
    json items = json::array();
    for (std::size_t r = 0; r < ranking.size(); ++r)
        items.push_back({{"rank", r + 1}, {"id", ranking[r].id}, {"index", ranking[r].index}, {"score", ranking[r].score}});
    return json{{"passes", cfg.passes}, {"seed", cfg.seed}, {"top_k", cfg.top_k}, {"candidates", items}};
}

}  // namespace enggraph
