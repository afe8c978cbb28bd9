#include "enggraph/models.hpp"
#include "enggraph/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>

#include <nlohmann/json.hpp>


namespace enggraph {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

Tensor glorot(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
    const double lim = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> u(-lim, lim);
    Tensor t({rows, cols});
    for (auto& v : t.storage()) v = u(rng);
    return t;
}

Var P(Tape& tape, ParamSet& ps, const std::string& name) { return tape.param(ps.get(name)); }

Var dense(Tape& tape, ParamSet& ps, const Var& x, const std::string& name) {
    return ops::add(ops::matmul(x, P(tape, ps, name + ".W")), P(tape, ps, name + ".b"));
}

void add_dense(ParamSet& ps, const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng) {
    ps.add(name + ".W", glorot(in, out, rng));
    ps.add(name + ".b", Tensor({1, out}));
}

Var maybe_dropout(const Var& x, double rate, RunMode mode, std::mt19937_64* rng) {
    if (mode == RunMode::Eval || rate <= 0.0) return x;
    if (rng == nullptr) throw StateError("dropout needs a random generator in train and mc-dropout modes");
    return ops::dropout_mask(x, 1.0 - rate, *rng);
}

}  // namespace

const char* aggregator_name(Aggregator a) {
    switch (a) {
        case Aggregator::Attention: return "attention";
        case Aggregator::Mean: return "mean";
        case Aggregator::None: return "none";
    }
    return "?";
}

Aggregator aggregator_from_name(const std::string& s) {
    for (auto a : {Aggregator::Attention, Aggregator::Mean, Aggregator::None})
        if (s == aggregator_name(a)) return a;
    throw ConfigError("unknown aggregator '" + s + "'");
}

// ---------------------------------------------------------------------------
// Batching

GraphBatch make_batch(const std::vector<const EngineeringGraph*>& graphs) {
    if (graphs.empty()) throw ContractError("empty graph batch");
    GraphBatch b;
    b.graphs = graphs.size();
    const std::size_t F = graphs[0]->x.cols(), Fe = graphs[0]->r.empty() ? 0 : graphs[0]->r.cols();
    std::size_t E = 0;
    for (const auto* g : graphs) {
        if (g->x.cols() != F) throw DimensionError("batch graphs differ in node feature width");
        if (g->src.size() != g->dst.size()) throw DimensionError("edge endpoint arrays differ in length");
        if (Fe > 0 && (g->r.cols() != Fe || g->r.rows() != g->src.size()))
            throw DimensionError("edge features do not match the edge list");
        b.offset.push_back(b.nodes);
        b.nodes += g->node_count();
        E += g->edge_count();
    }
    b.offset.push_back(b.nodes);
    b.real_edges = E;
    b.x = Tensor({b.nodes, F});
    b.r = Tensor({E + b.nodes, Fe});
    b.src.reserve(E + b.nodes);
    b.dst.reserve(E + b.nodes);
    std::size_t e0 = 0;
    for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
        const auto* g = graphs[gi];
        const auto off = static_cast<Index>(b.offset[gi]);
        const std::size_t n = g->node_count();
        std::copy(g->x.storage().begin(), g->x.storage().end(), b.x.storage().begin() + static_cast<std::ptrdiff_t>(b.offset[gi] * F));
        for (std::size_t e = 0; e < g->edge_count(); ++e) {
            if (g->src[e] < 0 || g->dst[e] < 0 || static_cast<std::size_t>(g->src[e]) >= n ||
                static_cast<std::size_t>(g->dst[e]) >= n)
                throw ContractError("edge endpoint outside the graph");
            b.src.push_back(g->src[e] + off);
            b.dst.push_back(g->dst[e] + off);
        }
        if (Fe > 0)
            std::copy(g->r.storage().begin(), g->r.storage().end(),
                      b.r.storage().begin() + static_cast<std::ptrdiff_t>(e0 * Fe));
        e0 += g->edge_count();
        for (std::size_t i = 0; i < n; ++i) b.graph_of.push_back(static_cast<Index>(gi));
    }
    for (std::size_t i = 0; i < b.nodes; ++i) {
        b.src.push_back(static_cast<Index>(i));
        b.dst.push_back(static_cast<Index>(i));
    }
    std::vector<double> deg(b.nodes, 0.0);
    for (Index d : b.dst) deg[d] += 1.0;
    b.inv_degree = Tensor({b.dst.size(), 1});
    for (std::size_t e = 0; e < b.dst.size(); ++e) b.inv_degree[e] = 1.0 / deg[b.dst[e]];
    return b;
}

// ---------------------------------------------------------------------------
// Attention layer

GatLayer::GatLayer(std::string name, GatShape shape) : name_(std::move(name)), shape_(shape) {
    if (shape.heads < 1 || shape.dim < 1 || shape.in < 1) throw ParameterError("attention layer needs positive sizes");
}

void GatLayer::init(ParamSet& ps, std::mt19937_64& rng) const {
    const auto& s = shape_;
    const std::size_t HD = s.heads * s.dim;
    ps.add(name_ + ".W", glorot(s.in, HD, rng));
    if (s.aggregator == Aggregator::Attention) {
        ps.add(name_ + ".a_src", glorot(s.heads, s.dim, rng));
        ps.add(name_ + ".a_dst", glorot(s.heads, s.dim, rng));
        if (s.edge_in > 0 && s.edge_logits) ps.add(name_ + ".U_e", glorot(s.edge_in, s.heads, rng));
    }
    if (s.edge_in > 0 && s.aggregator != Aggregator::None) ps.add(name_ + ".W_e", glorot(s.heads * s.edge_in, s.dim, rng));
    ps.add(name_ + ".b", Tensor({1, HD}));
}

GatLayer::Result GatLayer::forward(Tape& tape, ParamSet& ps, const Var& h, const Var& r, const GraphBatch& g,
                                   const Var* edge_logit) const {
    const auto& s = shape_;
    if (h.cols() != s.in || h.rows() != g.nodes) {
        throw DimensionError(name_ + ": input " + shape_str(h.shape()) + ", expected " + std::to_string(g.nodes) +
                             " x " + std::to_string(s.in));
    }
    const bool edges = s.edge_in > 0 && s.aggregator != Aggregator::None;
    if (edges && (r.cols() != s.edge_in || r.rows() != g.src.size())) {
        throw DimensionError(name_ + ": edge features " + shape_str(r.shape()) + ", expected " +
                             std::to_string(g.src.size()) + " x " + std::to_string(s.edge_in));
    }
    const std::size_t N = g.nodes, H = s.heads;
    Var Wh = ops::matmul(h, P(tape, ps, name_ + ".W"));
    Result res;
    Var agg;
    if (s.aggregator == Aggregator::None) {
        agg = Wh;
    } else {
        if (s.aggregator == Aggregator::Attention) {
            Var e = ops::add(ops::gather_rows(ops::head_dot(Wh, P(tape, ps, name_ + ".a_src")), g.src),
                             ops::gather_rows(ops::head_dot(Wh, P(tape, ps, name_ + ".a_dst")), g.dst));
            if (edges && s.edge_logits) e = ops::add(e, ops::matmul(r, P(tape, ps, name_ + ".U_e")));
            if (edge_logit) e = ops::add(e, *edge_logit);
            res.alpha = ops::segment_softmax(ops::leaky_relu(e, 0.2), g.dst, N);
        } else {
            Tensor a({g.dst.size(), H});
            for (std::size_t e = 0; e < g.dst.size(); ++e)
                for (std::size_t k = 0; k < H; ++k) a[e * H + k] = g.inv_degree[e];
            res.alpha = tape.constant(std::move(a));
        }
        agg = ops::gat_aggregate(res.alpha, Wh, g.src, g.dst, N);
        if (edges) {
            agg = ops::add(agg, ops::per_head_linear(ops::edge_aggregate(res.alpha, r, g.dst, N),
                                                     P(tape, ps, name_ + ".W_e"), H));
        }
    }
    agg = ops::add(agg, P(tape, ps, name_ + ".b"));
    if (s.average && H > 1) {
        Tensor m({H * s.dim, s.dim});
        for (std::size_t k = 0; k < H; ++k)
            for (std::size_t d = 0; d < s.dim; ++d) m.at(k * s.dim + d, d) = 1.0 / static_cast<double>(H);
        agg = ops::matmul(agg, tape.constant(std::move(m)));
    }
    res.out = agg;
    return res;
}

// ---------------------------------------------------------------------------
// Classifier

json to_json(const ClassifierConfig& c) {
    return json{{"layers", c.layers},     {"heads", c.heads},         {"head_dim", c.head_dim},
                {"trunk", c.trunk},       {"dropout", c.dropout},     {"hybrid_gap", c.hybrid_gap},
                {"aggregator", aggregator_name(c.aggregator)}, {"seed", c.seed}};
}

ClassifierConfig classifier_config_from_json(const json& j) {
    io::check_keys(j, {"layers", "heads", "head_dim", "trunk", "dropout", "hybrid_gap", "aggregator", "seed"},
               "classifier config");
    ClassifierConfig c;
    try {
        c.layers = j.value("layers", c.layers);
        c.heads = j.value("heads", c.heads);
        c.head_dim = j.value("head_dim", c.head_dim);
        c.trunk = j.value("trunk", c.trunk);
        c.dropout = j.value("dropout", c.dropout);
        c.hybrid_gap = j.value("hybrid_gap", c.hybrid_gap);
        if (j.contains("aggregator")) c.aggregator = aggregator_from_name(j.at("aggregator"));
        c.seed = j.value("seed", c.seed);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("classifier config: ") + e.what());
    }
    if (c.layers < 1 || c.heads < 1 || c.head_dim < 1 || c.trunk < 1) throw ConfigError("classifier sizes must be >= 1");
    if (!(c.dropout >= 0.0 && c.dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
    return c;
}

ModeClassifier::ModeClassifier(ClassifierConfig cfg, std::string stats_tag)
    : cfg_(cfg), stats_tag_(std::move(stats_tag)) {
    if (cfg_.layers < 1) throw ParameterError("classifier needs at least one layer");
    std::mt19937_64 rng(cfg_.seed);
    std::size_t in = kNodeFeatures;
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
        GatShape s;
        s.in = in;
        s.edge_in = kEdgeFeatures;
        s.heads = cfg_.heads;
        s.dim = cfg_.head_dim;
        s.average = l + 1 == cfg_.layers;
        s.aggregator = cfg_.aggregator;
        layers_.emplace_back("gat" + std::to_string(l), s);
        layers_.back().init(params_, rng);
        in = s.out();
    }
    add_dense(params_, "trunk", in + kPooledScalars, cfg_.trunk, rng);
    add_dense(params_, "head1", cfg_.trunk, kLevel1, rng);
    add_dense(params_, "head2", cfg_.trunk, kLevel2, rng);
}

void ModeClassifier::zero_heads() {
    for (const char* n : {"head1.W", "head1.b", "head2.W", "head2.b"}) params_.get(n).value.fill(0.0);
}

ClassifierOutput ModeClassifier::forward(Tape& tape, const GraphBatch& batch, const Tensor& scalars, RunMode mode,
                                         std::mt19937_64* rng, bool input_grad) {
    if (batch.x.cols() != kNodeFeatures) throw ContractError("classifier expects 10 node features");
    if (batch.r.cols() != kEdgeFeatures) throw ContractError("classifier expects 6 edge features");
    if (scalars.rows() != batch.graphs || scalars.cols() != kPooledScalars)
        throw DimensionError("pooled scalars must be graphs x 6");
    ClassifierOutput out;
    out.input = input_grad ? tape.input(batch.x) : tape.constant(batch.x);
    out.edges = input_grad ? tape.input(batch.r) : tape.constant(batch.r);
    const Var& r = out.edges;
    Var h = out.input;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        auto res = layers_[l].forward(tape, params_, h, r, batch);
        out.attention.push_back(res.alpha);
        h = ops::relu(res.out);
        if (l + 1 < layers_.size()) h = maybe_dropout(h, cfg_.dropout, mode, rng);
    }
    // Mean pool, summing rows in a canonical (value-sorted) order per graph.
    const Tensor& hv = h.value();
    const std::size_t C = hv.cols();
    std::vector<Index> order(batch.nodes);
    std::iota(order.begin(), order.end(), Index{0});
    for (std::size_t g = 0; g < batch.graphs; ++g) {
        std::sort(order.begin() + static_cast<std::ptrdiff_t>(batch.offset[g]),
                  order.begin() + static_cast<std::ptrdiff_t>(batch.offset[g + 1]), [&](Index a, Index b) {
                      return std::lexicographical_compare(hv.data() + a * C, hv.data() + (a + 1) * C,
                                                          hv.data() + b * C, hv.data() + (b + 1) * C);
                  });
    }
    Tensor inv({batch.graphs, 1});
    for (std::size_t g = 0; g < batch.graphs; ++g)
        inv[g] = 1.0 / static_cast<double>(std::max<std::size_t>(1, batch.offset[g + 1] - batch.offset[g]));
    Var pooled = ops::mul(ops::scatter_add_rows(ops::gather_rows(h, order), batch.graph_of, batch.graphs),
                          tape.constant(std::move(inv)));
    Var z = ops::concat({pooled, tape.constant(scalars)}, 1);
    Var t = maybe_dropout(ops::relu(dense(tape, params_, z, "trunk")), cfg_.dropout, mode, rng);
    out.logits1 = dense(tape, params_, t, "head1");
    out.logits2 = dense(tape, params_, t, "head2");
    out.probs1 = ops::softmax_rows(out.logits1);
    out.probs2 = ops::softmax_rows(out.logits2);
    return out;
}

ClassifierPrediction decode_prediction(const double* p1, const double* p2, double hybrid_gap) {
    ClassifierPrediction p;
    std::copy(p1, p1 + kLevel1, p.probs1.begin());
    std::copy(p2, p2 + kLevel2, p.probs2.begin());
    p.level1 = static_cast<int>(std::max_element(p.probs1.begin(), p.probs1.end()) - p.probs1.begin());
    double best = -1.0;
    for (int c = 0; c < static_cast<int>(kLevel2); ++c) {
        if (level1_of(c) == p.level1 && p.probs2[c] > best) {
            best = p.probs2[c];
            p.level2 = c;
        }
    }
    std::array<double, kLevel2> sorted = p.probs2;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    p.hybrid = sorted[0] - sorted[1] < hybrid_gap;
    return p;
}

ClassifierPrediction ModeClassifier::classify(const StandardizedSample& s, RunMode mode, std::mt19937_64* rng) {
    if (s.stats_tag != stats_tag_) {
        throw ContractError("sample standardized with statistics '" + s.stats_tag + "', model expects '" + stats_tag_ +
                            "'");
    }
    const GraphBatch b = make_batch({&s.sample.graph});
    Tensor sc({1, kPooledScalars});
    for (std::size_t k = 0; k < kPooledScalars; ++k) sc[k] = s.sample.scalars[k];
    Tape tape;
    auto out = forward(tape, b, sc, mode, rng);
    auto p = decode_prediction(out.probs1.value().data(), out.probs2.value().data(), cfg_.hybrid_gap);
    for (const auto& a : out.attention)
        if (a.valid()) p.attention.push_back(a.value());
    return p;
}

// ---------------------------------------------------------------------------
// Aero surrogate

AeroNetConfig aero_full_config() {
    AeroNetConfig c;
    c.hidden = 128;
    c.layers = 6;
    c.heads = 4;
    c.head_dim = 128;
    c.ffn = 512;
    c.edge_encoder_layers = 2;
    return c;
}

json to_json(const AeroNetConfig& c) {
    return json{{"node_in", c.node_in},
                {"edge_in", c.edge_in},
                {"hidden", c.hidden},
                {"layers", c.layers},
                {"heads", c.heads},
                {"head_dim", c.head_dim},
                {"ffn", c.ffn},
                {"edge_encoder_layers", c.edge_encoder_layers},
                {"outputs", c.outputs},
                {"dropout", c.dropout},
                {"aggregator", aggregator_name(c.aggregator)},
                {"seed", c.seed}};
}

AeroNetConfig aero_net_config_from_json(const json& j) {
    io::check_keys(j, {"node_in", "edge_in", "hidden", "layers", "heads", "head_dim", "ffn", "edge_encoder_layers",
                   "outputs", "dropout", "aggregator", "seed"},
               "aero net config");
    AeroNetConfig c;
    try {
        c.node_in = j.value("node_in", c.node_in);
        c.edge_in = j.value("edge_in", c.edge_in);
        c.hidden = j.value("hidden", c.hidden);
        c.layers = j.value("layers", c.layers);
        c.heads = j.value("heads", c.heads);
        c.head_dim = j.value("head_dim", c.head_dim);
        c.ffn = j.value("ffn", c.ffn);
        c.edge_encoder_layers = j.value("edge_encoder_layers", c.edge_encoder_layers);
        c.outputs = j.value("outputs", c.outputs);
        c.dropout = j.value("dropout", c.dropout);
        if (j.contains("aggregator")) c.aggregator = aggregator_from_name(j.at("aggregator"));
        c.seed = j.value("seed", c.seed);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("aero net config: ") + e.what());
    }
    if (c.hidden < 1 || c.heads < 1 || c.dim() < 1 || c.node_in < 1 || c.outputs < 1)
        throw ConfigError("aero net sizes must be >= 1");
    if (c.edge_encoder_layers < 1 || c.edge_encoder_layers > 2) throw ConfigError("edge_encoder_layers must be 1 or 2");
    if (!(c.dropout >= 0.0 && c.dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
    return c;
}

AeroGraphNetLite::AeroGraphNetLite(AeroNetConfig cfg) : cfg_(cfg) {
    const std::size_t hd = cfg_.hidden;
    if (cfg_.dim() < 1) throw ParameterError("head width must be >= 1");
    std::mt19937_64 rng(cfg_.seed);
    add_dense(params_, "enc.node0", cfg_.node_in, hd, rng);
    add_dense(params_, "enc.node1", hd, hd, rng);
    const bool edges = cfg_.edge_in > 0 && cfg_.aggregator == Aggregator::Attention;
    if (edges) {
        add_dense(params_, "enc.edge0", cfg_.edge_in, hd, rng);
        if (cfg_.edge_encoder_layers == 2) add_dense(params_, "enc.edge1", hd, hd, rng);
        // Edge logit weights of every layer, applied in one product.
        params_.add("enc.edge_logit", glorot(hd, cfg_.layers * cfg_.heads, rng));
    }
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
        GatShape s;
        s.in = hd;
        s.edge_in = cfg_.aggregator == Aggregator::None ? 0 : cfg_.edge_in;
        s.edge_logits = false;
        s.heads = cfg_.heads;
        s.dim = cfg_.dim();
        s.aggregator = cfg_.aggregator;
        const std::string name = "mp" + std::to_string(l);
        layers_.emplace_back(name + ".att", s);
        layers_.back().init(params_, rng);
        add_dense(params_, name + ".out", s.out(), hd, rng);
        if (cfg_.ffn > 0) {
            add_dense(params_, name + ".ffn0", hd, cfg_.ffn, rng);
            add_dense(params_, name + ".ffn1", cfg_.ffn, hd, rng);
        }
    }
    add_dense(params_, "dec0", hd, hd, rng);
    add_dense(params_, "dec1", hd, cfg_.outputs, rng);
}

AeroOutput AeroGraphNetLite::forward(Tape& tape, const GraphBatch& batch, RunMode mode, std::mt19937_64* rng,
                                     bool input_grad) {
    if (batch.x.cols() != cfg_.node_in) {
        throw ContractError("aero net expects " + std::to_string(cfg_.node_in) + " node features, got " +
                            std::to_string(batch.x.cols()));
    }
    const bool edges = cfg_.edge_in > 0 && cfg_.aggregator == Aggregator::Attention;
    if (cfg_.edge_in > 0 && cfg_.aggregator != Aggregator::None && batch.r.cols() != cfg_.edge_in) {
        throw ContractError("aero net expects " + std::to_string(cfg_.edge_in) + " edge features, got " +
                            std::to_string(batch.r.cols()));
    }
    AeroOutput out;
    out.input = input_grad ? tape.input(batch.x) : tape.constant(batch.x);
    Var h = dense(tape, params_, ops::relu(dense(tape, params_, out.input, "enc.node0")), "enc.node1");
    out.edges = input_grad ? tape.input(batch.r) : tape.constant(batch.r);
    const Var& r = out.edges;
    Var logits;
    if (edges) {
        Var re = ops::relu(dense(tape, params_, r, "enc.edge0"));
        if (cfg_.edge_encoder_layers == 2) re = dense(tape, params_, re, "enc.edge1");
        logits = ops::matmul(re, P(tape, params_, "enc.edge_logit"));
    }
    const std::size_t H = cfg_.heads;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const std::string name = "mp" + std::to_string(l);
        Var el;
        if (edges) el = ops::slice_cols(logits, l * H, (l + 1) * H);
        auto res = layers_[l].forward(tape, params_, ops::layer_norm_rows(h), r, batch, edges ? &el : nullptr);
        out.attention.push_back(res.alpha);
        Var u = dense(tape, params_, ops::relu(res.out), name + ".out");
        h = ops::add(h, maybe_dropout(u, cfg_.dropout, mode, rng));
        if (cfg_.ffn > 0) {
            Var f = dense(tape, params_, ops::relu(dense(tape, params_, ops::layer_norm_rows(h), name + ".ffn0")),
                          name + ".ffn1");
            h = ops::add(h, maybe_dropout(f, cfg_.dropout, mode, rng));
        }
    }
    out.y = dense(tape, params_, ops::relu(dense(tape, params_, ops::layer_norm_rows(h), "dec0")), "dec1");
    return out;
}

Tensor AeroGraphNetLite::predict(const GraphBatch& batch, RunMode mode, std::mt19937_64* rng) {
    Tape tape;
    return forward(tape, batch, mode, rng).y.value();
}

// ---------------------------------------------------------------------------
// Checkpoints

void write_checkpoint(const fs::path& dir, const json& architecture, const ParamSet& params) {
    static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);
    std::string blob;
    blob.reserve(params.scalar_count() * 8);
    json table = json::array();
    std::size_t offset = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& p = params[i];
        table.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"offset", offset}, {"count", p.value.size()}});
        for (double v : p.value.storage()) {
            std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
            for (int k = 0; k < 8; ++k) blob.push_back(static_cast<char>((bits >> (8 * k)) & 0xFF));
        }
        offset += p.value.size() * 8;
    }
    json manifest{{"format", "enggraph-checkpoint/1"},
                  {"architecture", architecture},
                  {"parameter_count", params.scalar_count()},
                  {"blob", "params.bin"},
                  {"blob_sha256", io::sha256_hex(blob)},
                  {"tensors", table}};
    io::write_atomic(dir / "params.bin", blob);
    io::write_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

namespace {

json read_manifest(const fs::path& dir) {
    try {
        json m = json::parse(io::read_text(dir / "manifest.json"));
        if (m.at("format") != "enggraph-checkpoint/1") throw SchemaError("unsupported checkpoint format");
        return m;
    } catch (const json::exception& e) {
        throw SchemaError("checkpoint manifest: " + std::string(e.what()));
    }
}

}  // namespace

json read_checkpoint_architecture(const fs::path& dir) { return read_manifest(dir).at("architecture"); }

void read_checkpoint_params(const fs::path& dir, ParamSet& params) {
    const json m = read_manifest(dir);
    const std::string blob = io::read_text(dir / m.at("blob").get<std::string>());
    if (io::sha256_hex(blob) != m.at("blob_sha256")) throw SchemaError("checkpoint blob hash mismatch");
    const auto& table = m.at("tensors");
    if (table.size() != params.size()) throw ContractError("checkpoint has a different parameter count");
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        const auto& t = table[i];
        if (t.at("name") != p.name || t.at("shape").get<Shape>() != p.value.shape())
            throw ContractError("checkpoint tensor '" + t.at("name").get<std::string>() + "' does not match '" +
                                p.name + "'");
        const std::size_t off = t.at("offset"), cnt = t.at("count");
        if (off + cnt * 8 > blob.size()) throw SchemaError("checkpoint blob truncated");
        for (std::size_t k = 0; k < cnt; ++k) {
            std::uint64_t bits = 0;
            for (int b = 0; b < 8; ++b)
                bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(blob[off + k * 8 + b])) << (8 * b);
            p.value[k] = std::bit_cast<double>(bits);
        }
    }
}

void save_classifier(const ModeClassifier& m, const fs::path& dir, const json& extra) {
    json arch{{"model", "mode-classifier"}, {"config", to_json(m.config())}, {"stats_tag", m.stats_tag()},
              {"extra", extra}};
    write_checkpoint(dir, arch, m.params());
}

ModeClassifier load_classifier(const fs::path& dir) {
    const json arch = read_checkpoint_architecture(dir);
    if (arch.value("model", "") != "mode-classifier") throw SchemaError("checkpoint is not a mode classifier");
    ModeClassifier m(classifier_config_from_json(arch.at("config")), arch.at("stats_tag"));
    read_checkpoint_params(dir, m.params());
    return m;
}

void save_aero_net(const AeroGraphNetLite& m, const fs::path& dir, const json& extra) {
    json arch{{"model", "aero-graph-net"}, {"config", to_json(m.config())}, {"extra", extra}};
    write_checkpoint(dir, arch, m.params());
}

AeroGraphNetLite load_aero_net(const fs::path& dir) {
    const json arch = read_checkpoint_architecture(dir);
    if (arch.value("model", "") != "aero-graph-net") throw SchemaError("checkpoint is not an aero surrogate");
    AeroGraphNetLite m(aero_net_config_from_json(arch.at("config")));
    read_checkpoint_params(dir, m.params());
    return m;
}

}  // namespace enggraph
