#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "enggraph/aerograph.hpp"
#include "enggraph/error.hpp"
#include "enggraph/models.hpp"

using namespace enggraph;

namespace {

EngineeringGraph random_graph(std::size_t n, std::size_t edges, std::size_t fx, std::size_t fe, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    EngineeringGraph g;
    g.x = Tensor({n, fx});
    for (auto& v : g.x.storage()) v = nd(rng);
    for (std::size_t e = 0; e < edges; ++e) {
        Index a = static_cast<Index>(rng() % n), b = static_cast<Index>(rng() % n);
        if (a == b) b = (b + 1) % static_cast<Index>(n);
        g.src.push_back(a);
        g.dst.push_back(b);
    }
    g.r = Tensor({edges, fe});
    for (auto& v : g.r.storage()) v = nd(rng);
    g.node_type.assign(n, "node");
    g.edge_type.assign(edges, 0);
    return g;
}

// Node i of the result is node perm[i] of the input; edge order is preserved.
EngineeringGraph permuted(const EngineeringGraph& g, const std::vector<Index>& perm) {
    const std::size_t n = g.node_count(), F = g.x.cols();
    std::vector<Index> inv(n);
    for (std::size_t i = 0; i < n; ++i) inv[perm[i]] = static_cast<Index>(i);
    EngineeringGraph p = g;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < F; ++c) p.x.at(i, c) = g.x.at(perm[i], c);
    for (std::size_t e = 0; e < g.edge_count(); ++e) {
        p.src[e] = inv[g.src[e]];
        p.dst[e] = inv[g.dst[e]];
    }
    return p;
}

std::vector<Index> shuffled(std::size_t n, std::uint64_t seed) {
    std::vector<Index> perm(n);
    std::iota(perm.begin(), perm.end(), Index{0});
    std::mt19937_64 rng(seed);
    std::shuffle(perm.begin(), perm.end(), rng);
    return perm;
}

StandardizedSample classifier_sample(std::uint64_t seed, const std::string& tag = "stats") {
    StandardizedSample s;
    s.sample.graph = random_graph(10, 24, kNodeFeatures, kEdgeFeatures, seed);
    std::mt19937_64 rng(seed + 1);
    std::normal_distribution<double> nd;
    for (auto& v : s.sample.scalars) v = nd(rng);
    s.stats_tag = tag;
    return s;
}

Tensor scalars_of(const StandardizedSample& s) {
    Tensor t({1, kPooledScalars});
    for (std::size_t k = 0; k < kPooledScalars; ++k) t[k] = s.sample.scalars[k];
    return t;
}

AeroNetConfig small_aero() {
    AeroNetConfig c;
    c.hidden = 16;
    c.layers = 3;
    c.heads = 2;
    return c;
}

// Weighted sum of squares so that every output column feeds the loss.
Var probe_loss(Tape& tape, const Var& y, std::uint64_t seed) {
    Tensor w(y.shape());
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.5, 1.5);
    for (auto& v : w.storage()) v = u(rng);
    return ops::reduce_sum(ops::mul(ops::mul(y, y), tape.constant(std::move(w))));
}

}  // namespace

TEST(GatLayer, SingleNodeSelfLoopIsLinearMap) {
    EngineeringGraph g;
    g.x = Tensor::matrix(1, 3, {0.3, -1.2, 2.0});
    g.r = Tensor({0, 0});
    g.node_type = {"n"};
    const GraphBatch b = make_batch({&g});
    ASSERT_EQ(b.src.size(), 1u);
    GatShape s;
    s.in = 3;
    s.heads = 2;
    s.dim = 2;
    GatLayer layer("l", s);
    ParamSet ps;
    std::mt19937_64 rng(5);
    layer.init(ps, rng);
    std::normal_distribution<double> nd;
    for (auto& v : ps.get("l.b").value.storage()) v = nd(rng);
    Tape tape;
    auto res = layer.forward(tape, ps, tape.constant(b.x), Var(), b);
    const Tensor& W = ps.get("l.W").value;
    const Tensor& bias = ps.get("l.b").value;
    for (std::size_t c = 0; c < 4; ++c) {
        double expect = bias[c];
        for (std::size_t k = 0; k < 3; ++k) expect += g.x[k] * W.at(k, c);
        EXPECT_NEAR(res.out.value()[c], expect, 1e-12);
    }
    EXPECT_DOUBLE_EQ(res.alpha.value()[0], 1.0);
    EXPECT_DOUBLE_EQ(res.alpha.value()[1], 1.0);
}

TEST(GatLayer, AttentionRowsSumToOne) {
    const auto g = random_graph(30, 120, 5, 3, 2);
    const GraphBatch b = make_batch({&g});
    GatShape s{5, 3, 4, 3, false, Aggregator::Attention};
    GatLayer layer("l", s);
    ParamSet ps;
    std::mt19937_64 rng(1);
    layer.init(ps, rng);
    Tape tape;
    auto res = layer.forward(tape, ps, tape.constant(b.x), tape.constant(b.r), b);
    std::vector<double> sum(b.nodes * 4, 0.0);
    const Tensor& a = res.alpha.value();
    for (std::size_t e = 0; e < b.dst.size(); ++e)
        for (std::size_t h = 0; h < 4; ++h) {
            EXPECT_GT(a[e * 4 + h], 0.0);
            sum[b.dst[e] * 4 + h] += a[e * 4 + h];
        }
    for (double v : sum) EXPECT_NEAR(v, 1.0, 1e-12);
    EXPECT_EQ(res.out.cols(), 12u);
}

TEST(GatLayer, MeanAggregatorUsesInverseDegree) {
    const auto g = random_graph(12, 40, 4, 2, 3);
    const GraphBatch b = make_batch({&g});
    GatShape s{4, 2, 2, 3, false, Aggregator::Mean};
    GatLayer layer("m", s);
    ParamSet ps;
    std::mt19937_64 rng(1);
    layer.init(ps, rng);
    EXPECT_FALSE(ps.contains("m.a_src"));
    Tape tape;
    auto res = layer.forward(tape, ps, tape.constant(b.x), tape.constant(b.r), b);
    std::vector<int> deg(b.nodes, 0);
    for (Index d : b.dst) ++deg[d];
    for (std::size_t e = 0; e < b.dst.size(); ++e) EXPECT_DOUBLE_EQ(res.alpha.value()[e * 2], 1.0 / deg[b.dst[e]]);
}

TEST(GatLayer, NoneAggregatorIgnoresEdges) {
    auto g = random_graph(12, 40, 4, 2, 3);
    GatShape s{4, 2, 2, 3, false, Aggregator::None};
    GatLayer layer("n", s);
    ParamSet ps;
    std::mt19937_64 rng(1);
    layer.init(ps, rng);
    const GraphBatch b1 = make_batch({&g});
    g.src.resize(3);
    g.dst.resize(3);
    g.r = Tensor({3, 2});
    const GraphBatch b2 = make_batch({&g});
    Tape t1, t2;
    auto r1 = layer.forward(t1, ps, t1.constant(b1.x), t1.constant(b1.r), b1);
    auto r2 = layer.forward(t2, ps, t2.constant(b2.x), t2.constant(b2.r), b2);
    EXPECT_EQ(r1.out.value().storage(), r2.out.value().storage());
}

TEST(GatLayer, AveragedHeadsHaveHeadWidth) {
    const auto g = random_graph(8, 20, 3, 2, 4);
    const GraphBatch b = make_batch({&g});
    GatShape s{3, 2, 3, 5, true, Aggregator::Attention};
    GatLayer layer("a", s);
    ParamSet ps;
    std::mt19937_64 rng(1);
    layer.init(ps, rng);
    Tape tape;
    auto res = layer.forward(tape, ps, tape.constant(b.x), tape.constant(b.r), b);
    EXPECT_EQ(res.out.cols(), 5u);
}

TEST(Batch, DisjointUnionOffsetsAndSelfLoops) {
    const auto g1 = random_graph(5, 8, 3, 2, 1), g2 = random_graph(7, 11, 3, 2, 2);
    const GraphBatch b = make_batch({&g1, &g2});
    EXPECT_EQ(b.nodes, 12u);
    EXPECT_EQ(b.real_edges, 19u);
    EXPECT_EQ(b.src.size(), 31u);
    EXPECT_EQ(b.offset, (std::vector<std::size_t>{0, 5, 12}));
    EXPECT_EQ(b.src[8], g2.src[0] + 5);
    for (std::size_t i = 0; i < 12; ++i) {
        EXPECT_EQ(b.src[19 + i], static_cast<Index>(i));
        EXPECT_EQ(b.dst[19 + i], static_cast<Index>(i));
        EXPECT_EQ(b.r.at(19 + i, 0), 0.0);
    }
    EXPECT_EQ(b.graph_of[4], 0);
    EXPECT_EQ(b.graph_of[5], 1);
    EXPECT_THROW(make_batch({}), ContractError);
}

TEST(Classifier, ZeroHeadsGiveUniformHybrid) {
    ModeClassifier m(ClassifierConfig{}, "stats");
    m.zero_heads();
    auto p = m.classify(classifier_sample(3));
    for (double v : p.probs1) EXPECT_NEAR(v, 0.25, 1e-15);
    for (double v : p.probs2) EXPECT_NEAR(v, 1.0 / 11.0, 1e-15);
    EXPECT_TRUE(p.hybrid);
    EXPECT_EQ(p.attention.size(), 4u);
}

TEST(Classifier, RejectsForeignStatistics) {
    ModeClassifier m(ClassifierConfig{}, "stats-a");
    EXPECT_THROW(m.classify(classifier_sample(3, "stats-b")), ContractError);
    EXPECT_THROW(m.classify(classifier_sample(3, "")), ContractError);
    EXPECT_NO_THROW(m.classify(classifier_sample(3, "stats-a")));
}

TEST(Classifier, OutputShapesAndProbabilities) {
    ModeClassifier m(ClassifierConfig{}, "stats");
    auto s = classifier_sample(4);
    const GraphBatch b = make_batch({&s.sample.graph, &s.sample.graph});
    Tensor sc({2, kPooledScalars});
    Tape tape;
    auto out = m.forward(tape, b, sc, RunMode::Eval, nullptr);
    EXPECT_EQ(out.probs1.value().shape(), (Shape{2, kLevel1}));
    EXPECT_EQ(out.probs2.value().shape(), (Shape{2, kLevel2}));
    for (std::size_t r = 0; r < 2; ++r) {
        double s1 = 0, s2 = 0;
        for (std::size_t c = 0; c < kLevel1; ++c) s1 += out.probs1.value().at(r, c);
        for (std::size_t c = 0; c < kLevel2; ++c) s2 += out.probs2.value().at(r, c);
        EXPECT_NEAR(s1, 1.0, 1e-12);
        EXPECT_NEAR(s2, 1.0, 1e-12);
    }
    // Identical graphs in one batch give identical rows.
    for (std::size_t c = 0; c < kLevel2; ++c) EXPECT_EQ(out.probs2.value().at(0, c), out.probs2.value().at(1, c));
    EXPECT_THROW(m.forward(tape, b, Tensor({1, kPooledScalars}), RunMode::Eval, nullptr), DimensionError);
}

TEST(Classifier, PermutationInvariantExactly) {
    ModeClassifier m(ClassifierConfig{}, "stats");
    auto s = classifier_sample(6);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto p = s;
        p.sample.graph = permuted(s.sample.graph, shuffled(10, seed));
        auto a = m.classify(s), b = m.classify(p);
        EXPECT_EQ(a.probs1, b.probs1);
        EXPECT_EQ(a.probs2, b.probs2);
    }
}

TEST(Classifier, DecodeIsHierarchical) {
    std::array<double, kLevel1> p1{0.1, 0.6, 0.2, 0.1};
    std::array<double, kLevel2> p2{};
    p2.fill(0.02);
    p2[0] = 0.5;  // most likely overall but outside family 1
    int inside = -1;
    for (int c = 0; c < static_cast<int>(kLevel2); ++c)
        if (level1_of(c) == 1 && inside < 0) inside = c;
    p2[inside] = 0.3;
    auto d = decode_prediction(p1.data(), p2.data(), 0.15);
    EXPECT_EQ(d.level1, 1);
    EXPECT_EQ(d.level2, inside);
    EXPECT_FALSE(d.hybrid);
    p2[inside] = 0.4;
    EXPECT_TRUE(decode_prediction(p1.data(), p2.data(), 0.15).hybrid);
}

TEST(Classifier, EveryParameterReceivesGradient) {
    ModeClassifier m(ClassifierConfig{}, "stats");
    auto s1 = classifier_sample(7), s2 = classifier_sample(8);
    const GraphBatch b = make_batch({&s1.sample.graph, &s2.sample.graph});
    Tensor sc({2, kPooledScalars});
    for (std::size_t k = 0; k < kPooledScalars; ++k) {
        sc.at(0, k) = s1.sample.scalars[k];
        sc.at(1, k) = s2.sample.scalars[k];
    }
    m.params().zero_grad();
    Tape tape;
    std::mt19937_64 rng(1);
    auto out = m.forward(tape, b, sc, RunMode::Train, &rng);
    tape.backward(ops::add(probe_loss(tape, out.logits1, 1), probe_loss(tape, out.logits2, 2)));
    for (std::size_t i = 0; i < m.params().size(); ++i) {
        const auto& p = m.params()[i];
        double mx = 0.0;
        for (double g : p.grad.storage()) mx = std::max(mx, std::abs(g));
        EXPECT_GT(mx, 0.0) << p.name;
    }
}

TEST(Classifier, McDropoutPassesDifferAndZeroRateIsExact) {
    auto s = classifier_sample(9);
    ModeClassifier m(ClassifierConfig{}, "stats");
    std::mt19937_64 rng(4);
    auto a = m.classify(s, RunMode::McDropout, &rng), b = m.classify(s, RunMode::McDropout, &rng);
    EXPECT_NE(a.probs2, b.probs2);
    EXPECT_THROW(m.classify(s, RunMode::McDropout, nullptr), StateError);

    ClassifierConfig c0;
    c0.dropout = 0.0;
    ModeClassifier z(c0, "stats");
    auto ref = z.classify(s, RunMode::Eval);
    for (int t = 0; t < 30; ++t) EXPECT_EQ(z.classify(s, RunMode::McDropout, &rng).probs2, ref.probs2);
}

TEST(Classifier, EvalIsDeterministic) {
    auto s = classifier_sample(10);
    ModeClassifier m1(ClassifierConfig{}, "stats"), m2(ClassifierConfig{}, "stats");
    EXPECT_EQ(m1.classify(s).probs2, m1.classify(s).probs2);
    EXPECT_EQ(m1.classify(s).probs2, m2.classify(s).probs2);
    ClassifierConfig other;
    other.seed = 2;
    EXPECT_NE(ModeClassifier(other, "stats").classify(s).probs2, m1.classify(s).probs2);
}

TEST(Classifier, ConfigJsonRoundTripRejectsUnknownKeys) {
    ClassifierConfig c;
    c.heads = 3;
    c.aggregator = Aggregator::Mean;
    auto back = classifier_config_from_json(to_json(c));
    EXPECT_EQ(back.heads, 3u);
    EXPECT_EQ(back.aggregator, Aggregator::Mean);
    auto j = to_json(c);
    j["width"] = 3;
    EXPECT_THROW(classifier_config_from_json(j), ConfigError);
    EXPECT_THROW(classifier_config_from_json(nlohmann::json{{"aggregator", "max"}}), ConfigError);
    EXPECT_THROW(classifier_config_from_json(nlohmann::json{{"dropout", 1.0}}), ConfigError);
}

TEST(AeroNet, OutputShapeAndDeterministicEval) {
    const auto g = random_graph(40, 300, kAeroNodeFeatures, kAeroEdgeFeatures, 11);
    const GraphBatch b = make_batch({&g});
    AeroGraphNetLite net(small_aero());
    Tensor y = net.predict(b);
    EXPECT_EQ(y.shape(), (Shape{40, 4}));
    EXPECT_EQ(net.predict(b).storage(), y.storage());
    AeroGraphNetLite twin(small_aero());
    EXPECT_EQ(twin.predict(b).storage(), y.storage());
}

TEST(AeroNet, PermutationEquivariantExactly) {
    const auto g = random_graph(40, 300, kAeroNodeFeatures, kAeroEdgeFeatures, 12);
    AeroGraphNetLite net(small_aero());
    const Tensor y = net.predict(make_batch({&g}));
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const auto perm = shuffled(40, seed);
        const auto pg = permuted(g, perm);
        const Tensor yp = net.predict(make_batch({&pg}));
        for (std::size_t i = 0; i < 40; ++i)
            for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(yp.at(i, c), y.at(perm[i], c));
    }
}

TEST(AeroNet, EveryParameterReceivesGradient) {
    const auto g = random_graph(30, 200, kAeroNodeFeatures, kAeroEdgeFeatures, 13);
    const GraphBatch b = make_batch({&g});
    for (auto agg : {Aggregator::Attention, Aggregator::Mean, Aggregator::None}) {
        auto cfg = small_aero();
        cfg.aggregator = agg;
        cfg.ffn = 8;
        AeroGraphNetLite net(cfg);
        net.params().zero_grad();
        Tape tape;
        auto out = net.forward(tape, b, RunMode::Eval, nullptr);
        tape.backward(probe_loss(tape, out.y, 3));
        for (std::size_t i = 0; i < net.params().size(); ++i) {
            const auto& p = net.params()[i];
            double mx = 0.0;
            for (double v : p.grad.storage()) mx = std::max(mx, std::abs(v));
            EXPECT_GT(mx, 0.0) << aggregator_name(agg) << " " << p.name;
        }
    }
}

TEST(AeroNet, McDropoutVariance) {
    const auto g = random_graph(20, 100, kAeroNodeFeatures, kAeroEdgeFeatures, 14);
    const GraphBatch b = make_batch({&g});
    auto cfg = small_aero();
    cfg.dropout = 0.2;
    AeroGraphNetLite net(cfg);
    std::mt19937_64 rng(2);
    EXPECT_NE(net.predict(b, RunMode::McDropout, &rng).storage(), net.predict(b, RunMode::McDropout, &rng).storage());
    EXPECT_EQ(net.predict(b).storage(), net.predict(b).storage());

    AeroGraphNetLite zero(small_aero());
    const Tensor ref = zero.predict(b);
    for (int t = 0; t < 30; ++t) EXPECT_EQ(zero.predict(b, RunMode::McDropout, &rng).storage(), ref.storage());
}

TEST(AeroNet, RejectsWrongFeatureWidths) {
    const auto g = random_graph(10, 30, 7, kAeroEdgeFeatures, 15);
    AeroGraphNetLite net(small_aero());
    EXPECT_THROW(net.predict(make_batch({&g})), ContractError);
    const auto h = random_graph(10, 30, kAeroNodeFeatures, 3, 15);
    EXPECT_THROW(net.predict(make_batch({&h})), ContractError);
}

TEST(AeroNet, FullWidthsParameterCount) {
    const AeroNetConfig c = aero_full_config();
    EXPECT_EQ(c.hidden, 128u);
    EXPECT_EQ(c.layers, 6u);
    EXPECT_EQ(c.heads, 4u);
    const double count = static_cast<double>(AeroGraphNetLite(c).parameter_count());
    EXPECT_GT(count, 1.5e6);
    EXPECT_LT(count, 2.5e6);
}

TEST(AeroNet, ConfigJsonRoundTrip) {
    auto c = small_aero();
    c.ffn = 12;
    auto back = aero_net_config_from_json(to_json(c));
    EXPECT_EQ(back.hidden, 16u);
    EXPECT_EQ(back.ffn, 12u);
    auto j = to_json(c);
    j["depth"] = 2;
    EXPECT_THROW(aero_net_config_from_json(j), ConfigError);
    EXPECT_THROW(aero_net_config_from_json(nlohmann::json{{"edge_encoder_layers", 3}}), ConfigError);
}

TEST(Checkpoint, RoundTripReproducesPredictions) {
    const auto dir = std::filesystem::temp_directory_path() / "enggraph_ckpt_rt";
    std::filesystem::remove_all(dir);
    const auto g = random_graph(25, 120, kAeroNodeFeatures, kAeroEdgeFeatures, 16);
    const GraphBatch b = make_batch({&g});
    auto cfg = small_aero();
    cfg.seed = 9;
    AeroGraphNetLite net(cfg);
    save_aero_net(net, dir / "aero", nlohmann::json{{"note", "x"}});
    AeroGraphNetLite back = load_aero_net(dir / "aero");
    EXPECT_EQ(back.predict(b).storage(), net.predict(b).storage());
    EXPECT_EQ(back.config().seed, 9u);

    auto manifest = nlohmann::json::parse(std::ifstream(dir / "aero" / "manifest.json"));
    EXPECT_EQ(manifest["parameter_count"].get<std::size_t>(), net.parameter_count());
    EXPECT_EQ(manifest["architecture"]["extra"]["note"], "x");
    std::size_t offset = 0;
    for (const auto& t : manifest["tensors"]) {
        EXPECT_EQ(t["offset"].get<std::size_t>(), offset);
        offset += 8 * t["count"].get<std::size_t>();
    }
    EXPECT_EQ(std::filesystem::file_size(dir / "aero" / "params.bin"), offset);

    ModeClassifier m(ClassifierConfig{}, "tag-1");
    save_classifier(m, dir / "cls", nlohmann::json::object());
    ModeClassifier mb = load_classifier(dir / "cls");
    EXPECT_EQ(mb.stats_tag(), "tag-1");
    auto s = classifier_sample(1, "tag-1");
    EXPECT_EQ(mb.classify(s).probs2, m.classify(s).probs2);
    std::filesystem::remove_all(dir);
}

TEST(Checkpoint, BlobIsLittleEndianFloat64) {
    const auto dir = std::filesystem::temp_directory_path() / "enggraph_ckpt_le";
    std::filesystem::remove_all(dir);
    ParamSet ps;
    ps.add("a", Tensor::matrix(1, 2, {1.0, -2.5}));
    write_checkpoint(dir, nlohmann::json{{"kind", "test"}}, ps);
    std::ifstream in(dir / "params.bin", std::ios::binary);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    ASSERT_EQ(bytes.size(), 16u);
    // 1.0 = 0x3FF0000000000000, -2.5 = 0xC004000000000000
    EXPECT_EQ(bytes[7], 0x3F);
    EXPECT_EQ(bytes[6], 0xF0);
    EXPECT_EQ(bytes[15], 0xC0);
    EXPECT_EQ(bytes[14], 0x04);
    EXPECT_EQ(read_checkpoint_architecture(dir)["kind"], "test");
    std::filesystem::remove_all(dir);
}

TEST(Checkpoint, DetectsCorruptionAndMismatch) {
    const auto dir = std::filesystem::temp_directory_path() / "enggraph_ckpt_bad";
    std::filesystem::remove_all(dir);
    ParamSet ps;
    ps.add("a", Tensor::matrix(1, 2, {1.0, 2.0}));
    write_checkpoint(dir, nlohmann::json::object(), ps);
    ParamSet other;
    other.add("b", Tensor({1, 2}));
    EXPECT_ANY_THROW(read_checkpoint_params(dir, other));
    ParamSet shape;
    shape.add("a", Tensor({2, 1}));
    EXPECT_ANY_THROW(read_checkpoint_params(dir, shape));
    {
        std::fstream f(dir / "params.bin", std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(3);
        f.put('\x7f');
    }
    ParamSet same;
    same.add("a", Tensor({1, 2}));
    EXPECT_ANY_THROW(read_checkpoint_params(dir, same));
    std::filesystem::remove_all(dir);
}
