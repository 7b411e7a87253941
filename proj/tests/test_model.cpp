#include <cmath>
#include <cstring>
#include <vector>

#include <gtest/gtest.h>

#include "lcnn/gradcheck.hpp"
#include "lcnn/network.hpp"
#include "oracles/brute_force.hpp"

using namespace lcnn;

namespace {

std::size_t count_kind(const ModelSpec& spec, LayerKind kind) {
    std::size_t n = 0;
    for (const auto& l : spec.layers) n += l.kind == kind;
    return n;
}

// conv_relu(2 filters 3x3 pad 1) -> conv_relu(2 filters 3x3 pad 1) -> flatten -> dense(3)
ModelSpec toy_spec() {
    ModelSpec spec;
    spec.name = "toy";
    spec.input_shape = {1, 4, 4};
    spec.num_classes = 3;
    spec.layers = {LayerSpec::conv(2, 3, 1, 1), LayerSpec::conv(2, 3, 1, 1), LayerSpec::flat(), LayerSpec::linear(3)};
    return spec;
}

void copy_stream_a_to_b(ModelInstance& m) {
    for (const auto& p : m.parameters()) {
        if (p.name.starts_with("a.")) {
            auto dst = m.param("b." + p.name.substr(2)).mutable_values();
            std::copy(p.tensor.values().begin(), p.tensor.values().end(), dst.begin());
        }
    }
}

bool bit_equal(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() && std::memcmp(a.values().data(), b.values().data(), a.numel() * sizeof(double)) == 0;
}

} // namespace

TEST(Builders, AlexNetFullWidthPropagatesAndProducesLogits) {
    auto spec = build_mini_alexnet(10, 1.0);
    EXPECT_EQ(count_kind(spec, LayerKind::conv_relu), 5u);
    EXPECT_EQ(count_kind(spec, LayerKind::maxpool), 3u);
    EXPECT_EQ(count_kind(spec, LayerKind::dense) + count_kind(spec, LayerKind::dense_relu), 3u);
    EXPECT_EQ(count_kind(spec, LayerKind::dropout), 2u);
    EXPECT_NO_THROW(propagate_shapes(spec));
    ModelInstance m(spec, 1);
    Rng rng(1);
    auto logits = forward(m, {oracle::random_tensor(rng, {2, 3, 32, 32}, 0, 1)});
    EXPECT_EQ(logits.shape(), (Shape{2, 10}));
}

TEST(Builders, AlexNetFirstConvParameterCount) {
    auto trace = propagate_shapes(build_mini_alexnet(10, 1.0));
    ASSERT_EQ(trace.params[0].shape, (Shape{96, 3, 11, 11}));
    EXPECT_EQ(shape_numel(trace.params[0].shape) + shape_numel(trace.params[1].shape), 34944u);
}

TEST(Builders, AlexNetWidthScaleRoundsUp) {
    const std::size_t full[] = {96, 256, 384, 384, 256};
    for (double ws : {0.25, 0.1, 0.3}) {
        auto spec = build_mini_alexnet(10, ws);
        std::size_t i = 0;
        for (const auto& l : spec.layers) {
            if (l.kind == LayerKind::conv_relu) {
                EXPECT_EQ(l.filters, static_cast<std::size_t>(std::ceil(ws * full[i] - 1e-9))) << ws;
                ++i;
            }
        }
    }
    EXPECT_THROW(build_mini_alexnet(10, 0.0), ConfigError);
}

TEST(Builders, AlexNetOtherInputSizes) {
    for (std::size_t side : {96u, 224u}) {
        Shape in{side == 96 ? 1u : 3u, side, side};
        EXPECT_NO_THROW(propagate_shapes(build_mini_alexnet(5, 0.25, in))) << side;
    }
}

TEST(Builders, VggConvCounts) {
    EXPECT_EQ(count_kind(build_mini_vgg(16, 10, 0.25), LayerKind::conv_relu), 13u);
    EXPECT_EQ(count_kind(build_mini_vgg(19, 10, 0.25), LayerKind::conv_relu), 16u);
    for (int d : {16, 19}) {
        auto trace = propagate_shapes(build_mini_vgg(d, 10, 0.25));
        EXPECT_EQ(trace.trunk_shapes.back(), (Shape{128, 1, 1}));
    }
    EXPECT_THROW(build_mini_vgg(11, 10, 0.25), ConfigError);
}

TEST(Builders, ResnetBlockCounts) {
    EXPECT_EQ(count_kind(build_mini_resnet(18, 10, 0.25), LayerKind::residual_block), 8u);
    EXPECT_EQ(count_kind(build_mini_resnet(34, 10, 0.25), LayerKind::residual_block), 16u);
    EXPECT_THROW(build_mini_resnet(50, 10, 0.25), ConfigError);
}

TEST(Builders, ResidualBlockRequiresMatchingChannels) {
    ModelSpec spec;
    spec.name = "bad";
    spec.input_shape = {3, 8, 8};
    spec.num_classes = 2;
    spec.layers = {LayerSpec::residual(4), LayerSpec::flat(), LayerSpec::linear(2)};
    EXPECT_THROW(propagate_shapes(spec), ConfigError);
}

namespace {

ModelSpec one_block_spec() {
    ModelSpec spec;
    spec.name = "oneblock";
    spec.input_shape = {2, 4, 4};
    spec.num_classes = 2;
    spec.layers = {LayerSpec::residual(2), LayerSpec::avg_pool(2, 2), LayerSpec::flat(), LayerSpec::linear(2)};
    return spec;
}

} // namespace

TEST(ResidualModel, ZeroBranchGivesReluOfInput) {
    ModelInstance m(one_block_spec(), 3);
    for (auto name : {"trunk.0.residual_block.conv1.weight", "trunk.0.residual_block.conv1.bias",
                      "trunk.0.residual_block.conv2.weight", "trunk.0.residual_block.conv2.bias"}) {
        for (auto& v : m.param(name).mutable_values()) v = 0.0;
    }
    Rng rng(4);
    auto x = oracle::random_tensor(rng, {1, 2, 4, 4});
    std::vector<StreamPair> trace;
    std::vector<Tensor> in{x};
    forward(m, std::span<const Tensor>(in), Mode::eval, &trace);
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(trace[0].a[i], std::max(0.0, x[i]));
}

TEST(ResidualModel, GradientThroughBranchAndShortcut) {
    ModelInstance m(one_block_spec(), 5);
    Rng rng(6);
    auto x = oracle::random_tensor(rng, {2, 2, 4, 4});
    std::vector<std::size_t> labels{0, 1};
    auto loss_of_input = [&](const Tensor& v) { return softmax_cross_entropy(forward(m, {v}), labels); };
    EXPECT_LT(grad_check(loss_of_input, x).max_relative_error, 1e-4);
    const std::string w = "trunk.0.residual_block.conv2.weight";
    const Tensor saved = m.param(w);
    auto loss_of_weight = [&](const Tensor& v) {
        m.param(w) = v;
        auto l = softmax_cross_entropy(forward(m, {x}), labels);
        m.param(w) = saved;
        return l;
    };
    EXPECT_LT(grad_check(loss_of_weight, saved).max_relative_error, 1e-4);
}

TEST(Multistream, LatticeAlexNetHasFiveLBlocks) {
    auto lattice = to_multistream(build_mini_alexnet(10, 0.25), Topology::multistream_lattice, FusionOp(FusionKind::average));
    EXPECT_EQ(count_l_blocks(lattice), 5u);
    auto late = to_multistream(build_mini_alexnet(10, 0.25), Topology::multistream_late);
    EXPECT_EQ(count_l_blocks(late), 0u);
}

TEST(Multistream, FusionAddsNoParametersAndTrunkDoubles) {
    for (auto base : {build_mini_alexnet(10, 0.25), build_mini_vgg(16, 10, 0.25), build_mini_resnet(18, 10, 0.25)}) {
        auto late = to_multistream(base, Topology::multistream_late);
        auto lattice = to_multistream(base, Topology::multistream_lattice, FusionOp(FusionKind::subtraction));
        EXPECT_EQ(count_params(lattice), count_params(late)) << base.name;
        EXPECT_EQ(count_trunk_params(late), 2 * count_trunk_params(base)) << base.name;
    }
}

TEST(Multistream, BaseIsNotMutatedAndBuildsAreRepeatable) {
    const auto base = build_mini_alexnet(10, 0.25);
    const auto copy = base;
    auto m1 = to_multistream(base, Topology::multistream_lattice, FusionOp(FusionKind::addition));
    auto m2 = to_multistream(base, Topology::multistream_lattice, FusionOp(FusionKind::addition));
    EXPECT_EQ(base, copy);
    EXPECT_EQ(m1, m2);
    EXPECT_THROW(to_multistream(m1, Topology::multistream_late), ConfigError);
}

TEST(Multistream, LatticeWithoutFusibleLayersIsRejected) {
    ModelSpec spec;
    spec.name = "poolonly";
    spec.input_shape = {1, 4, 4};
    spec.num_classes = 2;
    spec.layers = {LayerSpec::max_pool(2, 2), LayerSpec::flat(), LayerSpec::linear(2)};
    EXPECT_NO_THROW(to_multistream(spec, Topology::multistream_late));
    EXPECT_THROW(to_multistream(spec, Topology::multistream_lattice), ConfigError);
}

TEST(CountParams, ClosedForms) {
    ModelSpec d;
    d.name = "dense";
    d.input_shape = {4, 1, 1};
    d.num_classes = 3;
    d.layers = {LayerSpec::flat(), LayerSpec::linear(3)};
    EXPECT_EQ(count_params(d), 15u);

    ModelSpec c;
    c.name = "conv";
    c.input_shape = {3, 11, 11};
    c.num_classes = 96;
    c.layers = {LayerSpec::conv(96, 11), LayerSpec::flat()};
    EXPECT_EQ(count_params(c), 34944u);

    ModelSpec z;
    z.name = "free";
    z.input_shape = {2, 4, 4};
    z.num_classes = 8;
    z.layers = {LayerSpec::max_pool(2, 2), LayerSpec::avg_pool(1, 1), LayerSpec::dropout_layer(0.3), LayerSpec::flat()};
    EXPECT_EQ(count_params(z), 0u);

    c.layers[0].kernel = 13;
    EXPECT_THROW(count_params(c), ConfigError);
}

TEST(Forward, HandComputedSingleStreamLogits) {
    ModelSpec spec;
    spec.name = "hand";
    spec.input_shape = {1, 2, 2};
    spec.num_classes = 2;
    spec.layers = {LayerSpec::conv(1, 1), LayerSpec::flat(), LayerSpec::linear(2)};
    ModelInstance m(spec, 0);
    m.param("trunk.0.conv_relu.weight").mutable_values()[0] = 2.0;
    m.param("trunk.0.conv_relu.bias").mutable_values()[0] = -1.0;
    // rows are input features, columns are classes
    const double w[8] = {1, 0, 0, 1, 1, 1, -1, 2};
    std::copy(w, w + 8, m.param("head.2.dense.weight").mutable_values().begin());
    m.param("head.2.dense.bias").mutable_values()[0] = 0.5;
    m.param("head.2.dense.bias").mutable_values()[1] = -0.5;
    // relu(2x - 1) on [0, 1, 0.25, 2] = [0, 1, 0, 3]
    auto logits = forward(m, {Tensor(Shape{1, 1, 2, 2}, {0, 1, 0.25, 2})});
    // class 0: 0*1 + 1*0 + 0*1 + 3*(-1) + 0.5 = -2.5 ; class 1: 0 + 1 + 0 + 6 - 0.5 = 6.5
    EXPECT_DOUBLE_EQ(logits[0], -2.5);
    EXPECT_DOUBLE_EQ(logits[1], 6.5);
}

TEST(Forward, SubtractionLatticeWithMirroredStreamsAnnihilates) {
    auto spec = to_multistream(toy_spec(), Topology::multistream_lattice, FusionOp(FusionKind::subtraction));
    ModelInstance m(spec, 9);
    copy_stream_a_to_b(m);
    Rng rng(10);
    auto x = oracle::random_tensor(rng, {2, 1, 4, 4}, 0, 1);
    std::vector<StreamPair> trace;
    std::vector<Tensor> in{x, x};
    auto logits = forward(m, std::span<const Tensor>(in), Mode::eval, &trace);
    ASSERT_EQ(trace.size(), 2u);
    for (const auto& pair : trace) {
        for (double v : pair.a.values()) EXPECT_EQ(v, 0.0);
        for (double v : pair.b.values()) EXPECT_EQ(v, 0.0);
    }
    // zero features: logits are the head bias
    const auto bias = m.param("head.3.dense.bias").values();
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(logits[n * 3 + k], bias[k]);
}

TEST(Forward, CommutativeLatticeKeepsMirroredTrunksIdentical) {
    for (auto kind : {FusionKind::average, FusionKind::addition}) {
        auto spec = to_multistream(build_mini_alexnet(2, 0.1), Topology::multistream_lattice, FusionOp(kind));
        ModelInstance m(spec, 11);
        copy_stream_a_to_b(m);
        Rng rng(12);
        auto x = oracle::random_tensor(rng, {2, 3, 32, 32}, 0, 1);
        std::vector<StreamPair> trace;
        std::vector<Tensor> in{x, x};
        forward(m, std::span<const Tensor>(in), Mode::eval, &trace);
        for (const auto& pair : trace) EXPECT_TRUE(bit_equal(pair.a, pair.b));
    }
}

TEST(Forward, EvalIsDeterministicAndBatchIndependent) {
    auto spec = to_multistream(build_mini_alexnet(4, 0.1), Topology::multistream_lattice, FusionOp(FusionKind::average));
    ModelInstance m(spec, 13);
    Rng rng(14);
    auto x = oracle::random_tensor(rng, {3, 3, 32, 32}, 0, 1);
    auto y = oracle::random_tensor(rng, {3, 3, 32, 32}, 0, 1);
    std::vector<Tensor> in{x, y};
    auto l1 = forward(m, std::span<const Tensor>(in));
    auto l2 = forward(m, std::span<const Tensor>(in));
    EXPECT_TRUE(bit_equal(l1, l2));
    EXPECT_EQ(l1.shape(), (Shape{3, 4}));
    std::vector<Tensor> one{Tensor(Shape{1, 3, 32, 32}, {x.values().begin(), x.values().begin() + 3072}),
                            Tensor(Shape{1, 3, 32, 32}, {y.values().begin(), y.values().begin() + 3072})};
    auto l3 = forward(m, std::span<const Tensor>(one));
    EXPECT_EQ(l3.shape(), (Shape{1, 4}));
    for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(l3[k], l1[k], 1e-12);
}

TEST(Forward, InputValidation) {
    auto spec = to_multistream(toy_spec(), Topology::multistream_late);
    ModelInstance m(spec, 1);
    Tensor x(Shape{1, 1, 4, 4});
    EXPECT_THROW(forward(m, {x}), InputError);
    EXPECT_THROW(forward(m, {x, Tensor(Shape{1, 1, 5, 5})}), InputError);
    EXPECT_NO_THROW(forward(m, {x, x}));
}

TEST(Forward, DropoutTrainAndEvalModes) {
    ModelSpec spec;
    spec.name = "drop";
    spec.input_shape = {1, 1, 8};
    spec.num_classes = 8;
    spec.layers = {LayerSpec::flat(), LayerSpec::dropout_layer(0.5), LayerSpec::linear(8)};
    ModelInstance m(spec, 2);
    auto w = m.param("head.2.dense.weight").mutable_values();
    for (std::size_t i = 0; i < 64; ++i) w[i] = (i % 9 == 0) ? 1.0 : 0.0;
    for (auto& b : m.param("head.2.dense.bias").mutable_values()) b = 0.0;
    Tensor x(Shape{1, 1, 1, 8}, std::vector<double>(8, 2.0));
    auto eval = forward(m, {x}, Mode::eval);
    for (double v : eval.values()) EXPECT_EQ(v, 1.0);
    auto train = forward(m, {x}, Mode::train);
    for (double v : train.values()) EXPECT_TRUE(v == 0.0 || v == 2.0);
}

TEST(ModelInstance, NamesAndInitAreStable) {
    auto spec = to_multistream(build_mini_resnet(18, 10, 0.1), Topology::multistream_lattice, FusionOp(FusionKind::average));
    ModelInstance a(spec, 42), b(spec, 42), c(spec, 43);
    ASSERT_EQ(a.parameters().size(), b.parameters().size());
    for (std::size_t i = 0; i < a.parameters().size(); ++i) {
        EXPECT_EQ(a.parameters()[i].name, b.parameters()[i].name);
        EXPECT_TRUE(bit_equal(a.parameters()[i].tensor, b.parameters()[i].tensor));
    }
    EXPECT_FALSE(bit_equal(a.parameters()[0].tensor, c.parameters()[0].tensor));
    EXPECT_EQ(a.parameter_count(), count_params(spec));
}

TEST(ModelInstance, InitWithinFanInBound) {
    auto spec = build_mini_alexnet(10, 0.25);
    ModelInstance m(spec, 7, InitScheme::fan_in_uniform);
    const auto trace = propagate_shapes(spec);
    for (std::size_t i = 0; i < trace.params.size(); ++i) {
        const double bound = std::sqrt(1.0 / static_cast<double>(trace.params[i].fan_in));
        for (double v : m.parameters()[i].tensor.values()) EXPECT_LE(std::abs(v), bound);
    }
}

TEST(ModelInstance, HeInitBoundsAndZeroBiases) {
    auto spec = build_mini_alexnet(10, 0.25);
    ModelInstance m(spec, 7);
    const auto trace = propagate_shapes(spec);
    for (std::size_t i = 0; i < trace.params.size(); ++i) {
        const auto& t = m.parameters()[i].tensor;
        const double bound = std::sqrt(6.0 / static_cast<double>(trace.params[i].fan_in));
        double sq = 0.0;
        for (double v : t.values()) {
            EXPECT_LE(std::abs(v), bound);
            sq += v * v;
        }
        if (t.shape().size() == 1) {
            EXPECT_EQ(sq, 0.0) << trace.params[i].name;
        } else if (t.numel() > 1000) {
            // uniform variance bound^2 / 3 = 2 / fan_in
            EXPECT_NEAR(sq / double(t.numel()) * double(trace.params[i].fan_in), 2.0, 0.15) << trace.params[i].name;
        }
    }
    EXPECT_EQ(parse_init_scheme("fan_in_uniform"), InitScheme::fan_in_uniform);
    EXPECT_THROW(parse_init_scheme("xavier"), ConfigError);
}

TEST(Serialization, RoundTripsEveryBackboneAndTopology) {
    std::vector<ModelSpec> bases{build_mini_alexnet(10, 0.25), build_mini_vgg(16, 10, 0.25), build_mini_vgg(19, 5, 1.0),
                                 build_mini_resnet(18, 10, 0.25), build_mini_resnet(34, 100, 0.5)};
    for (const auto& base : bases) {
        for (auto topo : {Topology::single, Topology::multistream_late, Topology::multistream_lattice}) {
            auto spec = topo == Topology::single ? base
                                                 : to_multistream(base, topo, FusionOp(FusionKind::log_compression, 1e-4));
            const auto text = to_json(spec).dump(2);
            auto back = model_from_json(nlohmann::json::parse(text));
            EXPECT_EQ(back, spec) << spec.name;
            EXPECT_EQ(to_json(back).dump(2), text);
        }
    }
    EXPECT_THROW(model_from_json(nlohmann::json::parse(R"({"name":"x"})")), ConfigError);
}
