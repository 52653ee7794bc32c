#include "cbmaudit/attribution/gradients.hpp"
#include "cbmaudit/attribution/lrp.hpp"
#include "cbmaudit/attribution/saliency.hpp"
#include "cbmaudit/core/model.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace cbmaudit;
using namespace cbmaudit::core;
using namespace cbmaudit::attribution;
namespace fs = std::filesystem;

namespace {

Tensor<double> random_tensor(Shape s, std::uint64_t seed, double lo = -1, double hi = 1)
{
    Rng rng(seed);
    Tensor<double> t(s);
    for (auto& v : t.values()) v = uniform(rng, lo, hi);
    return t;
}

/// Flatten -> Linear(12 -> 2) -> Sigmoid on a 3x2x2 input.
Network<double> linear_encoder(bool bias)
{
    Network<double> net({Flatten{}, Linear{12, 2, bias}, Sigmoid{}}, Role::encoder);
    net.layers()[1].params[0] = random_tensor(Shape{2, 12, 1, 1}, 21);
    if (bias) net.layers()[1].params[1] = random_tensor(Shape{2, 1, 1, 1}, 22);
    return net;
}

Network<double> relu_encoder()
{
    Network<double> net({Conv2d{3, 4, 3, 1, 1, false}, ReLU{}, MaxPool2d{2, 2}, Conv2d{4, 4, 3, 1, 1, false}, ReLU{},
                         Flatten{}, Linear{64, 3, false}, Sigmoid{}},
                        Role::encoder);
    net.initialize(31);
    return net;
}

} // namespace

TEST(Lrp, LinearLayerClosedForm)
{
    const auto net = linear_encoder(false);
    const auto x = random_tensor(Shape{1, 3, 2, 2}, 1);
    const auto map = lrp(net, x, 1, RuleAssignment::uniform(net, LrpRule::zero()));
    ASSERT_EQ(map.values.size(), 12u);
    const auto& w = net.layers()[1].params[0];
    for (std::size_t i = 0; i < 12; ++i) EXPECT_NEAR(map.values[i], x[i] * w[12 + i], 1e-12);
    EXPECT_EQ(map.target, 1);
}

TEST(Lrp, EpsilonAbsorbsPartOfTheScore)
{
    const auto net = linear_encoder(false);
    const auto x = random_tensor(Shape{1, 3, 2, 2}, 2);
    const double eps = 0.3;
    const double s = target_score(net, x, 0);
    const auto map = lrp(net, x, 0, RuleAssignment::uniform(net, LrpRule::eps(eps)));
    EXPECT_NEAR(map.total(), s * s / (s + (s >= 0 ? eps : -eps)), 1e-12);
}

TEST(Lrp, ZeroRuleConservesOnBiasFreeReluNet)
{
    const auto net = relu_encoder();
    const auto x = random_tensor(Shape{1, 3, 8, 8}, 3, 0, 1);
    for (std::size_t t = 0; t < 3; ++t) {
        const auto map = lrp(net, x, t, RuleAssignment::uniform(net, LrpRule::zero()));
        EXPECT_NEAR(map.total(), target_score(net, x, t), 1e-9) << "target " << t;
    }
}

TEST(Lrp, AlphaBetaOnPositiveInputKeepsTheSign)
{
    const auto net = relu_encoder();
    const auto x = random_tensor(Shape{1, 3, 8, 8}, 4, 0, 1);
    for (std::size_t t = 0; t < 3; ++t) {
        const double s = target_score(net, x, t);
        const auto map = lrp(net, x, t, RuleAssignment::uniform(net, LrpRule::alpha_beta(1, 0)));
        for (double v : map.values) EXPECT_GE(v * s, -1e-12);
        EXPECT_NEAR(map.total(), s, 1e-9 + 1e-9 * std::abs(s));
    }
}

TEST(Lrp, BatchNormIsFoldedIntoTheConvolution)
{
    Network<double> with_bn({Conv2d{3, 2, 3, 1, 1, false}, BatchNorm2d{2}, ReLU{}, Flatten{}, Linear{8, 1, false}, Sigmoid{}},
                            Role::encoder);
    with_bn.initialize(5);
    auto& bn = with_bn.layers()[1];
    bn.params[0].values() = {2.0, 0.5};
    bn.buffers[0].values() = {0.0, 0.0};
    bn.buffers[1].values() = {1.0 - 1e-5, 1.0 - 1e-5};

    // same network with the scale multiplied into the weights
    Network<double> folded({Conv2d{3, 2, 3, 1, 1, false}, ReLU{}, Flatten{}, Linear{8, 1, false}, Sigmoid{}}, Role::encoder);
    folded.layers()[0].params[0] = with_bn.layers()[0].params[0];
    for (std::size_t i = 0; i < 27; ++i) folded.layers()[0].params[0][i] *= 2.0;
    for (std::size_t i = 27; i < 54; ++i) folded.layers()[0].params[0][i] *= 0.5;
    folded.layers()[3].params[0] = with_bn.layers()[4].params[0];

    const auto x = random_tensor(Shape{1, 3, 2, 2}, 6, 0, 1);
    const auto rules = RuleAssignment::uniform(with_bn, LrpRule::zero());
    const auto a = lrp(with_bn, x, 0, rules), b = lrp(folded, x, 0, rules);
    for (std::size_t i = 0; i < a.values.size(); ++i) EXPECT_NEAR(a.values[i], b.values[i], 1e-9);
}

TEST(Lrp, DefaultRulesCoverWeightedLayers)
{
    EncoderConfig enc;
    enc.image_size = 16;
    enc.blocks = {{4, true}, {4, true}, {4, true}, {4, true}, {4, true}};
    enc.concepts = 3;
    Network<float> net(encoder_specs(enc), Role::encoder);
    const auto rules = RuleAssignment::default_for(net);
    ASSERT_EQ(rules.rules.size(), 6u);
    for (int i = 0; i < 4; ++i) EXPECT_EQ(rules.rules[static_cast<std::size_t>(i)].kind, LrpRule::Kind::alpha_beta);
    EXPECT_TRUE(rules.rules[4].relative);
    EXPECT_EQ(rules.rules[5].kind, LrpRule::Kind::zero);
    EXPECT_THROW(LrpRule::alpha_beta(2, 0), Error);

    RuleAssignment short_rules;
    short_rules.rules = {LrpRule::zero()};
    net.initialize(1);
    EXPECT_THROW(lrp(net, Tensor<float>(Shape{1, 3, 16, 16}, 0.5f), 0, short_rules), Error);
}

TEST(IntegratedGradients, ExactOnLinearScores)
{
    const auto net = linear_encoder(true);
    const auto x = random_tensor(Shape{1, 3, 2, 2}, 7);
    const auto base = random_tensor(Shape{1, 3, 2, 2}, 8);
    const auto map = integrated_gradients(net, x, 1, base, IgConfig{5, 2});
    // completeness: total equals score(x) - score(baseline)
    EXPECT_NEAR(map.total(), target_score(net, x, 1) - target_score(net, base, 1), 1e-12);
    const auto& w = net.layers()[1].params[0];
    for (std::size_t i = 0; i < 12; ++i) EXPECT_NEAR(map.values[i], (x[i] - base[i]) * w[12 + i], 1e-12);
}

TEST(IntegratedGradients, CompletenessImprovesWithSteps)
{
    const auto net = relu_encoder();
    const auto x = random_tensor(Shape{1, 3, 8, 8}, 9, 0, 1);
    const double gap = target_score(net, x, 0) - target_score(net, Tensor<double>(x.shape()), 0);
    const double coarse = std::abs(integrated_gradients(net, x, 0, {}, IgConfig{4, 4}).total() - gap);
    const double fine = std::abs(integrated_gradients(net, x, 0, {}, IgConfig{256, 64}).total() - gap);
    EXPECT_LE(fine, coarse + 1e-12);
    EXPECT_LT(fine, 0.02 * std::abs(gap) + 1e-9);
}

TEST(IntegratedGradients, ChunkingDoesNotChangeTheResult)
{
    const auto net = relu_encoder();
    const auto x = random_tensor(Shape{1, 3, 8, 8}, 10, 0, 1);
    const auto a = integrated_gradients(net, x, 2, {}, IgConfig{12, 1});
    const auto b = integrated_gradients(net, x, 2, {}, IgConfig{12, 5});
    for (std::size_t i = 0; i < a.values.size(); ++i) EXPECT_NEAR(a.values[i], b.values[i], 1e-12);
}

TEST(NoiseTunnel, ZeroNoiseReproducesTheBase)
{
    const auto net = relu_encoder();
    const auto x = random_tensor(Shape{1, 3, 8, 8}, 11, 0, 1);
    const BaseMethod<double> base = [&](const Tensor<double>& xs) { return integrated_gradients(net, xs, 0, {}, IgConfig{8, 8}); };
    const auto plain = base(x);
    Rng rng(1);
    const auto sg = noise_tunnel(base, x, NoiseTunnelConfig{3, 0.0, TunnelMode::smoothgrad}, rng);
    const auto sq = noise_tunnel(base, x, NoiseTunnelConfig{3, 0.0, TunnelMode::smoothgrad_squared}, rng);
    EXPECT_EQ(sg.method, "ig+smoothgrad");
    EXPECT_EQ(sq.method, "ig+smoothgrad_sq");
    for (std::size_t i = 0; i < plain.values.size(); ++i) {
        EXPECT_NEAR(sg.values[i], plain.values[i], 1e-12);
        EXPECT_NEAR(sq.values[i], plain.values[i] * plain.values[i], 1e-12);
    }
}

TEST(NoiseTunnel, SeededNoiseIsReproducible)
{
    const auto net = relu_encoder();
    const auto x = random_tensor(Shape{1, 3, 8, 8}, 12, 0, 1);
    const BaseMethod<double> base = [&](const Tensor<double>& xs) { return integrated_gradients(net, xs, 1, {}, IgConfig{4, 4}); };
    Rng a(99), b(99);
    const NoiseTunnelConfig cfg{4, 0.1, TunnelMode::smoothgrad};
    EXPECT_EQ(noise_tunnel(base, x, cfg, a).values, noise_tunnel(base, x, cfg, b).values);
}

TEST(GradCam, CombineMatchesHandComputation)
{
    // two channels on a 1x2 map
    const std::vector<double> act{1, 2, 3, 4}, grad{1, 1, -1, 0};
    const auto cam = grad_cam_combine(act, grad, 2, 1, 2);
    // weights 1 and -0.5: [1 - 1.5, 2 - 2] -> relu -> [0, 0]
    EXPECT_EQ(cam, (std::vector<double>{0, 0}));
    const auto cam2 = grad_cam_combine(act, std::vector<double>{1, 1, 0.5, 0.5}, 2, 1, 2);
    EXPECT_NEAR(cam2[0], 2.5, 1e-12);
    EXPECT_NEAR(cam2[1], 4.0, 1e-12);
}

TEST(GradCam, ResizeKeepsConstantsAndShape)
{
    const std::vector<double> src(6, 3.5);
    const auto up = resize_bilinear(src, 2, 3, 8, 12);
    ASSERT_EQ(up.size(), 96u);
    for (double v : up) EXPECT_DOUBLE_EQ(v, 3.5);
    const auto same = resize_bilinear(std::vector<double>{1, 2, 3, 4}, 2, 2, 2, 2);
    EXPECT_EQ(same, (std::vector<double>{1, 2, 3, 4}));
}

TEST(GradCam, MapHasInputSizeAndIsNonNegative)
{
    const auto net = relu_encoder();
    const auto x = random_tensor(Shape{1, 3, 8, 8}, 13, 0, 1);
    const auto map = grad_cam(net, x, 0);
    EXPECT_EQ(map.channels, 1u);
    EXPECT_EQ(map.height, 8u);
    EXPECT_EQ(map.width, 8u);
    for (double v : map.values) EXPECT_GE(v, 0.0);
    EXPECT_THROW(grad_cam(net, x, 0, std::size_t{1}), Error);
}

TEST(Saliency, ZeroMapLeavesGrayImage)
{
    scene::RgbImage img(4, 4);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<std::uint8_t>(i);
    AttributionMap zero{1, 4, 4, std::vector<double>(16, 0.0), 0, "lrp"};
    const auto out = saliency_overlay(zero, img);
    for (int p = 0; p < 16; ++p) {
        const auto* px = &img.pixels[static_cast<std::size_t>(p) * 3];
        const auto g = static_cast<std::uint8_t>(std::lround(0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]));
        for (int c = 0; c < 3; ++c) EXPECT_EQ(out.pixels[static_cast<std::size_t>(p) * 3 + c], g);
    }
}

TEST(Saliency, SignsMapToRedAndBlue)
{
    scene::RgbImage img(2, 1);
    AttributionMap m{1, 1, 2, {5.0, -5.0}, 0, "lrp"};
    const auto out = saliency_overlay(m, img, SaliencyStyle{100.0, 1.0});
    EXPECT_EQ(out.at(0, 0)[0], 255);
    EXPECT_EQ(out.at(0, 0)[2], 0);
    EXPECT_EQ(out.at(1, 0)[2], 255);
    EXPECT_EQ(out.at(1, 0)[0], 0);
    EXPECT_DOUBLE_EQ(abs_percentile({1, -4, 2, 3}, 50), 2.0);
}

TEST(Saliency, ContactSheetGeometry)
{
    std::vector<scene::RgbImage> tiles(5, scene::RgbImage(3, 2));
    const auto sheet = contact_sheet(tiles, 2, 1);
    EXPECT_EQ(sheet.width, 2 * 3 + 3);
    EXPECT_EQ(sheet.height, 3 * 2 + 4);
    tiles.push_back(scene::RgbImage(4, 2));
    EXPECT_THROW(contact_sheet(tiles, 2), Error);
}

TEST(RawMap, RoundTrip)
{
    const auto dir = fs::temp_directory_path() / "cbmaudit_test_raw";
    fs::remove_all(dir);
    AttributionMap m{2, 2, 3, {}, 4, "ig"};
    for (int i = 0; i < 12; ++i) m.values.push_back(0.25 * i - 1);
    write_raw_map(m, dir / "a", 7);
    const auto back = read_raw_map(dir / "a.f32");
    const auto summed = m.summed();
    ASSERT_EQ(back.size(), summed.size());
    for (std::size_t i = 0; i < summed.size(); ++i) EXPECT_FLOAT_EQ(back[i], static_cast<float>(summed[i]));
    EXPECT_TRUE(fs::exists(dir / "a.json"));
}
