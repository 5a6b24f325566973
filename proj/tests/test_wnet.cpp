#include "celltopo/wnet.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace celltopo;

namespace {

const Layer& layer_named(const Model& m, const std::string& name) {
  for (const Layer& l : m.layers)
    if (l.name == name) return l;
  throw std::out_of_range(name);
}

}  // namespace

TEST(NetConfig, DepthAndChannels) {
  EXPECT_EQ(NetConfig{}.depth(), 8);
  EXPECT_EQ(NetConfig::desk().depth(), 6);
  EXPECT_EQ(NetConfig{}.generator_layer_count(), 34);
  EXPECT_EQ(NetConfig::desk().generator_layer_count(), 26);
  NetConfig c;
  EXPECT_EQ(c.channels_at(0), 16);
  EXPECT_EQ(c.channels_at(3), 128);
  EXPECT_EQ(c.channels_at(4), 256);
  EXPECT_EQ(c.channels_at(8), 256);
  EXPECT_THROW((NetConfig{100, 16, 256, 4}.validate()), std::invalid_argument);
  EXPECT_THROW((NetConfig{64, 16, 8, 4}.validate()), std::invalid_argument);
  EXPECT_THROW(build_generator(NetConfig{96, 16, 256, 4}, 1), std::invalid_argument);
}

TEST(Generator, FullResolutionContract) {
  Model g = build_generator(NetConfig{}, 1);
  EXPECT_EQ(g.conv_layer_count(), 34);
  EXPECT_EQ(layer_named(g, "unet1.down8").out_size, 1);
  EXPECT_EQ(layer_named(g, "unet2.down8").out_size, 1);
  EXPECT_EQ(layer_named(g, "project").out_size, 256);
  EXPECT_EQ(layer_named(g, "project").out_channels, 1);
  Model d = build_discriminator(NetConfig{}, 1);
  EXPECT_EQ(d.layers[3].out_size, 32);
  EXPECT_EQ(d.conv_layer_count(), 4);
}

TEST(Generator, DeskContractAndSkips) {
  Model g = build_generator(NetConfig::desk(), 1);
  EXPECT_EQ(g.conv_layer_count(), 26);
  int skips = 0;
  for (const Layer& l : g.layers) {
    if (l.skip_from < 0) continue;
    ++skips;
    EXPECT_EQ(g.layers[static_cast<std::size_t>(l.skip_from)].out_size, l.in_size) << l.name;
    EXPECT_EQ(l.kind, LayerKind::kConvTranspose);
  }
  EXPECT_EQ(skips, 2 * (6 - 1));
  // U-Net #2 reads U-Net #1's full-resolution output.
  const Layer& first = layer_named(g, "unet2.down1");
  EXPECT_EQ(g.layers[static_cast<std::size_t>(first.input_from)].name, "unet1.up1");
  EXPECT_EQ(first.in_size, 64);
  for (const Layer& l : g.layers) {
    if (l.kind == LayerKind::kConvTranspose || l.name.find("down") != std::string::npos) {
      EXPECT_EQ(l.geom.stride, 2);
    } else {
      EXPECT_EQ(l.geom.stride, 1);
    }
    EXPECT_EQ(l.kernel, 4);
  }
}

TEST(Generator, ShapeContractAcrossResolutions) {
  for (int r : {16, 32, 64}) {
    NetConfig c{r, 4, 16, 4};
    Model g = build_generator(c, 3);
    EXPECT_EQ(g.conv_layer_count(), c.generator_layer_count());
    Grid y = evaluate(g, Grid({3, r, r}));
    ASSERT_EQ(y.shape(), (Grid::Shape{1, r, r}));
    Model d = build_discriminator(c, 3);
    EXPECT_EQ(d.layers[3].out_size, r / 8);
  }
}

TEST(Generator, ZeroInputGivesOpenUnitRange) {
  Model g = build_generator(NetConfig::desk(), 5);
  Grid y = evaluate(g, Grid({3, 64, 64}));
  for (double v : y.values()) {
    ASSERT_TRUE(std::isfinite(v));
    ASSERT_GT(v, 0.0);
    ASSERT_LT(v, 1.0);
  }
}

TEST(Discriminator, ScoreInOpenUnitInterval) {
  Model d = build_discriminator(NetConfig::desk(), 5);
  Rng rng(2);
  for (int i = 0; i < 5; ++i) {
    Grid s = evaluate(d, celltopo::testing::random_grid({1, 64, 64}, rng, 0.0, 1.0));
    ASSERT_EQ(s.size(), 1u);
    EXPECT_GT(s[0], 0.0);
    EXPECT_LT(s[0], 1.0);
  }
  EXPECT_THROW(evaluate(d, Grid({3, 64, 64})), std::invalid_argument);
}

TEST(Init, SeededAndScaled) {
  Model a = build_generator(NetConfig::desk(), 7), b = build_generator(NetConfig::desk(), 7);
  Model c = build_generator(NetConfig::desk(), 8);
  double sq = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    EXPECT_TRUE(a.layers[i].weights == b.layers[i].weights);
    for (double v : a.layers[i].bias.values()) EXPECT_EQ(v, 0.0);
    for (double v : a.layers[i].weights.values()) {
      sq += v * v;
      ++n;
    }
  }
  EXPECT_TRUE(a.layers[0].weights != c.layers[0].weights);
  EXPECT_NEAR(std::sqrt(sq / n), 1.0, 0.01);
  // run-time scale: sqrt(gain / fan_in), gain 2 before a ReLU
  EXPECT_DOUBLE_EQ(a.layers[0].weight_scale, std::sqrt(2.0 / (3 * 16)));
  const Layer& up = a.layers[2 + NetConfig::desk().depth()];
  ASSERT_EQ(up.kind, LayerKind::kConvTranspose);
  EXPECT_DOUBLE_EQ(up.weight_scale, std::sqrt(2.0 / (up.in_channels * 4)));
  EXPECT_DOUBLE_EQ(a.layers.back().weight_scale, std::sqrt(1.0 / (16 * 16)));
  const Model d = build_discriminator(NetConfig::desk(), 7);
  EXPECT_DOUBLE_EQ(d.layers.back().weight_scale, std::sqrt(1.0 / d.layers.back().in_channels));
  EXPECT_EQ(a.parameter_count(), n + [&] {
    std::size_t k = 0;
    for (const Layer& l : a.layers) k += l.bias.size();
    return k;
  }());
}

TEST(AssembleInput, Planes) {
  auto raster = rasterize(TopographySpec::lines(10, 20), FrameConfig::desk());
  auto in30 = assemble_input(raster, 30, 0.5, 1);
  auto in0 = assemble_input(raster, 0, 0.5, 1);
  const std::size_t plane = 64 * 64;
  for (std::size_t i = 0; i < plane; ++i) {
    ASSERT_EQ(in30.planes[plane + i], 1.0);
    ASSERT_EQ(in0.planes[plane + i], 0.0);
    ASSERT_EQ(in30.planes[i], raster.values[i]);
  }
  EXPECT_NEAR(assemble_input(raster, 8, 0.2, 1).planes[plane], 8.0 / 30.0, 1e-15);
  EXPECT_THROW(assemble_input(raster, 3, 0.5, 1), std::invalid_argument);
  EXPECT_THROW(assemble_input(raster, 1, 1.2, 1), std::invalid_argument);
}

TEST(AssembleInput, DensityPlaneMean) {
  auto raster = rasterize(TopographySpec::blank(), FrameConfig::desk());
  const std::size_t plane = 64 * 64;
  for (double rho : {0.0, 0.05, 0.3, 0.5, 0.7, 0.95, 1.0}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      auto in = assemble_input(raster, 1, rho, seed);
      double s = 0.0;
      for (std::size_t i = 0; i < plane; ++i) {
        const double v = in.planes[2 * plane + i];
        ASSERT_GE(v, 0.0);
        ASSERT_LE(v, 1.0);
        s += v;
      }
      EXPECT_NEAR(s / plane, rho, 0.02);
      if (rho == 0.3) {
        EXPECT_GE(s / plane, 0.28);
        EXPECT_LE(s / plane, 0.32);
      }
    }
  }
  EXPECT_TRUE(assemble_input(raster, 1, 0.4, 9).planes == assemble_input(raster, 1, 0.4, 9).planes);
  EXPECT_TRUE(assemble_input(raster, 1, 0.4, 9).planes != assemble_input(raster, 1, 0.4, 10).planes);
}

TEST(Generate, ReproducibleAndChecked) {
  Model g = build_generator(NetConfig::desk(), 11);
  auto in = assemble_input(rasterize(TopographySpec::lines(10, 20), FrameConfig::desk()), 8, 0.4, 3);
  auto a = generate(g, in), b = generate(g, in);
  EXPECT_TRUE(a.values == b.values);
  EXPECT_EQ(a.provenance, Provenance::kPredicted);
  auto big = assemble_input(rasterize(TopographySpec::blank(), FrameConfig{}), 8, 0.4, 3);
  EXPECT_THROW(generate(g, big), std::invalid_argument);
  EXPECT_THROW(generate(build_discriminator(NetConfig::desk(), 1), in), std::invalid_argument);
}

// Tape gradients of a whole small W-Net against central differences.
TEST(Generator, GradientMatchesFiniteDifferences) {
  NetConfig c{16, 2, 4, 4};
  Model g = build_generator(c, 21);
  // Larger weights keep ReLUs active so the check exercises every path.
  Rng rng(4);
  std::normal_distribution<double> normal(0.0, 0.4);
  for (Layer& l : g.layers) {
    for (double& v : l.weights.values()) v = normal(rng);
    for (double& v : l.bias.values()) v = 0.1 * normal(rng);
  }
  Grid x = celltopo::testing::random_grid({3, 16, 16}, rng, 0.0, 1.0);
  Grid w = celltopo::testing::random_grid({1, 16, 16}, rng, -1.0, 1.0);
  auto loss_of = [&](const Model& m) {
    Grid y = evaluate(m, x);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
    return s;
  };
  Tape tape;
  std::vector<Var> params;
  Var y = forward(g, tape, tape.input(x), true, &params);
  Var loss = sum(mul(y, tape.input(w)));
  tape.backward(loss);
  auto refs = g.params();
  std::uniform_int_distribution<int> pick_param(0, static_cast<int>(refs.size()) - 1);
  int checked = 0;
  for (int trial = 0; trial < 120; ++trial) {
    const auto p = static_cast<std::size_t>(pick_param(rng));
    Grid& value = *refs[p].value;
    const auto i = std::uniform_int_distribution<std::size_t>(0, value.size() - 1)(rng);
    const double analytic = tape.grad(params[p])[i];
    const double h = 1e-5, saved = value[i];
    value[i] = saved + h;
    const double up = loss_of(g);
    value[i] = saved - h;
    const double down = loss_of(g);
    value[i] = saved;
    const double numeric = (up - down) / (2 * h);
    const double scale = std::max({std::fabs(analytic), std::fabs(numeric), 1e-3});
    EXPECT_LE(std::fabs(analytic - numeric) / scale, 1e-4) << refs[p].name << '[' << i << ']';
    ++checked;
  }
  EXPECT_EQ(checked, 120);
}
