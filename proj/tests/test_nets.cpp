#include <gtest/gtest.h>

#include "spaen/layers.hpp"
#include "spaen/nets.hpp"
#include "test_util.hpp"

namespace spaen {
namespace {

using testing::random_tensor;
using testing::tiny_net;

// 0.5 * sum(w * o^2) + sum(v * o) with fixed random weights.
OutputLoss quadratic_loss(std::size_t size, std::uint64_t seed) {
  const Tensor w = random_tensor({size}, seed, 0.5, 1.5);
  const Tensor v = random_tensor({size}, seed + 1, -1.0, 1.0);
  return [w, v](const Tensor& out, Tensor* grad) {
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) {
      const std::size_t k = i % w.size();
      s += 0.5 * w.data[k] * out.data[i] * out.data[i] + v.data[k] * out.data[i];
      if (grad) grad->data[i] = w.data[k] * out.data[i] + v.data[k];
    }
    return s;
  };
}

Tensor input_for(const ParamMap& map, std::size_t n, std::uint64_t seed) {
  Shape s = map.input_shape();
  s.insert(s.begin(), n);
  return random_tensor(s, seed, -1.0, 1.0);
}

TEST(Nets, SameSeedSameParameters) {
  const ModelBundle a = build_models(tiny_net(Variant::kSpAen, 11));
  const ModelBundle b = build_models(tiny_net(Variant::kSpAen, 11));
  const ModelBundle c = build_models(tiny_net(Variant::kSpAen, 12));
  for (std::size_t i = 0; i < a.maps().size(); ++i) {
    EXPECT_EQ(a.maps()[i]->param_vector(), b.maps()[i]->param_vector());
    EXPECT_NE(a.maps()[i]->param_vector(), c.maps()[i]->param_vector());
  }
}

TEST(Nets, DefaultShapes) {
  NetConfig c;
  const ModelBundle b = build_models(c);
  const Tensor x = random_tensor({2, 3, 32, 32}, 1);
  EXPECT_EQ(embed_discriminative(b, x).shape, (Shape{2, 24}));
  EXPECT_EQ(b.f.forward(x).shape, (Shape{2, 24}));
  const Tensor g = b.g.forward(random_tensor({2, 24}, 2, -1.0, 1.0));
  EXPECT_EQ(g.shape, (Shape{2, 3, 32, 32}));
  EXPECT_EQ(b.d.forward(random_tensor({2, 24}, 3)).shape, (Shape{2, 1}));
  EXPECT_EQ(reconstruct(b, x).shape, x.shape);
  EXPECT_FALSE(b.e_trunk.trainable());
  EXPECT_FALSE(b.phi.trainable());
}

TEST(Nets, DecoderOutputsInUnitRange) {
  const ModelBundle b = build_models(tiny_net());
  const Tensor g = b.g.forward(random_tensor({16, 8}, 4, -50.0, 50.0));
  for (double v : g.data) {
    ASSERT_GE(v, 0.0);
    ASSERT_LE(v, 1.0);
  }
}

TEST(Nets, PhiIsDeterministic) {
  const ModelBundle b = build_models(tiny_net());
  const Tensor x = random_tensor({1, 3, 16, 16}, 5);
  Tensor twice({2, 3, 16, 16});
  std::copy(x.data.begin(), x.data.end(), twice.sample(0).begin());
  std::copy(x.data.begin(), x.data.end(), twice.sample(1).begin());
  const Tensor y = b.phi.forward(twice);
  EXPECT_TRUE(std::equal(y.sample(0).begin(), y.sample(0).end(), y.sample(1).begin()));
}

TEST(Nets, ShapeMismatchNamesTheMap) {
  const ModelBundle b = build_models(tiny_net());
  try {
    b.g.forward(random_tensor({1, 5}, 1));
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("G"), std::string::npos) << e.what();
  }
  try {
    b.e_head.forward(random_tensor({1, 3}, 1));
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("E.head"), std::string::npos) << e.what();
  }
}

TEST(Nets, EmbeddingDimMustMatchAttributes) {
  EXPECT_THROW(build_models(tiny_net(), 9), std::invalid_argument);
  EXPECT_NO_THROW(build_models(tiny_net(), 8));
  NetConfig bad = tiny_net();
  bad.height = 12;
  EXPECT_THROW(build_models(bad), std::invalid_argument);
}

TEST(Nets, SplitBranchEmbedsTwiceTheWidth) {
  const ModelBundle b = build_models(tiny_net(Variant::kSplitBranch));
  const Tensor x = random_tensor({3, 3, 16, 16}, 6);
  EXPECT_EQ(embed_discriminative(b, x).shape, (Shape{3, 16}));
  EXPECT_EQ(classification_embedding(b, x).shape, (Shape{3, 8}));
  EXPECT_EQ(reconstruct(b, x).shape, x.shape);
  EXPECT_THROW(reconstruct(build_models(tiny_net(Variant::kClsOnly)), x), std::invalid_argument);
}

TEST(Nets, ParseVariant) {
  EXPECT_EQ(parse_variant("SP-AEN"), Variant::kSpAen);
  EXPECT_EQ(parse_variant("cls-only"), Variant::kClsOnly);
  EXPECT_EQ(parse_variant("DirectMap"), Variant::kDirectMap);
  EXPECT_EQ(parse_variant("sae"), Variant::kSae);
  EXPECT_EQ(parse_variant("split_branch"), Variant::kSplitBranch);
  EXPECT_THROW(parse_variant("vae"), std::invalid_argument);
  for (auto v : {Variant::kSpAen, Variant::kClsOnly, Variant::kDirectMap, Variant::kSae,
                 Variant::kSplitBranch}) {
    EXPECT_EQ(parse_variant(variant_name(v)), v);
  }
}

TEST(Nets, InitializationIsFanInScaled) {
  Linear layer(400, 300);
  std::vector<double> p(layer.param_count());
  Rng rng(1);
  layer.initialize(p, rng);
  double s = 0.0;
  for (std::size_t i = 0; i < 400 * 300; ++i) s += p[i] * p[i];
  EXPECT_NEAR(s / (400.0 * 300.0), 2.0 / 400.0, 2.0 / 400.0 * 0.02);
  for (std::size_t i = 400 * 300; i < p.size(); ++i) EXPECT_EQ(p[i], 0.0);
}

TEST(Layers, Im2colIsAdjointOfCol2im) {
  const std::size_t c = 2, h = 7, w = 6, k = 3, s = 2, pad = 1;
  const std::size_t oh = (h + 2 * pad - k) / s + 1, ow = (w + 2 * pad - k) / s + 1;
  const Tensor x = random_tensor({c * h * w}, 1, -1.0, 1.0);
  const Tensor col = random_tensor({c * k * k * oh * ow}, 2, -1.0, 1.0);
  std::vector<double> ax(col.size()), aty(x.size(), 0.0);
  im2col(x.data.data(), c, h, w, k, s, pad, oh, ow, ax.data());
  col2im(col.data.data(), c, h, w, k, s, pad, oh, ow, aty.data());
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < ax.size(); ++i) lhs += ax[i] * col.data[i];
  for (std::size_t i = 0; i < aty.size(); ++i) rhs += x.data[i] * aty[i];
  EXPECT_NEAR(lhs, rhs, 1e-12);
}

TEST(Layers, ConvTransposeUpsamples) {
  ConvTranspose2d up(ConvGeometry{4, 2, 4, 2, 1});
  EXPECT_EQ(up.output_shape({4, 5, 5}), (Shape{2, 10, 10}));
}

TEST(GradCheck, AffineSquaredErrorIsExactToRounding) {
  ParamMap affine("affine", {5}, {std::make_shared<Linear>(5, 3)}, true);
  affine.initialize(7);
  const double err = grad_check(affine, quadratic_loss(3, 8), input_for(affine, 4, 9),
                                {1e-6, 64, 10});
  EXPECT_LT(err, 1e-6);
}

TEST(GradCheck, EveryTrainableMapPasses) {
  for (auto v : {Variant::kSpAen, Variant::kSplitBranch}) {
    ModelBundle b = build_models(tiny_net(v, 21));
    for (const ParamMap* map : b.maps()) {
      if (!map->trainable()) continue;
      for (std::uint64_t trial = 0; trial < 3; ++trial) {
        const Tensor x = input_for(*map, 2, 100 + trial);
        const double err = grad_check(*map, quadratic_loss(shape_size(map->output_shape()), trial),
                                      x, {1e-6, 40, trial});
        EXPECT_LT(err, 1e-4) << map->name() << " trial " << trial;
      }
    }
  }
}

TEST(GradCheck, FrozenMapsCheckInputs) {
  const ModelBundle b = build_models(tiny_net());
  for (const ParamMap* map : {&b.e_trunk, &b.phi}) {
    const Tensor x = random_tensor({2, 3, 16, 16}, 3);
    EXPECT_LT(grad_check(*map, quadratic_loss(shape_size(map->output_shape()), 4), x,
                         {1e-6, 40, 5}),
              1e-4)
        << map->name();
  }
}

TEST(GradCheck, RejectsBadInputs) {
  const ModelBundle b = build_models(tiny_net());
  const Tensor x = input_for(b.d, 2, 1);
  EXPECT_THROW(grad_check(b.d, quadratic_loss(1, 1), x, {0.0, 8, 0}), std::invalid_argument);
  const OutputLoss nan_loss = [](const Tensor&, Tensor*) { return std::nan(""); };
  EXPECT_THROW(grad_check(b.d, nan_loss, x), std::runtime_error);
}

}  // namespace
}  // namespace spaen
