#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>

#include "eipnet/embedder.hpp"
#include "eipnet/grad_check.hpp"
#include "eipnet/losses.hpp"
#include "eipnet/synth.hpp"

using namespace eipnet;

namespace {

constexpr double kCompositeStep = 1e-4;

std::vector<double> ramp(double offset) {
  std::vector<double> v(kEmbeddingDim);
  for (int i = 0; i < kEmbeddingDim; ++i) v[i] = offset + 1.0 / (i + 3);
  return v;
}

template <class T>
bool same_values(const Tensor<T>& a, const Tensor<T>& b) {
  return std::ranges::equal(a.data(), b.data());
}

struct ToySet {
  std::vector<Tensor<float>> images;
  std::vector<int> labels;
};

ToySet toy_identities(int identities, int per_identity) {
  const auto d = synth_faces(31, identities, per_identity);
  ToySet s;
  for (std::size_t i = 0; i < d.images.size(); ++i) {
    s.images.push_back(to_tensor<float>(prepare_hr(to_float(d.images[i]), CropPolicy::celeba_178)));
    s.labels.push_back(d.identity[i]);
  }
  return s;
}

}  // namespace

TEST(Embedder, OutputShapeAndDeterminism) {
  const EmbedderSpec spec;
  const auto params = init_params<float>(spec.layers(), 1);
  const auto img = random_tensor<float>({2, 3, 128, 128}, 2, 0.0f, 1.0f);
  const auto z = embed_values(spec, params, img);
  EXPECT_EQ(z.shape(), (Shape{2, kEmbeddingDim, 1, 1}));
  EXPECT_TRUE(same_values(z, embed_values(spec, params, img)));
  EXPECT_THROW(embed_values(spec, params, Tensor<float>({1, 3, 64, 64})), ShapeError);
}

TEST(Embedder, IdenticalImagesGiveZeroIdentityLoss) {
  const EmbedderSpec spec;
  const auto params = init_params<double>(spec.layers(), 3);
  const auto img = random_tensor<double>({1, 3, 128, 128}, 4, 0.0, 1.0);
  Tape<double> t;
  const Bound<double> p = bind(t, params, false);
  const Var a = embed(t, spec, p, t.constant(img)), b = embed(t, spec, p, t.constant(img));
  EXPECT_EQ(t.item(l_id(t, a, b)), 0.0);
}

TEST(Embedder, FlipChangesTheVector) {
  const EmbedderSpec spec;
  const auto params = init_params<float>(spec.layers(), 5);
  const ImageF img = from_tensor(random_tensor<float>({1, 3, 128, 128}, 6, 0.0f, 1.0f));
  EXPECT_FALSE(same_values(embed_values(spec, params, to_tensor<float>(img)),
                           embed_values(spec, params, to_tensor<float>(flip_horizontal(img)))));
}

TEST(Embedder, IdentityLossGradientOnTinyVariant) {
  const EmbedderSpec spec{16, 16};
  const auto params = init_params<double>(spec.layers(), 7);
  const auto hr = random_tensor<double>({1, 3, 16, 16}, 8, 0.0, 1.0);
  const double err = grad_check(
      [&](Tape<double>& t, std::span<const Var> v) {
        const Bound<double> p = bind(t, params, false);
        return l_id(t, embed(t, spec, p, v[0]), embed(t, spec, p, t.constant(hr)));
      },
      {random_tensor<double>({1, 3, 16, 16}, 9, 0.0, 1.0)}, kCompositeStep);
  EXPECT_LT(err, 1e-6);
}

TEST(Embedder, FrozenWeightsReceiveNoGradient) {
  const EmbedderSpec spec{16, 16};
  const auto params = init_params<double>(spec.layers(), 10);
  Tape<double> t;
  const Bound<double> p = bind(t, params, false);
  const Var sr = t.leaf(random_tensor<double>({1, 3, 16, 16}, 11, 0.0, 1.0), true);
  const Var hr = t.constant(random_tensor<double>({1, 3, 16, 16}, 12, 0.0, 1.0));
  t.backward(l_id(t, embed(t, spec, p, sr), embed(t, spec, p, hr)));
  for (Var v : p.vars) EXPECT_FALSE(t.requires_grad(v));
  double norm = 0;
  for (double g : t.grad(sr).data()) norm += g * g;
  EXPECT_GT(norm, 0.0);
}

TEST(EmbedderTraining, RejectsBadDatasets) {
  const EmbedderSpec spec{16, 16};
  auto params = init_params<float>(spec.layers(), 1);
  const std::vector<Tensor<float>> imgs(4, Tensor<float>({1, 3, 16, 16}));
  EXPECT_THROW(train_embedder(spec, params, imgs, {0, 0, 0, 0}, {}), ValueError);
  EXPECT_THROW(train_embedder(spec, params, imgs, {0, 0, 0, 1}, {}), ValueError);
  EXPECT_THROW(train_embedder(spec, params, imgs, {0, 0, 1}, {}), ValueError);
  EXPECT_THROW(train_embedder(spec, params, imgs, {0, 0, 1, 600}, {}), ValueError);
}

TEST(EmbedderTraining, ToyIdentitiesAndDeterminism) {
  const ToySet set = toy_identities(20, 10);
  const EmbedderSpec spec;
  EmbedderTrainConfig cfg;
  cfg.epochs = 12;
  cfg.seed = 3;
  auto a = init_params<float>(spec.layers(), 3);
  const auto res = train_embedder(spec, a, set.images, set.labels, cfg);
  EXPECT_GE(res.train_accuracy, 0.9);
  EXPECT_GE(res.train_accuracy, 5.0 / 20);

  auto b = init_params<float>(spec.layers(), 3);
  cfg.epochs = 1;
  train_embedder(spec, b, set.images, set.labels, cfg);
  auto c = init_params<float>(spec.layers(), 3);
  train_embedder(spec, c, set.images, set.labels, cfg);
  for (std::size_t i = 0; i < b.size(); ++i) EXPECT_TRUE(same_values(b.value(i), c.value(i))) << b.name(i);
}

TEST(EmbeddingFile, Roundtrip) {
  Embeddings e;
  e.add("alpha", ramp(0.1));
  e.add("beta", ramp(-1e-300));
  const Embeddings back = parse_embeddings(format_embeddings(e));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back.names, e.names);
  EXPECT_EQ(back.vectors, e.vectors);

  const auto path = std::filesystem::temp_directory_path() / "eipnet_embeddings.csv";
  write_embeddings(path, e);
  EXPECT_EQ(read_embeddings(path).vectors, e.vectors);
}

TEST(EmbeddingFile, Errors) {
  Embeddings e;
  e.add("good", ramp(0));
  std::string text = format_embeddings(e);
  auto v = ramp(0);
  v.pop_back();
  std::string short_line = "short";
  for (double x : v) short_line += "," + std::to_string(x);
  try {
    parse_embeddings(text + short_line + "\n");
    FAIL();
  } catch (const FormatError& err) {
    EXPECT_NE(std::string(err.what()).find("line 2"), std::string::npos);
    EXPECT_NE(std::string(err.what()).find("511"), std::string::npos);
  }
  try {
    parse_embeddings(text + text);
    FAIL();
  } catch (const FormatError& err) {
    EXPECT_NE(std::string(err.what()).find("duplicate"), std::string::npos);
  }
  EXPECT_THROW(parse_embeddings("x,1,abc\n"), FormatError);
  EXPECT_THROW(e.add("good", ramp(1)), FormatError);
  Embeddings bad;
  bad.add("bad,name", ramp(0));
  EXPECT_THROW(format_embeddings(bad), ValueError);
}
