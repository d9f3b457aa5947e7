#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cbanet/codec/bundle_io.hpp"
#include "cbanet/eval/metrics.hpp"
#include "cbanet/train/stages.hpp"
#include "cbanet/train/synthetic.hpp"

namespace cbanet::train {
namespace {

namespace fs = std::filesystem;

codec::CodecConfig tiny_codec() {
  codec::CodecConfig c;
  c.latent_channels = 8;
  c.cam_width = 8;
  c.bam_width = 6;
  return c;
}

TrainConfig tiny_train(long iterations) {
  TrainConfig t;
  t.crop_size = 32;
  t.batch_size = 2;
  t.learning_rate = 1e-3;
  t.base_iterations = t.cam_iterations = t.bam_iterations = iterations;
  t.grad_clip = 300;
  t.log_every = 5;
  t.seed = 3;
  return t;
}

std::vector<NamedImage> tiny_images(int count, int side = 48) {
  Rng rng(17);
  std::vector<NamedImage> out;
  for (int i = 0; i < count; ++i) {
    out.push_back({"img" + std::to_string(i), codec::from_8bit(codec::to_8bit(synthetic_image(side, side, rng)))});
  }
  return out;
}

codec::ModelBundle fresh_bundle() {
  Rng rng(1);
  return codec::ModelBundle::create(tiny_codec(), rng);
}

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::kInvalidArgument;
}

TEST(Adam, MinimizesQuadratic) {
  float a = 3.0f, b = -2.0f;
  ParamSet ps;
  ps.add(a);
  ps.add(b);
  Adam adam(ps);
  for (int i = 0; i < 2000; ++i) {
    GradientBuffer g;
    g.add(2.0 * (a - 1.0));
    g.add(2.0 * (b + 0.5));
    adam.step(g.values(), 1e-2);
  }
  EXPECT_NEAR(a, 1.0f, 1e-3);
  EXPECT_NEAR(b, -0.5f, 1e-3);
  EXPECT_EQ(adam.steps(), 2000);
}

TEST(Loss, HandArithmetic) {
  FeatureMap<float> x(3, 4, 4), xh(3, 4, 4);
  std::fill(xh.values().begin(), xh.values().end(), 16.0f / 255.0f);
  EXPECT_NEAR(mse255(x, xh), 256.0, 1e-4);
  EXPECT_NEAR(loss_rd(x, xh, 0.0, 0.5, 16.0), 0.5 * 256.0, 1e-4);
  EXPECT_NEAR(loss_rd(x, xh, 32.0, 0.5, 16.0), 2.0 + 0.5 * 256.0, 1e-4);
  EXPECT_LT(loss_rd(x, xh, 32.0, 0.5, 16.0), loss_rd(x, xh, 32.0, 0.6, 16.0));
}

TEST(Loss, MseGradientMatchesDifference) {
  FeatureMap<float> x(1, 1, 2), xh(1, 1, 2);
  x[0] = 0.5f;
  xh[0] = 0.25f;
  x[1] = xh[1] = 0.75f;
  const auto g = mse255_grad(x, xh, 1.0);
  // d/dxh of mean((255 (xh - x))^2) over 2 values
  EXPECT_NEAR(g[0], 255.0 * 255.0 * 2.0 * (0.25 - 0.5) / 2.0, 1e-2);
  EXPECT_EQ(g[1], 0.0f);
}

TEST(Config, RejectsBadValues) {
  TrainConfig t;
  t.crop_size = 40;
  EXPECT_EQ(kind_of([&] { t.validate(); }), ErrorKind::kConfig);
  t = TrainConfig{};
  t.learning_rate = 0.0;
  EXPECT_EQ(kind_of([&] { t.validate(); }), ErrorKind::kConfig);
  t = TrainConfig{};
  EXPECT_DOUBLE_EQ(t.rate_at(0, 10), t.learning_rate);
  t.lr_drop_at = 0.5;
  EXPECT_DOUBLE_EQ(t.rate_at(5, 10), t.learning_rate * t.lr_drop_factor);
}

TEST(Dataset, SkipsUnreadableAndSmallFiles) {
  const fs::path dir = fs::temp_directory_path() / "cbanet_train_data";
  fs::remove_all(dir);
  write_synthetic_dataset(dir, 2, 40, 40, 5);
  io::write_png(dir / "small.png", codec::to_8bit(FeatureMap<float>(3, 8, 8)));
  std::ofstream(dir / "junk.png") << "not a png";
  std::ostringstream warn;
  const auto images = load_images(dir, 32, warn);
  ASSERT_EQ(images.size(), 2u);
  EXPECT_EQ(images[0].name, "img_000.png");
  EXPECT_NE(warn.str().find("small.png"), std::string::npos);
  EXPECT_NE(warn.str().find("junk.png"), std::string::npos);
  EXPECT_EQ(kind_of([&] { load_images(dir, 64, warn); }), ErrorKind::kData);
}

TEST(Dataset, CropStreamIsSeeded) {
  const auto images = tiny_images(3);
  CropStream a(images, 32, 9), b(images, 32, 9), c(images, 32, 10);
  bool differs = false;
  for (int i = 0; i < 10; ++i) {
    const auto ca = a.next(), cb = b.next(), cc = c.next();
    EXPECT_EQ(ca, cb);
    differs |= !(ca == cc);
  }
  EXPECT_TRUE(differs);
}

TEST(Stages, OrderIsEnforced) {
  const auto images = tiny_images(2);
  auto b = fresh_bundle();
  try {
    train_cam_progressive(b, tiny_train(2), images);
    FAIL() << "cam ran before base";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kUsage);
    EXPECT_NE(std::string(e.what()).find("stage order"), std::string::npos);
  }
  train_base(b, tiny_train(2), images);
  EXPECT_EQ(kind_of([&] { train_bam(b, tiny_train(2), images, 1, 0.01); }), ErrorKind::kUsage);
}

TEST(Stages, FrozenComponentsKeepTheirDigests) {
  const auto images = tiny_images(2);
  auto b = fresh_bundle();
  const auto cfg = tiny_train(10);
  const auto before = component_digests(b);
  train_base(b, cfg, images);
  const auto after_base = component_digests(b);
  EXPECT_NE(before.at("encoder"), after_base.at("encoder"));

  const auto cam = train_cam_progressive(b, cfg, images);
  ASSERT_EQ(cam.size(), 3u);
  for (const auto& r : cam) EXPECT_TRUE(r.frozen_intact()) << r.stage;
  EXPECT_EQ(cam[2].frozen_before.size(), 4u);  // encoder, entropy_base, cam_k1, cam_k2
  EXPECT_EQ(component_digests(b).at("encoder"), after_base.at("encoder"));

  const auto q1 = train_bam(b, cfg, images, 1, b.config.lambda_for(1));
  const auto q2 = train_bam(b, cfg, images, 2, b.config.lambda_for(2));
  EXPECT_TRUE(q1.frozen_intact());
  EXPECT_TRUE(q2.frozen_intact());
  EXPECT_EQ(q2.frozen_before.count("adapter_q1"), 1u);
  const auto end = component_digests(b);
  EXPECT_EQ(end.at("encoder"), after_base.at("encoder"));
  EXPECT_EQ(end.at("cam_k3"), cam[2].trained_after.at("cam_k3"));
}

TEST(Stages, EqualSeedsGiveEqualRuns) {
  const auto images = tiny_images(2);
  auto run = [&] {
    auto b = fresh_bundle();
    const auto cfg = tiny_train(8);
    std::string log = train_base(b, cfg, images).csv();
    for (const auto& r : train_cam_progressive(b, cfg, images)) log += r.csv();
    log += train_bam(b, cfg, images, 1, b.config.lambda_for(1)).csv();
    return std::make_pair(component_digests(b), log);
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);

  auto other = fresh_bundle();
  auto cfg = tiny_train(8);
  cfg.seed = 4;
  train_base(other, cfg, images);
  EXPECT_NE(component_digests(other).at("encoder"), a.first.at("encoder"));
}

TEST(Stages, RetrainingAnAdapterIsDeterministic) {
  const auto images = tiny_images(2);
  auto b = fresh_bundle();
  const auto cfg = tiny_train(4);
  train_base(b, cfg, images);
  train_cam_progressive(b, cfg, images);
  train_bam(b, cfg, images, 1, 0.02);
  const auto first = codec::digest_of(b.adapters.at(1));
  train_bam(b, cfg, images, 1, 0.02);
  EXPECT_EQ(codec::digest_of(b.adapters.at(1)), first);
  EXPECT_EQ(b.adapters.size(), 1u);
}

TEST(Stages, NonFiniteInputIsDivergence) {
  auto images = tiny_images(1);
  std::fill(images[0].pixels.values().begin(), images[0].pixels.values().end(), std::nanf(""));
  auto b = fresh_bundle();
  EXPECT_EQ(kind_of([&] { train_base(b, tiny_train(2), images); }), ErrorKind::kDivergence);
}

// Loss of the full pipeline on fixed crops with one shared noise draw; the
// adapter path runs when `quality` has one installed.
double pipeline_loss(const codec::ModelBundle& b, int quality, double lambda, const std::vector<NamedImage>& crops) {
  Rng noise(99);
  double total = 0.0;
  for (const auto& c : crops) {
    const Latent y = codec::encode_latent(c.pixels, b);
    const Latent yj = codec::bal_forward(y, quality, b);
    const Latent noisy = entropy::quantize(yj, entropy::QuantizeMode::kTrain, &noise);
    const double bits = entropy::rate_estimate(noisy, b.entropy_for(quality).density);
    const auto x_hat = codec::cam_decode(codec::ibal_forward(noisy, quality, b), b.config.k_max, b);
    total += loss_rd(c.pixels, x_hat, bits, lambda, double(c.pixels.height()) * c.pixels.width());
  }
  return total / static_cast<double>(crops.size());
}

TEST(Bam, FreshAdapterAtBaseLambdaMatchesBaseLoss) {
  const auto images = tiny_images(3);
  auto b = fresh_bundle();
  const auto cfg = tiny_train(60);
  train_base(b, cfg, images);
  train_cam_progressive(b, cfg, images);
  Rng rng(5);
  b.adapters[1] = b.new_adapter(1, b.config.lambda_base, rng);
  std::vector<NamedImage> crops;
  CropStream stream(images, 32, 8);
  for (int i = 0; i < 6; ++i) crops.push_back({"c", stream.next()});
  const double base = pipeline_loss(b, b.base_quality(), b.config.lambda_base, crops);
  const double adapted = pipeline_loss(b, 1, b.config.lambda_base, crops);
  EXPECT_NEAR(adapted / base, 1.0, 0.01);
}

TEST(Base, SingleImageOverfit) {
  const auto images = tiny_images(1, 32);
  auto b = fresh_bundle();
  auto cfg = tiny_train(4000);
  cfg.batch_size = 1;
  cfg.log_every = 1000;
  train_base(b, cfg, images);
  // Reuse the trained encoder with a one-branch CAM fitted to it.
  cfg.cam_iterations = 4000;
  train_cam_progressive(b, cfg, images);
  const auto stream = codec::encode_image(images[0].pixels, b.base_quality(), b);
  const double db = eval::psnr(images[0].pixels, codec::decode_image(stream, b.config.k_max, b));
  EXPECT_GT(db, 40.0);
}

}  // namespace
}  // namespace cbanet::train
