#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "safl/errors.hpp"
#include "safl/gradcheck.hpp"
#include "safl/learner.hpp"
#include "test_support.hpp"

using namespace safl;

namespace {

constexpr double kLn2 = std::numbers::ln2;

Architecture small_arch() {
  Architecture a;
  a.image_size = 16;
  a.code_dim = 4;
  a.enc_channels[0] = 2;
  a.enc_channels[1] = 4;
  a.enc_channels[2] = 4;
  a.disc_hidden = 8;
  return a;
}

// Zeroes the last dense layer so the network outputs act(bias).
void constant_head(Network& net, double bias) {
  for (std::size_t i = net.layers.size(); i-- > 0;) {
    if (net.layers[i].kind == LayerKind::kDense) {
      std::fill(net.params[i][0].data.begin(), net.params[i][0].data.end(), 0.0);
      std::fill(net.params[i][1].data.begin(), net.params[i][1].data.end(), bias);
      return;
    }
  }
}

Tensor random_images(std::size_t batch, std::size_t size, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor x({batch, 1, size, size});
  for (double& v : x.data) v = u(rng);
  return x;
}

std::vector<TopViewImage> toy_images(int count, int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<TopViewImage> out;
  for (int i = 0; i < count; ++i) {
    TopViewImage img;
    img.width = img.height = size;
    img.pixels.assign(static_cast<std::size_t>(size * size), 0);
    // A few solid blocks per image.
    for (int b = 0; b < 3; ++b) {
      const int r0 = static_cast<int>(rng() % (size - 4)), c0 = static_cast<int>(rng() % (size - 4));
      for (int r = r0; r < r0 + 4; ++r)
        for (int c = c0; c < c0 + 4; ++c) img.pixels[static_cast<std::size_t>(r * size + c)] = 255;
    }
    out.push_back(img);
  }
  return out;
}

double mean_reconstruction(const BiGANModel& m, const std::vector<TopViewImage>& images) {
  const Tensor x = images_to_batch(images);
  const Tensor rec = forward(m.decoder, forward(m.encoder, x));
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (rec.data[i] - x.data[i]) * (rec.data[i] - x.data[i]);
  return s / static_cast<double>(images.size());
}

}  // namespace

TEST_CASE("model shapes") {
  const BiGANModel m = BiGANModel::create(ModelKind::kStableAfl, Architecture{}, 1);
  CHECK(m.encoder.output_shape() == Shape{64});
  CHECK(m.decoder.output_shape() == Shape{1, 64, 64});
  CHECK(m.joint_critic.input_shape == Shape{64 * 64 + 64});
  CHECK(m.joint_critic.layers.back().kind == LayerKind::kDense);
  const BiGANModel b = BiGANModel::create(ModelKind::kBiGan, Architecture{}, 1);
  CHECK(b.joint_critic.layers.back().kind == LayerKind::kSigmoid);
  CHECK(BiGANModel::create(ModelKind::kBiGan, small_arch(), 3) == BiGANModel::create(ModelKind::kBiGan, small_arch(), 3));
  Architecture bad = small_arch();
  bad.image_size = 12;
  CHECK_THROWS_AS(BiGANModel::create(ModelKind::kStableAfl, bad, 1), InvalidArgument);
}

TEST_CASE("loss values at indifferent discriminators") {
  std::mt19937_64 rng(3);
  const Tensor x = random_images(4, 16, rng);
  const Tensor z = sample_prior(4, 4, rng);

  BiGANModel b = BiGANModel::create(ModelKind::kBiGan, small_arch(), 2);
  constant_head(b.joint_critic, 0.0);
  const AdversarialLoss j = loss_bigan_jsd(b, x, z);
  CHECK(j.disc_loss == doctest::Approx(2 * kLn2).epsilon(1e-14));
  CHECK(j.gen_loss == doctest::Approx(2 * kLn2).epsilon(1e-14));

  BiGANModel s = BiGANModel::create(ModelKind::kStableAfl, small_arch(), 2);
  constant_head(s.joint_critic, 0.37);
  const JointWassersteinLoss w = loss_joint_wasserstein(s, x, z);
  CHECK(std::abs(w.estimate) < 1e-15);
  CHECK(w.critic_loss == -w.estimate);
  CHECK(w.gen_loss == w.estimate);

  constant_head(s.data_disc, 0.0);
  constant_head(s.code_disc, 0.0);
  CHECK(loss_side_data(s, x, z).disc_loss == doctest::Approx(2 * kLn2).epsilon(1e-14));
  CHECK(loss_side_code(s, x, z).disc_loss == doctest::Approx(2 * kLn2).epsilon(1e-14));
  CHECK(loss_side_data(s, x, z).gen_loss == doctest::Approx(kLn2).epsilon(1e-14));

  CHECK_THROWS_AS(loss_bigan_jsd(s, x, z), InvalidArgument);
  CHECK_THROWS_AS(loss_joint_wasserstein(b, x, z), InvalidArgument);
  CHECK_THROWS_AS(loss_cycle(s, random_images(2, 8, rng), z), InvalidArgument);
}

TEST_CASE("confident discriminator drives the JSD loss towards zero") {
  std::mt19937_64 rng(4);
  const Tensor x = random_images(3, 16, rng);
  const Tensor z = sample_prior(3, 4, rng);
  BiGANModel b = BiGANModel::create(ModelKind::kBiGan, small_arch(), 2);
  // sigmoid(40) rounds to 1: the real term is zero and the fake term sits on the log floor.
  constant_head(b.joint_critic, 40.0);
  const AdversarialLoss l = loss_bigan_jsd(b, x, z);
  CHECK(l.disc_loss == doctest::Approx(-std::log(1e-12)).epsilon(1e-6));
}

TEST_CASE("cycle loss equals a direct recomputation") {
  std::mt19937_64 rng(5);
  const Tensor x = random_images(3, 16, rng);
  const Tensor z = sample_prior(3, 4, rng);
  const BiGANModel m = BiGANModel::create(ModelKind::kStableAfl, small_arch(), 9);
  const Tensor rec = forward(m.decoder, forward(m.encoder, x));
  const Tensor back = forward(m.encoder, forward(m.decoder, z));
  double oracle = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) oracle += std::pow(rec.data[i] - x.data[i], 2);
  for (std::size_t i = 0; i < z.size(); ++i) oracle += std::pow(back.data[i] - z.data[i], 2);
  oracle /= 3.0;
  CHECK(loss_cycle(m, x, z) == doctest::Approx(oracle).epsilon(1e-13));
}

TEST_CASE("full objective is the weighted sum of its parts") {
  std::mt19937_64 rng(6);
  const Tensor x = random_images(2, 16, rng);
  const Tensor z = sample_prior(2, 4, rng);
  const BiGANModel m = BiGANModel::create(ModelKind::kStableAfl, small_arch(), 4);
  TrainConfig cfg;
  const double sum = loss_joint_wasserstein(m, x, z).estimate + -loss_side_data(m, x, z).disc_loss +
                     -loss_side_code(m, x, z).disc_loss + loss_cycle(m, x, z);
  CHECK(full_objective(m, x, z, cfg) == sum);
  cfg.lambda_cyc = 0.0;
  cfg.lambda_x = 2.0;
  CHECK(full_objective(m, x, z, cfg) == doctest::Approx(loss_joint_wasserstein(m, x, z).estimate +
                                                        -2.0 * loss_side_data(m, x, z).disc_loss +
                                                        -loss_side_code(m, x, z).disc_loss));
}

TEST_CASE("gradients agree with finite differences (single seed)") {
  for (const GradcheckResult& r : gradcheck_losses(11)) {
    INFO(r.name << " max rel err " << r.max_rel_error);
    CHECK(r.passed);
  }
}

TEST_CASE("cycle gradient vanishes at a stationary point") {
  // A zero encoder and decoder reconstruct x = 0 and z = 0 exactly.
  BiGANModel m = BiGANModel::create(ModelKind::kStableAfl, micro_architecture(), 1);
  for (Network* net : {&m.encoder, &m.decoder})
    for (auto& layer : net->params)
      for (Tensor& t : layer) std::fill(t.data.begin(), t.data.end(), 0.0);
  ModelGrads g = ModelGrads::zeros(m);
  const double v = loss_cycle(m, Tensor({2, 1, 8, 8}, 0.0), Tensor({2, 3}, 0.0), &g);
  CHECK(v == 0.0);
  for (const ParamSet* ps : {&g.encoder, &g.decoder})
    for (const auto& layer : *ps)
      for (const Tensor& t : layer)
        for (double d : t.data) CHECK(d == 0.0);
}

TEST_CASE("training: zero iterations, determinism, clipping, descent") {
  const auto data = toy_images(8, 16, 3);
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.iterations = 0;
  BiGANModel m = BiGANModel::create(ModelKind::kStableAfl, small_arch(), 5);
  const BiGANModel init = m;
  CHECK(train(m, data, cfg).records.empty());
  CHECK(m == init);

  cfg.iterations = 20;
  cfg.n_critic = 2;
  cfg.rotation_augment = 1.0;
  BiGANModel a = init, b = init;
  bool clipped = true;
  int critic_steps = 0;
  TrainHooks hooks;
  hooks.after_critic_step = [&](int, const Network& critic) {
    ++critic_steps;
    clipped = clipped && params_within(critic, cfg.clip_c);
  };
  const LossReport ra = train(a, data, cfg, hooks);
  train(b, data, cfg);
  CHECK(a == b);
  CHECK(critic_steps == 40);
  CHECK(clipped);
  CHECK(ra.records.size() == 20);
  for (const LossRecord& r : ra.records) {
    CHECK(std::isfinite(r.l_joint));
    CHECK(std::isfinite(r.l_cyc));
  }

  BiGANModel c = init;
  cfg.iterations = 500;
  cfg.n_critic = 1;
  cfg.rotation_augment = 0.0;
  cfg.learning_rate = 1e-3;
  int epochs = 0;
  TrainHooks epoch_hook;
  epoch_hook.on_epoch = [&](int e, const BiGANModel&) { epochs = e; };
  train(c, data, cfg, epoch_hook);
  CHECK(epochs == 250);
  CHECK(mean_reconstruction(c, data) < mean_reconstruction(init, data));
}

TEST_CASE("training rejects bad inputs and surfaces divergence") {
  const auto data = toy_images(4, 16, 1);
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.iterations = 1;
  BiGANModel m = BiGANModel::create(ModelKind::kBiGan, small_arch(), 5);
  CHECK_THROWS_AS(train(m, data, cfg), InvalidArgument);
  cfg.batch_size = 2;
  cfg.clip_c = 0.0;
  CHECK_THROWS_AS(train(m, data, cfg), InvalidArgument);

  cfg.clip_c = 0.01;
  cfg.iterations = 50;
  cfg.learning_rate = 1e250;
  bool threw = false;
  try {
    train(m, data, cfg);
  } catch (const NumericError& e) {
    threw = true;
    CHECK(e.index() < 50);
  }
  CHECK(threw);
}

TEST_CASE("encoding and code files") {
  const BiGANModel m = BiGANModel::create(ModelKind::kStableAfl, small_arch(), 5);
  const auto imgs = toy_images(3, 16, 8);
  CHECK(encode(m, imgs[0]).values == encode(m, imgs[0]).values);
  CHECK(encode(m, imgs[0]).values.size() == 4);
  TopViewImage wrong;
  wrong.width = wrong.height = 8;
  wrong.pixels.assign(64, 0);
  CHECK_THROWS_AS(encode(m, wrong), InvalidArgument);

  BiGANModel side = m;
  constant_head(side.data_disc, 3.0);
  constant_head(side.code_disc, -3.0);
  CHECK(encode(side, imgs[1]).values == encode(m, imgs[1]).values);

  const auto codes = encode_all(m, imgs);
  const auto bytes = encode_code_file(codes, 4);
  CHECK(bytes.size() == 16 + 3 * (4 + 16));
  const auto back = decode_code_file(bytes);
  REQUIRE(back.size() == 3);
  CHECK(back[2].frame_id == 2);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(back[1].values[i] == static_cast<double>(static_cast<float>(codes[1].values[i])));
  }
  std::vector<char> bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_code_file(bad), MalformedFile);
  CHECK_THROWS_AS(decode_code_file(std::vector<char>(bytes.begin(), bytes.end() - 1)), MalformedFile);

  LatentCode big{std::vector<double>(1024, 0.25), 7};
  const auto one = encode_code_file({big}, 1024);
  CHECK(one.size() - 16 - 4 == 4096);
}

TEST_CASE("model checkpoints and loss csv") {
  safl::testing::TempDir dir;
  const BiGANModel m = BiGANModel::create(ModelKind::kBiGan, small_arch(), 12);
  save_model(dir.file("m.safl"), m);
  CHECK(load_model(dir.file("m.safl")) == m);

  LossReport r;
  r.records.push_back({0, 1.5, -0.25, 0.125, 2.0, 0.1});
  write_loss_csv(dir.file("loss.csv"), r);
  CHECK(safl::testing::slurp(dir.file("loss.csv")) == "iter,L_J,L_X,L_Z,L_cyc,critic_estimate\n0,1.5,-0.25,0.125,2,0.1\n");
}
