#include "safl/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>

namespace safl {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

Architecture micro_architecture() {
  Architecture a;
  a.image_size = 8;
  a.code_dim = 3;
  a.enc_channels[0] = 2;
  a.enc_channels[1] = 2;
  a.enc_channels[2] = 2;
  a.disc_hidden = 4;
  return a;
}

namespace {

// Values bounded away from zero so leaky-relu kinks stay out of the stencil.
Tensor random_input(const Shape& shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mag(0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  Tensor t(shape);
  for (double& v : t.data) v = sign(rng) ? mag(rng) : -mag(rng);
  return t;
}

struct Tracker {
  GradcheckResult r;
  const GradcheckOptions& opts;

  // Perturbs v in place and compares the analytic partial with the central
  // difference of f.
  void probe(double analytic, double& v, const std::function<double()>& f) {
    const double saved = v;
    const double mid = f();
    v = saved + opts.epsilon;
    const double up = f();
    v = saved - opts.epsilon;
    const double down = f();
    v = saved;
    const double forward_slope = (up - mid) / opts.epsilon;
    const double backward_slope = (mid - down) / opts.epsilon;
    const double noise = opts.noise_factor * std::numeric_limits<double>::epsilon() *
                         std::max({std::abs(up), std::abs(mid), std::abs(down)}) / opts.epsilon;
    const double floor = std::max(opts.floor, noise);
    if (relative_error(forward_slope, backward_slope, floor) > opts.kink_tolerance) {
      ++r.kinks;
      return;
    }
    r.max_rel_error = std::max(r.max_rel_error, relative_error(analytic, (up - down) / (2.0 * opts.epsilon), floor));
    ++r.checked;
  }
  GradcheckResult finish(bool extra_ok = true) {
    r.passed = extra_ok && r.checked > 0 && r.max_rel_error < opts.tolerance && r.kinks * 20 <= r.checked + r.kinks;
    return r;
  }
};

GradcheckResult check_layer(const std::string& name, const Shape& in_shape, std::vector<LayerSpec> layers,
                            std::uint64_t seed, const GradcheckOptions& opts) {
  std::mt19937_64 rng(seed);
  Network net = Network::build(in_shape, std::move(layers), seed);
  // Random parameters (including biases) so nothing is trivially zero.
  for (auto& layer : net.params)
    for (Tensor& p : layer) p = random_input(p.shape, rng);
  Shape batch_shape{2};
  batch_shape.insert(batch_shape.end(), in_shape.begin(), in_shape.end());
  Tensor x = random_input(batch_shape, rng);
  Shape out_shape{2};
  const Shape o = net.output_shape();
  out_shape.insert(out_shape.end(), o.begin(), o.end());
  const Tensor weights = random_input(out_shape, rng);

  auto value = [&]() {
    const Tensor y = forward(net, x);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y.data[i] * weights.data[i];
    return s;
  };
  Tape tape;
  forward(net, x, &tape);
  ParamSet grads = zero_grads(net);
  const Tensor gx = backward(net, tape, weights, &grads);

  Tracker t{{name}, opts};
  for (std::size_t i = 0; i < x.size(); ++i) {
    t.probe(gx.data[i], x.data[i], value);
  }
  for (std::size_t l = 0; l < net.params.size(); ++l)
    for (std::size_t p = 0; p < net.params[l].size(); ++p)
      for (std::size_t i = 0; i < net.params[l][p].size(); ++i) {
        t.probe(grads[l][p].data[i], net.params[l][p].data[i], value);
      }
  return t.finish();
}

using NetMember = Network BiGANModel::*;
using GradMember = ParamSet ModelGrads::*;

struct Target {
  NetMember net;
  GradMember grad;
};

const Target kEncoder{&BiGANModel::encoder, &ModelGrads::encoder};
const Target kDecoder{&BiGANModel::decoder, &ModelGrads::decoder};
const Target kJoint{&BiGANModel::joint_critic, &ModelGrads::joint_critic};
const Target kDataDisc{&BiGANModel::data_disc, &ModelGrads::data_disc};
const Target kCodeDisc{&BiGANModel::code_disc, &ModelGrads::code_disc};
const Target kAll[] = {kEncoder, kDecoder, kJoint, kDataDisc, kCodeDisc};

bool all_zero(const ParamSet& ps) {
  for (const auto& layer : ps)
    for (const Tensor& t : layer)
      for (double v : t.data)
        if (v != 0.0) return false;
  return true;
}

GradcheckResult check_loss(const std::string& name, BiGANModel model,
                           const std::function<double(const BiGANModel&)>& value,
                           const std::function<void(const BiGANModel&, ModelGrads&)>& gradient,
                           const std::vector<Target>& targets, const GradcheckOptions& opts) {
  ModelGrads g = ModelGrads::zeros(model);
  gradient(model, g);
  Tracker t{{name}, opts};
  for (const Target& target : targets) {
    Network& net = model.*(target.net);
    const ParamSet& grads = g.*(target.grad);
    for (std::size_t l = 0; l < net.params.size(); ++l)
      for (std::size_t p = 0; p < net.params[l].size(); ++p)
        for (std::size_t i = 0; i < net.params[l][p].size(); ++i) {
          t.probe(grads[l][p].data[i], net.params[l][p].data[i], [&] { return value(model); });
        }
  }
  // Networks outside the objective must receive no gradient at all.
  bool untouched = true;
  for (const Target& other : kAll) {
    const bool targeted = std::any_of(targets.begin(), targets.end(), [&](const Target& tg) {
      return tg.grad == other.grad;
    });
    if (!targeted) untouched = untouched && all_zero(g.*(other.grad));
  }
  return t.finish(untouched);
}

}  // namespace

std::vector<GradcheckResult> gradcheck_layers(std::uint64_t seed, const GradcheckOptions& opts) {
  return {
      check_layer("dense", {5}, {LayerSpec::dense(5, 3)}, seed, opts),
      check_layer("conv2d_k3_s2", {2, 5, 5}, {LayerSpec::conv2d(2, 3, 3, 2)}, seed, opts),
      check_layer("conv2d_k4_s2", {1, 6, 6}, {LayerSpec::conv2d(1, 2, 4, 2)}, seed, opts),
      check_layer("conv2d_k3_s1", {2, 4, 4}, {LayerSpec::conv2d(2, 2, 3, 1)}, seed, opts),
      check_layer("leaky_relu", {6}, {LayerSpec::leaky_relu(0.2)}, seed, opts),
      check_layer("tanh", {6}, {LayerSpec::tanh()}, seed, opts),
      check_layer("sigmoid", {6}, {LayerSpec::sigmoid()}, seed, opts),
      check_layer("flatten", {2, 2, 2}, {LayerSpec::flatten(), LayerSpec::dense(8, 2)}, seed, opts),
      check_layer("reshape", {8}, {LayerSpec::reshape({2, 2, 2}), LayerSpec::conv2d(2, 1, 3, 1)}, seed, opts),
      check_layer("upsample2d", {2, 3, 3}, {LayerSpec::upsample2d(2)}, seed, opts),
  };
}

std::vector<GradcheckResult> gradcheck_losses(std::uint64_t seed, const GradcheckOptions& opts) {
  const Architecture arch = micro_architecture();
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const Tensor x = random_input({4, 1, 8, 8}, rng);
  const Tensor z = sample_prior(4, arch.code_dim, rng);
  const BiGANModel bigan = BiGANModel::create(ModelKind::kBiGan, arch, seed);
  const BiGANModel stable = BiGANModel::create(ModelKind::kStableAfl, arch, seed);
  const std::vector<Target> gen{kEncoder, kDecoder};
  const auto D = Objective::kDiscriminator;
  const auto G = Objective::kGenerator;
  std::vector<GradcheckResult> out;

  out.push_back(check_loss(
      "bigan_jsd_disc", bigan, [&](const BiGANModel& m) { return loss_bigan_jsd(m, x, z).disc_loss; },
      [&](const BiGANModel& m, ModelGrads& g) { loss_bigan_jsd(m, x, z, D, g); }, {kJoint}, opts));
  out.push_back(check_loss(
      "bigan_jsd_gen", bigan, [&](const BiGANModel& m) { return loss_bigan_jsd(m, x, z).gen_loss; },
      [&](const BiGANModel& m, ModelGrads& g) { loss_bigan_jsd(m, x, z, G, g); }, gen, opts));
  out.push_back(check_loss(
      "wasserstein_critic", stable,
      [&](const BiGANModel& m) { return loss_joint_wasserstein(m, x, z).critic_loss; },
      [&](const BiGANModel& m, ModelGrads& g) { loss_joint_wasserstein(m, x, z, D, g); }, {kJoint}, opts));
  out.push_back(check_loss(
      "wasserstein_gen", stable, [&](const BiGANModel& m) { return loss_joint_wasserstein(m, x, z).gen_loss; },
      [&](const BiGANModel& m, ModelGrads& g) { loss_joint_wasserstein(m, x, z, G, g); }, gen, opts));
  out.push_back(check_loss(
      "cycle", stable, [&](const BiGANModel& m) { return loss_cycle(m, x, z); },
      [&](const BiGANModel& m, ModelGrads& g) { loss_cycle(m, x, z, &g); }, gen, opts));
  out.push_back(check_loss(
      "side_data_disc", stable, [&](const BiGANModel& m) { return loss_side_data(m, x, z).disc_loss; },
      [&](const BiGANModel& m, ModelGrads& g) { loss_side_data(m, x, z, D, g); }, {kDataDisc}, opts));
  out.push_back(check_loss(
      "side_data_gen", stable, [&](const BiGANModel& m) { return loss_side_data(m, x, z).gen_loss; },
      [&](const BiGANModel& m, ModelGrads& g) { loss_side_data(m, x, z, G, g); }, gen, opts));
  out.push_back(check_loss(
      "side_code_disc", stable, [&](const BiGANModel& m) { return loss_side_code(m, x, z).disc_loss; },
      [&](const BiGANModel& m, ModelGrads& g) { loss_side_code(m, x, z, D, g); }, {kCodeDisc}, opts));
  out.push_back(check_loss(
      "side_code_gen", stable, [&](const BiGANModel& m) { return loss_side_code(m, x, z).gen_loss; },
      [&](const BiGANModel& m, ModelGrads& g) { loss_side_code(m, x, z, G, g); }, gen, opts));
  return out;
}

std::vector<GradcheckResult> gradcheck_suite(const std::vector<std::uint64_t>& seeds, const GradcheckOptions& opts) {
  std::vector<GradcheckResult> all;
  for (std::uint64_t seed : seeds) {
    for (auto* suite : {&gradcheck_layers, &gradcheck_losses}) {
      for (GradcheckResult r : suite(seed, opts)) {
        r.name += "/seed" + std::to_string(seed);
        all.push_back(std::move(r));
      }
    }
  }
  return all;
}

}  // namespace safl
