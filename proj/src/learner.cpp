#include "safl/learner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "binary_io.hpp"
#include "format.hpp"
#include "safl/errors.hpp"

namespace safl {

const char* model_kind_name(ModelKind kind) {
  return kind == ModelKind::kBiGan ? "bigan" : "stable-afl";
}

ModelKind parse_model_kind(const std::string& name) {
  if (name == "stable-afl" || name == "safl") {
    return ModelKind::kStableAfl;
  }
  if (name == "bigan" || name == "bigan-baseline") {
    return ModelKind::kBiGan;
  }
  throw InvalidArgument("unknown model kind '" + name + "' (expected stable-afl or bigan)");
}

void Architecture::validate() const {
  if (image_size < 8 || image_size % 8 != 0) {
    throw InvalidArgument("image_size must be a positive multiple of 8");
  }
  if (code_dim < 1 || disc_hidden < 1) {
    throw InvalidArgument("code_dim and disc_hidden must be positive");
  }
  for (int c : enc_channels) {
    if (c < 1) {
      throw InvalidArgument("encoder channel counts must be positive");
    }
  }
}

BiGANModel BiGANModel::create(ModelKind kind, const Architecture& arch, std::uint64_t seed) {
  arch.validate();
  const auto s = static_cast<std::size_t>(arch.image_size);
  const auto d = static_cast<std::size_t>(arch.code_dim);
  const int c1 = arch.enc_channels[0], c2 = arch.enc_channels[1], c3 = arch.enc_channels[2];
  const int low = arch.image_size / 8;
  const int flat = c3 * low * low;
  const int pixels = arch.image_size * arch.image_size;
  const double a = arch.leak;
  const int h = arch.disc_hidden;

  BiGANModel m;
  m.kind = kind;
  m.arch = arch;
  m.encoder = Network::build({1, s, s},
                             {LayerSpec::conv2d(1, c1, 4, 2), LayerSpec::leaky_relu(a),
                              LayerSpec::conv2d(c1, c2, 4, 2), LayerSpec::leaky_relu(a),
                              LayerSpec::conv2d(c2, c3, 4, 2), LayerSpec::leaky_relu(a),
                              LayerSpec::flatten(), LayerSpec::dense(flat, arch.code_dim)},
                             seed * 5 + 1);
  m.decoder = Network::build(
      {d},
      {LayerSpec::dense(arch.code_dim, flat),
       LayerSpec::reshape({static_cast<std::size_t>(c3), static_cast<std::size_t>(low), static_cast<std::size_t>(low)}),
       LayerSpec::leaky_relu(a), LayerSpec::upsample2d(2), LayerSpec::conv2d(c3, c2, 3, 1), LayerSpec::leaky_relu(a),
       LayerSpec::upsample2d(2), LayerSpec::conv2d(c2, c1, 3, 1), LayerSpec::leaky_relu(a), LayerSpec::upsample2d(2),
       LayerSpec::conv2d(c1, 1, 3, 1), LayerSpec::tanh()},
      seed * 5 + 2);
  std::vector<LayerSpec> joint{LayerSpec::dense(pixels + arch.code_dim, h), LayerSpec::leaky_relu(a),
                               LayerSpec::dense(h, h), LayerSpec::leaky_relu(a), LayerSpec::dense(h, 1)};
  if (kind == ModelKind::kBiGan) {
    joint.push_back(LayerSpec::sigmoid());
  }
  m.joint_critic = Network::build({static_cast<std::size_t>(pixels) + d}, joint, seed * 5 + 3);
  m.data_disc = Network::build({1, s, s},
                               {LayerSpec::flatten(), LayerSpec::dense(pixels, h), LayerSpec::leaky_relu(a),
                                LayerSpec::dense(h, h), LayerSpec::leaky_relu(a), LayerSpec::dense(h, 1),
                                LayerSpec::sigmoid()},
                               seed * 5 + 4);
  m.code_disc = Network::build({d},
                               {LayerSpec::dense(arch.code_dim, h), LayerSpec::leaky_relu(a), LayerSpec::dense(h, h),
                                LayerSpec::leaky_relu(a), LayerSpec::dense(h, 1), LayerSpec::sigmoid()},
                               seed * 5 + 5);
  return m;
}

Checkpoint to_checkpoint(const BiGANModel& model) {
  Checkpoint ckpt;
  std::ostringstream meta;
  meta << "kind=" << model_kind_name(model.kind) << "\n"
       << "image_size=" << model.arch.image_size << "\n"
       << "code_dim=" << model.arch.code_dim << "\n"
       << "enc_channels=" << model.arch.enc_channels[0] << "," << model.arch.enc_channels[1] << ","
       << model.arch.enc_channels[2] << "\n"
       << "disc_hidden=" << model.arch.disc_hidden << "\n"
       << "leak=" << detail::format_double(model.arch.leak) << "\n";
  ckpt.metadata = meta.str();
  ckpt.networks = {{"encoder", model.encoder},
                   {"decoder", model.decoder},
                   {"joint_critic", model.joint_critic},
                   {"data_disc", model.data_disc},
                   {"code_disc", model.code_disc}};
  return ckpt;
}

BiGANModel from_checkpoint(const Checkpoint& ckpt) {
  std::map<std::string, std::string> meta;
  std::istringstream lines(ckpt.metadata);
  std::string line;
  while (std::getline(lines, line)) {
    if (auto eq = line.find('='); eq != std::string::npos) {
      meta[line.substr(0, eq)] = line.substr(eq + 1);
    }
  }
  auto need = [&](const std::string& key) {
    auto it = meta.find(key);
    if (it == meta.end()) {
      throw MalformedFile("checkpoint metadata lacks '" + key + "'");
    }
    return it->second;
  };
  BiGANModel m;
  try {
    m.kind = parse_model_kind(need("kind"));
    m.arch.image_size = std::stoi(need("image_size"));
    m.arch.code_dim = std::stoi(need("code_dim"));
    std::istringstream ch(need("enc_channels"));
    char comma = 0;
    ch >> m.arch.enc_channels[0] >> comma >> m.arch.enc_channels[1] >> comma >> m.arch.enc_channels[2];
    m.arch.disc_hidden = std::stoi(need("disc_hidden"));
    m.arch.leak = std::stod(need("leak"));
  } catch (const std::logic_error& e) {
    throw MalformedFile(std::string("checkpoint metadata: ") + e.what());
  }
  // The stored specs must match what this architecture builds.
  const BiGANModel shape_ref = BiGANModel::create(m.kind, m.arch, 0);
  auto take = [&](const std::string& name, const Network& expected) {
    for (const auto& entry : ckpt.networks) {
      if (entry.name == name) {
        if (entry.net.layers != expected.layers || entry.net.input_shape != expected.input_shape) {
          throw MalformedFile("checkpoint network '" + name + "' does not match its architecture");
        }
        return entry.net;
      }
    }
    throw MalformedFile("checkpoint lacks network '" + name + "'");
  };
  m.encoder = take("encoder", shape_ref.encoder);
  m.decoder = take("decoder", shape_ref.decoder);
  m.joint_critic = take("joint_critic", shape_ref.joint_critic);
  m.data_disc = take("data_disc", shape_ref.data_disc);
  m.code_disc = take("code_disc", shape_ref.code_disc);
  return m;
}

void save_model(const std::string& path, const BiGANModel& model) { save_checkpoint(path, to_checkpoint(model)); }

BiGANModel load_model(const std::string& path) { return from_checkpoint(load_checkpoint(path)); }

ModelGrads ModelGrads::zeros(const BiGANModel& model) {
  return {zero_grads(model.encoder), zero_grads(model.decoder), zero_grads(model.joint_critic),
          zero_grads(model.data_disc), zero_grads(model.code_disc)};
}

namespace {

void check_batches(const BiGANModel& model, const Tensor& x, const Tensor& z) {
  const auto s = static_cast<std::size_t>(model.arch.image_size);
  const auto d = static_cast<std::size_t>(model.arch.code_dim);
  if (x.shape.size() != 4 || x.shape[1] != 1 || x.shape[2] != s || x.shape[3] != s || x.shape[0] == 0) {
    throw InvalidArgument("image batch must be [B, 1, " + std::to_string(s) + ", " + std::to_string(s) +
                          "], got " + shape_string(x.shape));
  }
  if (z.shape.size() != 2 || z.shape[1] != d || z.shape[0] == 0) {
    throw InvalidArgument("code batch must be [B, " + std::to_string(d) + "], got " + shape_string(z.shape));
  }
}

// [B, P] images (any trailing shape) beside [B, D] codes -> [B, P + D].
Tensor concat_pair(const Tensor& images, const Tensor& codes) {
  const std::size_t b = images.shape[0];
  const std::size_t p = images.size() / b;
  const std::size_t d = codes.size() / b;
  Tensor out({b, p + d});
  for (std::size_t i = 0; i < b; ++i) {
    std::copy_n(images.data.begin() + static_cast<std::ptrdiff_t>(i * p), p,
                out.data.begin() + static_cast<std::ptrdiff_t>(i * (p + d)));
    std::copy_n(codes.data.begin() + static_cast<std::ptrdiff_t>(i * d), d,
                out.data.begin() + static_cast<std::ptrdiff_t>(i * (p + d) + p));
  }
  return out;
}

// Adds the image / code halves of a [B, P + D] gradient into the targets.
void split_pair_grad(const Tensor& g, Tensor* image_grad, Tensor* code_grad, std::size_t p) {
  const std::size_t b = g.shape[0];
  const std::size_t width = g.shape[1];
  const std::size_t d = width - p;
  for (std::size_t i = 0; i < b; ++i) {
    if (image_grad != nullptr) {
      for (std::size_t j = 0; j < p; ++j) image_grad->data[i * p + j] += g.data[i * width + j];
    }
    if (code_grad != nullptr) {
      for (std::size_t j = 0; j < d; ++j) code_grad->data[i * d + j] += g.data[i * width + p + j];
    }
  }
}

double mean(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data) s += v;
  return s / static_cast<double>(t.size());
}

// -mean log(max(p, floor)) and its gradient wrt p (scaled).
double neg_mean_log(const Tensor& p, Tensor* grad, double scale) {
  const double n = static_cast<double>(p.size());
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double v = std::max(p.data[i], kLogFloor);
    s -= std::log(v);
    if (grad != nullptr && p.data[i] > kLogFloor) {
      grad->data[i] += -scale / (n * p.data[i]);
    }
  }
  return s / n;
}

// -mean log(max(1 - p, floor)) and its gradient wrt p (scaled).
double neg_mean_log_complement(const Tensor& p, Tensor* grad, double scale) {
  const double n = static_cast<double>(p.size());
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = 1.0 - p.data[i];
    s -= std::log(std::max(q, kLogFloor));
    if (grad != nullptr && q > kLogFloor) {
      grad->data[i] += scale / (n * q);
    }
  }
  return s / n;
}

// Shared forward state for one (x, z) batch: En(x) and De(z) with tapes and
// gradient accumulators for the generator side.
struct Pass {
  const BiGANModel& m;
  const Tensor& x;
  const Tensor& z;
  Tape en_tape;
  Tape de_tape;
  Tensor code;  // En(x)
  Tensor gen;   // De(z)
  Tensor d_code;
  Tensor d_gen;

  Pass(const BiGANModel& model, const Tensor& xb, const Tensor& zb) : m(model), x(xb), z(zb) {
    check_batches(model, xb, zb);
    code = forward(m.encoder, x, &en_tape);
    gen = forward(m.decoder, z, &de_tape);
    d_code = Tensor(code.shape);
    d_gen = Tensor(gen.shape);
  }

  void backprop_generator(ModelGrads& g) const {
    backward(m.encoder, en_tape, d_code, &g.encoder);
    backward(m.decoder, de_tape, d_gen, &g.decoder);
  }
};

// What a term computes. `grads == nullptr` evaluates values only.
struct TermRequest {
  Objective which = Objective::kDiscriminator;
  ModelGrads* grads = nullptr;
  double scale = 1.0;
};

Tensor seeded_grad(const Tensor& like) { return Tensor(like.shape); }

AdversarialLoss term_bigan(Pass& pass, const TermRequest& req) {
  const Network& dj = pass.m.joint_critic;
  const std::size_t pixels = pass.x.size() / pass.x.shape[0];
  Tape real_tape, fake_tape;
  const Tensor p_real = forward(dj, concat_pair(pass.x, pass.code), req.grads ? &real_tape : nullptr);
  const Tensor p_fake = forward(dj, concat_pair(pass.gen, pass.z), req.grads ? &fake_tape : nullptr);
  AdversarialLoss out;
  Tensor g_real = seeded_grad(p_real), g_fake = seeded_grad(p_fake);
  const bool disc = req.which == Objective::kDiscriminator;
  out.disc_loss = neg_mean_log(p_real, disc && req.grads ? &g_real : nullptr, req.scale) +
                  neg_mean_log_complement(p_fake, disc && req.grads ? &g_fake : nullptr, req.scale);
  out.gen_loss = neg_mean_log_complement(p_real, !disc && req.grads ? &g_real : nullptr, req.scale) +
                 neg_mean_log(p_fake, !disc && req.grads ? &g_fake : nullptr, req.scale);
  if (req.grads != nullptr) {
    if (disc) {
      backward(dj, real_tape, g_real, &req.grads->joint_critic);
      backward(dj, fake_tape, g_fake, &req.grads->joint_critic);
    } else {
      split_pair_grad(backward(dj, real_tape, g_real), nullptr, &pass.d_code, pixels);
      split_pair_grad(backward(dj, fake_tape, g_fake), &pass.d_gen, nullptr, pixels);
    }
  }
  return out;
}

JointWassersteinLoss term_wasserstein(Pass& pass, const TermRequest& req) {
  const Network& dj = pass.m.joint_critic;
  const std::size_t b = pass.x.shape[0];
  const std::size_t pixels = pass.x.size() / b;
  Tape real_tape, fake_tape;
  const Tensor s_real = forward(dj, concat_pair(pass.x, pass.code), req.grads ? &real_tape : nullptr);
  const Tensor s_fake = forward(dj, concat_pair(pass.gen, pass.z), req.grads ? &fake_tape : nullptr);
  JointWassersteinLoss out;
  out.estimate = mean(s_real) - mean(s_fake);
  out.critic_loss = -out.estimate;
  out.gen_loss = out.estimate;
  if (req.grads != nullptr) {
    // critic minimises -estimate; generator minimises +estimate.
    const double sign = req.which == Objective::kDiscriminator ? -1.0 : 1.0;
    Tensor g_real(s_real.shape, sign * req.scale / static_cast<double>(b));
    Tensor g_fake(s_fake.shape, -sign * req.scale / static_cast<double>(b));
    if (req.which == Objective::kDiscriminator) {
      backward(dj, real_tape, g_real, &req.grads->joint_critic);
      backward(dj, fake_tape, g_fake, &req.grads->joint_critic);
    } else {
      split_pair_grad(backward(dj, real_tape, g_real), nullptr, &pass.d_code, pixels);
      split_pair_grad(backward(dj, fake_tape, g_fake), &pass.d_gen, nullptr, pixels);
    }
  }
  return out;
}

// JSD game of a side discriminator: `real` vs `fake` where fake is a
// generator output whose gradient accumulates into `fake_grad`.
AdversarialLoss term_side(const Network& disc_net, ParamSet* disc_grads, const Tensor& real, const Tensor& fake,
                          Tensor& fake_grad, const TermRequest& req) {
  Tape real_tape, fake_tape;
  const Tensor p_real = forward(disc_net, real, req.grads ? &real_tape : nullptr);
  const Tensor p_fake = forward(disc_net, fake, req.grads ? &fake_tape : nullptr);
  const bool disc = req.which == Objective::kDiscriminator;
  Tensor g_real = seeded_grad(p_real), g_fake = seeded_grad(p_fake);
  AdversarialLoss out;
  out.disc_loss = neg_mean_log(p_real, disc && req.grads ? &g_real : nullptr, req.scale) +
                  neg_mean_log_complement(p_fake, disc && req.grads ? &g_fake : nullptr, req.scale);
  out.gen_loss = neg_mean_log(p_fake, !disc && req.grads ? &g_fake : nullptr, req.scale);
  if (req.grads != nullptr) {
    if (disc) {
      backward(disc_net, real_tape, g_real, disc_grads);
      backward(disc_net, fake_tape, g_fake, disc_grads);
    } else {
      const Tensor gin = backward(disc_net, fake_tape, g_fake);
      for (std::size_t i = 0; i < gin.size(); ++i) fake_grad.data[i] += gin.data[i];
    }
  }
  return out;
}

AdversarialLoss term_side_data(Pass& pass, const TermRequest& req) {
  return term_side(pass.m.data_disc, req.grads ? &req.grads->data_disc : nullptr, pass.x, pass.gen, pass.d_gen, req);
}

AdversarialLoss term_side_code(Pass& pass, const TermRequest& req) {
  return term_side(pass.m.code_disc, req.grads ? &req.grads->code_disc : nullptr, pass.z, pass.code, pass.d_code,
                   req);
}

double term_cycle(Pass& pass, ModelGrads* grads, double scale) {
  const std::size_t b = pass.x.shape[0];
  const double inv_b = 1.0 / static_cast<double>(b);
  Tape rec_tape, back_tape;
  const Tensor rec = forward(pass.m.decoder, pass.code, grads ? &rec_tape : nullptr);
  const Tensor back = forward(pass.m.encoder, pass.gen, grads ? &back_tape : nullptr);
  double data_term = 0.0;
  double code_term = 0.0;
  Tensor g_rec(rec.shape), g_back(back.shape);
  for (std::size_t i = 0; i < rec.size(); ++i) {
    const double diff = rec.data[i] - pass.x.data[i];
    data_term += diff * diff;
    g_rec.data[i] = 2.0 * diff * inv_b * scale;
  }
  for (std::size_t i = 0; i < back.size(); ++i) {
    const double diff = back.data[i] - pass.z.data[i];
    code_term += diff * diff;
    g_back.data[i] = 2.0 * diff * inv_b * scale;
  }
  if (grads != nullptr) {
    const Tensor gc = backward(pass.m.decoder, rec_tape, g_rec, &grads->decoder);
    for (std::size_t i = 0; i < gc.size(); ++i) pass.d_code.data[i] += gc.data[i];
    const Tensor gg = backward(pass.m.encoder, back_tape, g_back, &grads->encoder);
    for (std::size_t i = 0; i < gg.size(); ++i) pass.d_gen.data[i] += gg.data[i];
  }
  return (data_term + code_term) * inv_b;
}

void require_kind(const BiGANModel& model, ModelKind kind, const char* what) {
  if (model.kind != kind) {
    throw InvalidArgument(std::string(what) + " requires a " + model_kind_name(kind) + " model");
  }
}

}  // namespace

AdversarialLoss loss_bigan_jsd(const BiGANModel& model, const Tensor& x, const Tensor& z) {
  require_kind(model, ModelKind::kBiGan, "loss_bigan_jsd");
  Pass pass(model, x, z);
  return term_bigan(pass, {});
}

double loss_bigan_jsd(const BiGANModel& model, const Tensor& x, const Tensor& z, Objective which,
                      ModelGrads& grads) {
  require_kind(model, ModelKind::kBiGan, "loss_bigan_jsd");
  Pass pass(model, x, z);
  const AdversarialLoss l = term_bigan(pass, {which, &grads, 1.0});
  if (which == Objective::kGenerator) {
    pass.backprop_generator(grads);
    return l.gen_loss;
  }
  return l.disc_loss;
}

JointWassersteinLoss loss_joint_wasserstein(const BiGANModel& model, const Tensor& x, const Tensor& z) {
  require_kind(model, ModelKind::kStableAfl, "loss_joint_wasserstein");
  Pass pass(model, x, z);
  return term_wasserstein(pass, {});
}

double loss_joint_wasserstein(const BiGANModel& model, const Tensor& x, const Tensor& z, Objective which,
                              ModelGrads& grads) {
  require_kind(model, ModelKind::kStableAfl, "loss_joint_wasserstein");
  Pass pass(model, x, z);
  const JointWassersteinLoss l = term_wasserstein(pass, {which, &grads, 1.0});
  if (which == Objective::kGenerator) {
    pass.backprop_generator(grads);
    return l.gen_loss;
  }
  return l.critic_loss;
}

double loss_cycle(const BiGANModel& model, const Tensor& x, const Tensor& z, ModelGrads* grads) {
  Pass pass(model, x, z);
  const double v = term_cycle(pass, grads, 1.0);
  if (grads != nullptr) {
    pass.backprop_generator(*grads);
  }
  return v;
}

AdversarialLoss loss_side_data(const BiGANModel& model, const Tensor& x, const Tensor& z) {
  Pass pass(model, x, z);
  return term_side_data(pass, {});
}

double loss_side_data(const BiGANModel& model, const Tensor& x, const Tensor& z, Objective which,
                      ModelGrads& grads) {
  Pass pass(model, x, z);
  const AdversarialLoss l = term_side_data(pass, {which, &grads, 1.0});
  if (which == Objective::kGenerator) {
    pass.backprop_generator(grads);
    return l.gen_loss;
  }
  return l.disc_loss;
}

AdversarialLoss loss_side_code(const BiGANModel& model, const Tensor& x, const Tensor& z) {
  Pass pass(model, x, z);
  return term_side_code(pass, {});
}

double loss_side_code(const BiGANModel& model, const Tensor& x, const Tensor& z, Objective which,
                      ModelGrads& grads) {
  Pass pass(model, x, z);
  const AdversarialLoss l = term_side_code(pass, {which, &grads, 1.0});
  if (which == Objective::kGenerator) {
    pass.backprop_generator(grads);
    return l.gen_loss;
  }
  return l.disc_loss;
}

void TrainConfig::validate() const {
  if (batch_size < 1 || iterations < 0 || n_critic < 1) {
    throw InvalidArgument("batch_size and n_critic must be positive, iterations non-negative");
  }
  if (!(clip_c > 0.0) || !(learning_rate > 0.0)) {
    throw InvalidArgument("clip_c and learning_rate must be positive");
  }
  if (lambda_x < 0.0 || lambda_z < 0.0 || lambda_cyc < 0.0 || rotation_augment < 0.0) {
    throw InvalidArgument("loss weights and rotation_augment must be non-negative");
  }
}

double full_objective(const BiGANModel& model, const Tensor& x, const Tensor& z, const TrainConfig& config) {
  const double l_j = loss_joint_wasserstein(model, x, z).estimate;
  const double l_x = -loss_side_data(model, x, z).disc_loss;
  const double l_z = -loss_side_code(model, x, z).disc_loss;
  const double l_cyc = loss_cycle(model, x, z);
  return l_j + config.lambda_x * l_x + config.lambda_z * l_z + config.lambda_cyc * l_cyc;
}

void write_loss_csv(const std::string& path, const LossReport& report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw IoError("cannot open for writing: " + path);
  }
  out << "iter,L_J,L_X,L_Z,L_cyc,critic_estimate\n";
  for (const LossRecord& r : report.records) {
    out << r.iteration << ',' << detail::format_double(r.l_joint) << ',' << detail::format_double(r.l_x) << ','
        << detail::format_double(r.l_z) << ',' << detail::format_double(r.l_cyc) << ','
        << detail::format_double(r.critic_estimate) << '\n';
  }
  if (!out) {
    throw IoError("write failed: " + path);
  }
}

Tensor image_to_tensor(const TopViewImage& image) { return images_to_batch({image}); }

Tensor images_to_batch(const std::vector<TopViewImage>& images) {
  if (images.empty()) {
    throw InvalidArgument("empty image batch");
  }
  const auto h = static_cast<std::size_t>(images.front().height);
  const auto w = static_cast<std::size_t>(images.front().width);
  Tensor out({images.size(), 1, h, w});
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (static_cast<std::size_t>(images[i].height) != h || static_cast<std::size_t>(images[i].width) != w) {
      throw InvalidArgument("images in a batch must share dimensions");
    }
    for (std::size_t j = 0; j < h * w; ++j) {
      out.data[i * h * w + j] = images[i].pixels[j] / 127.5 - 1.0;
    }
  }
  return out;
}

Tensor sample_prior(int batch, int code_dim, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor z({static_cast<std::size_t>(batch), static_cast<std::size_t>(code_dim)});
  for (double& v : z.data) v = u(rng);
  return z;
}

namespace {

Tensor sample_images(const std::vector<TopViewImage>& dataset, const TrainConfig& cfg, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<TopViewImage> batch;
  batch.reserve(static_cast<std::size_t>(cfg.batch_size));
  for (int i = 0; i < cfg.batch_size; ++i) {
    const TopViewImage& img = dataset[pick(rng)];
    if (cfg.rotation_augment > 0.0) {
      batch.push_back(rotate_topview(img, cfg.rotation_augment * (unit(rng) - 0.5)));
    } else {
      batch.push_back(img);
    }
  }
  return images_to_batch(batch);
}

void check_finite(double v, int iteration, const char* what) {
  if (!std::isfinite(v)) {
    throw NumericError(std::string("non-finite ") + what + " at iteration " + std::to_string(iteration),
                       static_cast<std::size_t>(iteration));
  }
}

// Optimizer errors are re-raised with the iteration index.
template <typename F>
void at_iteration(int iteration, F&& f) {
  try {
    f();
  } catch (const NumericError& e) {
    throw NumericError(std::string(e.what()) + " at iteration " + std::to_string(iteration),
                       static_cast<std::size_t>(iteration));
  }
}

}  // namespace

LossReport train(BiGANModel& model, const std::vector<TopViewImage>& dataset, const TrainConfig& config,
                 const TrainHooks& hooks) {
  config.validate();
  LossReport report;
  if (config.iterations == 0) {
    return report;
  }
  if (dataset.size() < static_cast<std::size_t>(config.batch_size)) {
    throw InvalidArgument("dataset has fewer images than batch_size");
  }
  for (const TopViewImage& img : dataset) {
    if (img.width != model.arch.image_size || img.height != model.arch.image_size) {
      throw InvalidArgument("dataset image size does not match the encoder input");
    }
  }
  std::mt19937_64 rng(config.seed);
  const double lr = config.learning_rate;
  OptimizerState opt_enc = OptimizerState::rmsprop(model.encoder, lr);
  OptimizerState opt_dec = OptimizerState::rmsprop(model.decoder, lr);
  OptimizerState opt_joint = OptimizerState::rmsprop(model.joint_critic, lr);
  OptimizerState opt_dx = OptimizerState::rmsprop(model.data_disc, lr);
  OptimizerState opt_dz = OptimizerState::rmsprop(model.code_disc, lr);
  const int per_epoch = static_cast<int>((dataset.size() + config.batch_size - 1) / config.batch_size);
  const int code_dim = model.arch.code_dim;

  for (int it = 0; it < config.iterations; ++it) {
    LossRecord rec;
    rec.iteration = it;
    if (model.kind == ModelKind::kStableAfl) {
      Tensor x, z;
      for (int c = 0; c < config.n_critic; ++c) {
        x = sample_images(dataset, config, rng);
        z = sample_prior(config.batch_size, code_dim, rng);
        Pass pass(model, x, z);
        ModelGrads g = ModelGrads::zeros(model);
        rec.l_joint = term_wasserstein(pass, {Objective::kDiscriminator, &g, 1.0}).critic_loss;
        check_finite(rec.l_joint, it, "critic loss");
        at_iteration(it, [&] { optimizer_step(opt_joint, model.joint_critic, g.joint_critic); });
        clip_params(model.joint_critic, config.clip_c);
        if (hooks.after_critic_step) {
          hooks.after_critic_step(it, model.joint_critic);
        }
      }
      {
        // Side discriminators train on the last critic batch.
        Pass pass(model, x, z);
        ModelGrads g = ModelGrads::zeros(model);
        rec.l_x = term_side_data(pass, {Objective::kDiscriminator, &g, 1.0}).disc_loss;
        rec.l_z = term_side_code(pass, {Objective::kDiscriminator, &g, 1.0}).disc_loss;
        check_finite(rec.l_x, it, "data-side loss");
        check_finite(rec.l_z, it, "code-side loss");
        at_iteration(it, [&] {
          optimizer_step(opt_dx, model.data_disc, g.data_disc);
          optimizer_step(opt_dz, model.code_disc, g.code_disc);
        });
      }
      {
        x = sample_images(dataset, config, rng);
        z = sample_prior(config.batch_size, code_dim, rng);
        Pass pass(model, x, z);
        ModelGrads g = ModelGrads::zeros(model);
        rec.critic_estimate = term_wasserstein(pass, {Objective::kGenerator, &g, 1.0}).estimate;
        if (config.lambda_x > 0.0) term_side_data(pass, {Objective::kGenerator, &g, config.lambda_x});
        if (config.lambda_z > 0.0) term_side_code(pass, {Objective::kGenerator, &g, config.lambda_z});
        rec.l_cyc = term_cycle(pass, &g, config.lambda_cyc);
        check_finite(rec.critic_estimate, it, "critic estimate");
        check_finite(rec.l_cyc, it, "cycle loss");
        pass.backprop_generator(g);
        at_iteration(it, [&] {
          optimizer_step(opt_enc, model.encoder, g.encoder);
          optimizer_step(opt_dec, model.decoder, g.decoder);
        });
      }
    } else {
      {
        const Tensor x = sample_images(dataset, config, rng);
        const Tensor z = sample_prior(config.batch_size, code_dim, rng);
        Pass pass(model, x, z);
        ModelGrads g = ModelGrads::zeros(model);
        rec.l_joint = term_bigan(pass, {Objective::kDiscriminator, &g, 1.0}).disc_loss;
        check_finite(rec.l_joint, it, "discriminator loss");
        at_iteration(it, [&] { optimizer_step(opt_joint, model.joint_critic, g.joint_critic); });
      }
      {
        const Tensor x = sample_images(dataset, config, rng);
        const Tensor z = sample_prior(config.batch_size, code_dim, rng);
        Pass pass(model, x, z);
        ModelGrads g = ModelGrads::zeros(model);
        const AdversarialLoss l = term_bigan(pass, {Objective::kGenerator, &g, 1.0});
        check_finite(l.gen_loss, it, "generator loss");
        rec.critic_estimate = l.gen_loss;
        pass.backprop_generator(g);
        at_iteration(it, [&] {
          optimizer_step(opt_enc, model.encoder, g.encoder);
          optimizer_step(opt_dec, model.decoder, g.decoder);
        });
      }
    }
    report.records.push_back(rec);
    if (hooks.on_epoch && (it + 1) % per_epoch == 0) {
      hooks.on_epoch((it + 1) / per_epoch, model);
    }
  }
  return report;
}

LatentCode encode(const BiGANModel& model, const TopViewImage& image, std::uint32_t frame_id) {
  if (image.width != model.arch.image_size || image.height != model.arch.image_size) {
    throw InvalidArgument("image is " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                          " but the encoder expects " + std::to_string(model.arch.image_size) + "x" +
                          std::to_string(model.arch.image_size));
  }
  const Tensor code = forward(model.encoder, image_to_tensor(image));
  return {code.data, frame_id};
}

std::vector<LatentCode> encode_all(const BiGANModel& model, const std::vector<TopViewImage>& images) {
  std::vector<LatentCode> out;
  out.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    out.push_back(encode(model, images[i], static_cast<std::uint32_t>(i)));
  }
  return out;
}

std::vector<char> encode_code_file(const std::vector<LatentCode>& codes, std::uint32_t code_dim) {
  detail::ByteWriter out;
  out.bytes("SAFC");
  out.u32(kCodeFileVersion);
  out.u32(code_dim);
  out.u32(static_cast<std::uint32_t>(codes.size()));
  for (const LatentCode& c : codes) {
    if (c.values.size() != code_dim) {
      throw InvalidArgument("latent code of frame " + std::to_string(c.frame_id) + " has dimension " +
                            std::to_string(c.values.size()) + ", expected " + std::to_string(code_dim));
    }
    out.u32(c.frame_id);
    for (double v : c.values) {
      out.f32(static_cast<float>(v));
    }
  }
  return out.data();
}

std::vector<LatentCode> decode_code_file(const std::vector<char>& bytes, const std::string& source) {
  detail::ByteReader in(bytes, source);
  if (in.bytes(4) != "SAFC") {
    throw MalformedFile(source + ": bad magic (expected SAFC)");
  }
  const std::uint32_t version = in.u32();
  if (version != kCodeFileVersion) {
    throw MalformedFile(source + ": unsupported code file version " + std::to_string(version));
  }
  const std::uint32_t dim = in.u32();
  const std::uint32_t frames = in.u32();
  if (in.remaining() != static_cast<std::size_t>(frames) * (4 + 4 * static_cast<std::size_t>(dim))) {
    throw MalformedFile(source + ": payload size does not match the header");
  }
  std::vector<LatentCode> codes(frames);
  for (LatentCode& c : codes) {
    c.frame_id = in.u32();
    c.values.resize(dim);
    for (double& v : c.values) {
      v = in.f32();
    }
  }
  return codes;
}

void save_codes(const std::string& path, const std::vector<LatentCode>& codes, std::uint32_t code_dim) {
  detail::write_file(path, encode_code_file(codes, code_dim));
}

std::vector<LatentCode> load_codes(const std::string& path) {
  return decode_code_file(detail::read_file(path), path);
}

}  // namespace safl
