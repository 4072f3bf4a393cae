#pragma once

// Bidirectional adversarial feature learning: the JSD BiGAN baseline and the
// stabilised variant (Wasserstein joint critic with weight clipping, cycle
// reconstruction, side discriminators on the data and code domains).

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "safl/occupancy.hpp"
#include "safl/tensor.hpp"

namespace safl {

enum class ModelKind : std::uint32_t {
  kStableAfl = 0,  // joint critic is unbounded (Wasserstein)
  kBiGan = 1,      // joint discriminator ends in a sigmoid (JSD baseline)
};

const char* model_kind_name(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);

/// Desk-scale network sizes. image_size must be divisible by 8.
struct Architecture {
  int image_size = 64;
  int code_dim = 64;
  int enc_channels[3] = {8, 16, 32};
  int disc_hidden = 64;
  double leak = 0.2;

  void validate() const;
  friend bool operator==(const Architecture&, const Architecture&) = default;
};

struct BiGANModel {
  ModelKind kind = ModelKind::kStableAfl;
  Architecture arch;
  Network encoder;       // image -> code
  Network decoder;       // code -> image (tanh output)
  Network joint_critic;  // [flattened image, code] -> scalar
  Network data_disc;     // image -> probability
  Network code_disc;     // code -> probability

  static BiGANModel create(ModelKind kind, const Architecture& arch, std::uint64_t seed);
  int code_dim() const { return arch.code_dim; }

  friend bool operator==(const BiGANModel&, const BiGANModel&) = default;
};

Checkpoint to_checkpoint(const BiGANModel& model);
BiGANModel from_checkpoint(const Checkpoint& ckpt);
void save_model(const std::string& path, const BiGANModel& model);
BiGANModel load_model(const std::string& path);

struct ModelGrads {
  ParamSet encoder;
  ParamSet decoder;
  ParamSet joint_critic;
  ParamSet data_disc;
  ParamSet code_disc;

  static ModelGrads zeros(const BiGANModel& model);
};

/// Which side of a min-max game a gradient is taken for. Discriminator
/// objectives produce gradients for that discriminator only; generator
/// objectives produce gradients for the encoder and decoder only.
enum class Objective { kDiscriminator, kGenerator };

/// Log arguments are floored at this value in every JSD-style loss.
inline constexpr double kLogFloor = 1e-12;

struct AdversarialLoss {
  double disc_loss = 0.0;
  double gen_loss = 0.0;
};

struct JointWassersteinLoss {
  double critic_loss = 0.0;  // -(mean D_J(x, En x) - mean D_J(De z, z))
  double gen_loss = 0.0;     // mean D_J(x, En x) - mean D_J(De z, z)
  double estimate = 0.0;     // the critic's distance estimate (= gen_loss)
};

// Batches: x is [B, 1, S, S] in [-1, 1]; z is [B, code_dim].

/// BiGAN JSD game with a sigmoid joint discriminator; non-saturating generator.
AdversarialLoss loss_bigan_jsd(const BiGANModel& model, const Tensor& x, const Tensor& z);
double loss_bigan_jsd(const BiGANModel& model, const Tensor& x, const Tensor& z, Objective which,
                      ModelGrads& grads);

JointWassersteinLoss loss_joint_wasserstein(const BiGANModel& model, const Tensor& x, const Tensor& z);
double loss_joint_wasserstein(const BiGANModel& model, const Tensor& x, const Tensor& z, Objective which,
                              ModelGrads& grads);

/// mean ||De(En(x)) - x||^2 + mean ||En(De(z)) - z||^2. Gradients go to En and De.
double loss_cycle(const BiGANModel& model, const Tensor& x, const Tensor& z, ModelGrads* grads = nullptr);

/// D_X separates data from De(z); generator term is -mean log D_X(De z).
AdversarialLoss loss_side_data(const BiGANModel& model, const Tensor& x, const Tensor& z);
double loss_side_data(const BiGANModel& model, const Tensor& x, const Tensor& z, Objective which,
                      ModelGrads& grads);

/// D_Z separates prior codes z from En(x); generator term is -mean log D_Z(En x).
AdversarialLoss loss_side_code(const BiGANModel& model, const Tensor& x, const Tensor& z);
double loss_side_code(const BiGANModel& model, const Tensor& x, const Tensor& z, Objective which,
                      ModelGrads& grads);

struct TrainConfig {
  int batch_size = 16;
  int iterations = 1000;
  int n_critic = 5;
  double clip_c = 0.01;
  double learning_rate = 5e-5;
  double lambda_x = 1.0;
  double lambda_z = 1.0;
  double lambda_cyc = 1.0;
  /// Heading augmentation amplitude b: each sampled image is rotated by an
  /// angle drawn uniformly from (-b/2, b/2). Zero disables it.
  double rotation_augment = 0.0;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Value of the full min-max objective with the configured weights:
/// L_J + lambda_x L_X + lambda_z L_Z + lambda_cyc L_cyc. L_J is the critic
/// estimate; L_X and L_Z are the JSD value functions (the negated
/// discriminator losses); L_cyc is loss_cycle.
double full_objective(const BiGANModel& model, const Tensor& x, const Tensor& z, const TrainConfig& config);

struct LossRecord {
  int iteration = 0;
  double l_joint = 0.0;
  double l_x = 0.0;
  double l_z = 0.0;
  double l_cyc = 0.0;
  double critic_estimate = 0.0;
};

struct LossReport {
  std::vector<LossRecord> records;
};

void write_loss_csv(const std::string& path, const LossReport& report);

struct TrainHooks {
  /// Called after every critic update with the clipped critic.
  std::function<void(int iteration, const Network& joint_critic)> after_critic_step;
  /// Called after each completed epoch (ceil(N / batch_size) iterations).
  std::function<void(int epoch, const BiGANModel& model)> on_epoch;
};

/// Stable-AFL models follow: n_critic clipped critic steps, one step each for
/// D_X and D_Z, then one encoder/decoder step on the weighted objective.
/// BiGAN models alternate one JSD discriminator step and one generator step.
/// Throws NumericError carrying the iteration index on a non-finite loss.
LossReport train(BiGANModel& model, const std::vector<TopViewImage>& dataset, const TrainConfig& config,
                 const TrainHooks& hooks = {});

/// Pixels 0..255 mapped to [-1, 1], as a [1, 1, H, W] batch.
Tensor image_to_tensor(const TopViewImage& image);
Tensor images_to_batch(const std::vector<TopViewImage>& images);
Tensor sample_prior(int batch, int code_dim, std::mt19937_64& rng);

struct LatentCode {
  std::vector<double> values;
  std::uint32_t frame_id = 0;
};

LatentCode encode(const BiGANModel& model, const TopViewImage& image, std::uint32_t frame_id = 0);
std::vector<LatentCode> encode_all(const BiGANModel& model, const std::vector<TopViewImage>& images);

/// "SAFC" container: version, code_dim, frame count, then per frame a u32
/// frame id and code_dim little-endian float32 values.
inline constexpr std::uint32_t kCodeFileVersion = 1;
std::vector<char> encode_code_file(const std::vector<LatentCode>& codes, std::uint32_t code_dim);
std::vector<LatentCode> decode_code_file(const std::vector<char>& bytes, const std::string& source = "<memory>");
void save_codes(const std::string& path, const std::vector<LatentCode>& codes, std::uint32_t code_dim);
std::vector<LatentCode> load_codes(const std::string& path);

}  // namespace safl
