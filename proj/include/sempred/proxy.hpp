#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sempred/core.hpp"

namespace sempred {

struct TrainingConfig {
  double temperature = 0.1;
  double lambda = 0.2;  // phase-2 mix: lambda*supcon + (1-lambda)*polar
  double learning_rate = 1e-3;
  int epochs_phase1 = 30;
  int epochs_phase2 = 30;
  int batch_size = 64;
  std::uint64_t seed = 0;
  double rebalance_min_ratio = 0.3;
  double noise_sigma_scale = 0.1;
  int hidden1 = 256;
  int hidden2 = 128;
  int latent_dim = 128;
  int projector_hidden = 128;
  int projector_dim = 64;
  // When set, bellwethers follow the prose reading (most similar positive,
  // least similar negative) instead of the default argmin/argmax selection.
  bool bellwether_prose = false;

  void validate() const;
};

// 3-layer rectifier MLP encoder plus a 2-layer projector head used only while
// training. Parameters live in one flat vector so the optimizer and gradient
// checks can treat them uniformly.
class EncoderParams {
 public:
  struct Layer {
    std::size_t w_off = 0;
    std::size_t b_off = 0;
    int in = 0;
    int out = 0;
  };

  static EncoderParams init(int input_dim, const TrainingConfig& cfg, std::uint64_t seed);

  int input_dim() const { return encoder_[0].in; }
  int latent_dim() const { return encoder_[2].out; }
  int projector_dim() const { return projector_[1].out; }
  const std::array<Layer, 3>& encoder_layers() const { return encoder_; }
  const std::array<Layer, 2>& projector_layers() const { return projector_; }

  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }
  std::size_t size() const { return values_.size(); }

  void save(const std::filesystem::path& manifest_path) const;
  static EncoderParams load(const std::filesystem::path& manifest_path);

  static EncoderParams with_shapes(int input_dim, int h1, int h2, int latent, int proj_hidden, int proj_out);

 private:
  std::array<Layer, 3> encoder_{};
  std::array<Layer, 2> projector_{};
  std::vector<double> values_;
};

// Latent representation of one embedding; use_projector selects the training
// head output (R^p) over the encoder output (R^l).
std::vector<double> encode(const EncoderParams& params, std::span<const float> e, bool use_projector);

// Inference-path score: (cos(z_q, z_d) + 1) / 2 on encoder latents.
double decision_score(const EncoderParams& params, std::span<const float> e_q, std::span<const float> e_d);

// Per-document decision scores, preserving collection order. Pure function;
// fans out across threads when n_threads != 1 (0 = hardware default).
class ScoreSet {
 public:
  void add(std::string doc_id, double score);
  std::size_t size() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }
  const std::vector<double>& values() const { return values_; }
  double at(std::string_view doc_id) const;
  bool contains(std::string_view doc_id) const;

  void save_csv(const std::filesystem::path& path) const;
  static ScoreSet load_csv(const std::filesystem::path& path);

 private:
  std::vector<std::string> ids_;
  std::vector<double> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

ScoreSet score_all(const EncoderParams& params, const Workload& workload, int n_threads = 0);

struct MiniBatch {
  std::vector<float> query;
  std::vector<std::vector<float>> docs;
  std::vector<std::uint8_t> labels;

  int positives() const;
  int negatives() const;
  void validate(int dim) const;
};

struct LossResult {
  double loss = 0.0;
  std::vector<double> grad;  // same layout as EncoderParams::values()
};

struct PolarResult : LossResult {
  int bellwether_pos = -1;  // index into batch.docs
  int bellwether_neg = -1;
};

// Contrastive losses on projector-space cosine similarities. Gradients are
// exact analytic derivatives of the stated formulas; all exp sums are
// log-sum-exp shifted.
LossResult loss_qsim(const EncoderParams& params, const MiniBatch& batch, double tau);
LossResult loss_supcon(const EncoderParams& params, const MiniBatch& batch, double tau);
PolarResult loss_polar(const EncoderParams& params, const MiniBatch& batch, double tau,
                       bool bellwether_prose = false);
// Polar loss with the bellwether choice held fixed (selection carries no
// gradient, so this is the function the analytic gradients differentiate).
LossResult loss_polar_pinned(const EncoderParams& params, const MiniBatch& batch, double tau, int bellwether_pos,
                             int bellwether_neg);

// Similarity-level cores, exposed for direct checks against the formulas.
// Returned gradients are d(loss)/d(similarity).
double qsim_from_similarities(std::span<const double> pos_sims, std::span<const double> neg_sims, double tau,
                              std::span<double> d_pos, std::span<double> d_neg);

struct LabeledEmbedding {
  std::vector<float> values;
  bool label = false;
};

// Appends Gaussian-noise copies of the minority class until its ratio reaches
// config.rebalance_min_ratio. Originals are preserved verbatim as a prefix.
std::vector<LabeledEmbedding> rebalance(const std::vector<LabeledEmbedding>& train_embeddings,
                                        const TrainingConfig& config, std::uint64_t seed);

// Two-phase training: phase 1 minimizes qsim, phase 2 the joint
// lambda*supcon + (1-lambda)*polar objective, continuing from phase-1 weights.
EncoderParams train_proxy(const Workload& workload, const LabelSet& train_labels, const TrainingConfig& config);

}  // namespace sempred
