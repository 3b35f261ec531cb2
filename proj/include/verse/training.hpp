#pragma once

#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "verse/eval.hpp"
#include "verse/model.hpp"

namespace verse {

struct LossConfig {
  double ce_weight = 5.0;
  double dice_weight = 5.0;
  double smooth = 1.0;

  void validate() const;
};

template <typename T>
ad::Var<T> mask_loss(const ad::Var<T>& pred, const Tensor<T>& gt, const LossConfig& cfg);

struct OptimConfig {
  double lr = 1e-4;
  double min_lr = 1e-6;
  int warmup_steps = 0;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Global gradient-norm clip; 0 disables.
  double grad_clip = 0.0;

  void validate() const;
};

struct TrainConfig {
  int epochs = 75;
  int batch_size = 8;
  std::uint64_t seed = 0;
  /// Probability that a batch runs Mode-1&2 episodes rather than Mode-3.
  double p_mode12 = 0.5;
  bool augment = true;
  bool deep_supervision = false;
  /// Validation instances per epoch (0 = the whole validation set).
  int val_samples = 0;
  LossConfig loss;
  OptimConfig optim;
  ModelConfig model;

  void validate() const;
};

/// Desk-scale settings: 64x64 images, C = 64, short cosine schedule.
TrainConfig desk_preset();

void to_json(nlohmann::json& j, const LossConfig& c);
void from_json(const nlohmann::json& j, LossConfig& c);
void to_json(nlohmann::json& j, const OptimConfig& c);
void from_json(const nlohmann::json& j, OptimConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

using Rng = std::mt19937_64;

/// Random flips and 90-degree rotations on image and masks alike, plus
/// brightness and contrast jitter on the image only.
Sample augment(const Sample& sample, Rng& rng);

Sample flip_horizontal(const Sample& s);
Sample flip_vertical(const Sample& s);
Sample rotate90(const Sample& s);

enum class EpisodeKind { auto_then_refine, interactive };

struct EpisodeStep {
  int mode = 1;
  ClickSet clicks;
  Tensor<float> mask;
};

struct InteractionEpisode {
  EpisodeKind kind = EpisodeKind::interactive;
  std::vector<EpisodeStep> steps;
  bool truncated = false;
};

struct EpisodeResult {
  InteractionEpisode episode;
  ad::Var<float> loss;
};

/// Number of masks in a full episode of either kind.
inline constexpr int kEpisodeMasks = 3;

EpisodeResult build_episode(const VerseModel<float>& model, const Sample& sample, EpisodeKind kind, int target_id,
                            const LossConfig& loss, bool deep_supervision = false);

class AdamW {
 public:
  AdamW(nn::ParamStore<float>& params, const OptimConfig& cfg);
  void step(double lr);
  long long steps() const { return t_; }
  /// Scales gradients so their global norm is at most max_norm; returns the norm before scaling.
  double clip_gradients(double max_norm);

 private:
  nn::ParamStore<float>& params_;
  OptimConfig cfg_;
  std::vector<std::vector<float>> m_, v_;
  long long t_ = 0;
};

/// Linear warmup then cosine decay from lr to min_lr over total_steps.
double scheduled_lr(const OptimConfig& cfg, long long step, long long total_steps);

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0;
  double val_dice_mode1 = 0;
  double val_dice3_mode3 = 0;
  double lr = 0;
  double seconds = 0;
  int skipped = 0;
};

nlohmann::json to_json(const EpochMetrics& m);

struct FitResult {
  std::vector<EpochMetrics> history;
  std::filesystem::path checkpoint;
};

/// Trains a fresh model. Writes checkpoint.vckp, metrics.jsonl and
/// config.json into out_dir. on_epoch, when set, sees each epoch's metrics.
FitResult fit(const TrainConfig& cfg, const std::vector<Sample>& train, const std::vector<Sample>& val,
              const std::filesystem::path& out_dir,
              const std::function<void(const EpochMetrics&)>& on_epoch = nullptr,
              std::shared_ptr<VerseModel<float>>* trained = nullptr);

/// Mean Mode-1 Dice and Mode-3 Dice after 3 clicks.
std::pair<double, double> validation_scores(const VerseModel<float>& model, const std::vector<Sample>& val);

}  // namespace verse
