#include "verse/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numbers>

#include "verse/errors.hpp"

namespace verse {

void LossConfig::validate() const {
  if (!(ce_weight >= 0) || !(dice_weight >= 0)) throw ConfigError("loss weights must be non-negative");
  if (!(smooth >= 0)) throw ConfigError("dice smoothing must be non-negative");
}

void OptimConfig::validate() const {
  if (!(lr > 0) || !(min_lr >= 0) || min_lr > lr) throw ConfigError("need 0 <= min_lr <= lr and lr > 0");
  if (warmup_steps < 0 || !(weight_decay >= 0) || !(grad_clip >= 0)) throw ConfigError("bad optimizer settings");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1) || !(eps > 0)) throw ConfigError("bad Adam moments");
}

void TrainConfig::validate() const {
  if (epochs < 0 || batch_size < 1) throw ConfigError("epochs must be >= 0 and batch_size >= 1");
  if (!(p_mode12 >= 0 && p_mode12 <= 1)) throw ConfigError("p_mode12 must lie in [0, 1]");
  if (val_samples < 0) throw ConfigError("val_samples must be non-negative");
  loss.validate();
  optim.validate();
  model.validate();
}

TrainConfig desk_preset() {
  TrainConfig c;
  c.epochs = 40;
  c.batch_size = 8;
  c.val_samples = 16;
  c.optim.lr = 1e-3;
  c.optim.min_lr = 2e-5;
  c.optim.warmup_steps = 25;
  c.optim.grad_clip = 1.0;
  c.model.image_size = 64;
  c.model.set_channels(64);
  c.model.decoder.ffn_dim = 128;
  c.model.decoder.mask_hidden = 64;
  return c;
}

void to_json(nlohmann::json& j, const LossConfig& c) {
  j = {{"ce_weight", c.ce_weight}, {"dice_weight", c.dice_weight}, {"smooth", c.smooth}};
}

void from_json(const nlohmann::json& j, LossConfig& c) {
  c.ce_weight = j.value("ce_weight", c.ce_weight);
  c.dice_weight = j.value("dice_weight", c.dice_weight);
  c.smooth = j.value("smooth", c.smooth);
}

void to_json(nlohmann::json& j, const OptimConfig& c) {
  j = {{"lr", c.lr},       {"min_lr", c.min_lr}, {"warmup_steps", c.warmup_steps}, {"weight_decay", c.weight_decay},
       {"beta1", c.beta1}, {"beta2", c.beta2},   {"eps", c.eps},                   {"grad_clip", c.grad_clip}};
}

void from_json(const nlohmann::json& j, OptimConfig& c) {
  c.lr = j.value("lr", c.lr);
  c.min_lr = j.value("min_lr", c.min_lr);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps = j.value("eps", c.eps);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"seed", c.seed},
       {"p_mode12", c.p_mode12},
       {"augment", c.augment},
       {"deep_supervision", c.deep_supervision},
       {"val_samples", c.val_samples},
       {"loss", c.loss},
       {"optim", c.optim},
       {"model", c.model}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  c.p_mode12 = j.value("p_mode12", c.p_mode12);
  c.augment = j.value("augment", c.augment);
  c.deep_supervision = j.value("deep_supervision", c.deep_supervision);
  c.val_samples = j.value("val_samples", c.val_samples);
  if (j.contains("loss")) from_json(j.at("loss"), c.loss);
  if (j.contains("optim")) from_json(j.at("optim"), c.optim);
  if (j.contains("model")) from_json(j.at("model"), c.model);
}

template <typename T>
ad::Var<T> mask_loss(const ad::Var<T>& pred, const Tensor<T>& gt, const LossConfig& cfg) {
  return ad::bce_dice_loss(pred, gt, static_cast<T>(cfg.ce_weight), static_cast<T>(cfg.dice_weight),
                           static_cast<T>(cfg.smooth));
}

template ad::Var<float> mask_loss<float>(const ad::Var<float>&, const Tensor<float>&, const LossConfig&);
template ad::Var<double> mask_loss<double>(const ad::Var<double>&, const Tensor<double>&, const LossConfig&);

namespace {

template <typename U, typename F>
Tensor<U> remap(const Tensor<U>& in, int out_h, int out_w, F src_index) {
  Tensor<U> out({out_h, out_w});
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x) out[static_cast<std::size_t>(y) * out_w + x] = in[src_index(y, x)];
  return out;
}

template <typename F>
Sample remap_sample(const Sample& s, int out_h, int out_w, F src_index) {
  Sample o;
  o.sample_id = s.sample_id;
  o.image = remap(s.image, out_h, out_w, src_index);
  for (const auto& [t, m] : s.masks) o.masks[t] = remap(m, out_h, out_w, src_index);
  return o;
}

}  // namespace

Sample flip_horizontal(const Sample& s) {
  const int h = s.height(), w = s.width();
  return remap_sample(s, h, w, [w](int y, int x) { return static_cast<std::size_t>(y) * w + (w - 1 - x); });
}

Sample flip_vertical(const Sample& s) {
  const int h = s.height(), w = s.width();
  return remap_sample(s, h, w, [h, w](int y, int x) { return static_cast<std::size_t>(h - 1 - y) * w + x; });
}

Sample rotate90(const Sample& s) {
  const int h = s.height(), w = s.width();
  // Counter-clockwise: out[y][x] = in[x][w - 1 - y], output is w x h.
  return remap_sample(s, w, h, [w](int y, int x) { return static_cast<std::size_t>(x) * w + (w - 1 - y); });
}

Sample augment(const Sample& sample, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Sample s = sample;
  if (unit(rng) < 0.5) s = flip_horizontal(s);
  if (unit(rng) < 0.5) s = flip_vertical(s);
  const int turns = std::uniform_int_distribution<int>(0, 3)(rng);
  for (int i = 0; i < turns; ++i) s = rotate90(s);
  const double delta = std::uniform_real_distribution<double>(-0.2, 0.2)(rng);
  const double gamma = std::exp(std::uniform_real_distribution<double>(std::log(0.8), std::log(1.25))(rng));
  Image img = s.image.clone();
  for (auto& v : img.values()) v = static_cast<float>(std::clamp(gamma * v + delta, 0.0, 1.0));
  s.image = img;
  return s;
}

EpisodeResult build_episode(const VerseModel<float>& model, const Sample& sample, EpisodeKind kind, int target_id,
                            const LossConfig& loss, bool deep_supervision) {
  const Mask& gt = sample.masks.at(target_id);
  if (std::none_of(gt.values().begin(), gt.values().end(), [](std::uint8_t v) { return v != 0; }))
    throw ContractError("empty ground truth for " + sample.sample_id);
  const Tensor<float> gt_f = gt.cast<float>();
  const FeaturePyramid<float> pyr = model.encode_image(sample.image);

  EpisodeResult res;
  res.episode.kind = kind;
  std::vector<ad::Var<float>> losses;
  PromptRequest req;
  req.target_id = target_id;
  Tensor<float> prev({sample.height(), sample.width()});

  auto run = [&](int mode) {
    req.mode = mode;
    req.prev_mask = prev;
    const Prediction<float> p = model.predict(pyr, req, nullptr, deep_supervision);
    if (deep_supervision) {
      std::vector<ad::Var<float>> parts;
      for (const auto& m : p.layer_masks) parts.push_back(mask_loss(m, gt_f, loss));
      losses.push_back(ad::mean_of(parts));
    } else {
      losses.push_back(mask_loss(p.mask, gt_f, loss));
    }
    prev = p.mask.value().clone();
    res.episode.steps.push_back({mode, req.clicks, prev});
  };
  auto click = [&]() {
    const std::optional<Click> c = next_click(binarize(prev), gt, req.clicks.next_order());
    if (!c) return false;
    try {
      req.clicks.add(*c);
    } catch (const ContractError&) {
      return false;
    }
    return true;
  };

  if (kind == EpisodeKind::auto_then_refine) {
    run(1);
    for (int r = 0; r < kEpisodeMasks - 1; ++r) {
      if (!click()) {
        res.episode.truncated = true;
        break;
      }
      run(2);
    }
  } else {
    req.target_id.reset();
    for (int r = 0; r < kEpisodeMasks; ++r) {
      if (!click()) {
        res.episode.truncated = true;
        break;
      }
      run(3);
    }
  }
  res.loss = ad::mean_of(losses);
  return res;
}

AdamW::AdamW(nn::ParamStore<float>& params, const OptimConfig& cfg) : params_(params), cfg_(cfg) {
  for (const auto& [name, v] : params.entries()) {
    m_.emplace_back(v.value().size(), 0.0f);
    v_.emplace_back(v.value().size(), 0.0f);
  }
}

double AdamW::clip_gradients(double max_norm) {
  double sq = 0;
  for (const auto& [name, v] : params_.entries())
    if (v.grad().defined())
      for (float g : v.grad().values()) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const float s = static_cast<float>(max_norm / norm);
    for (const auto& [name, v] : params_.entries())
      if (v.grad().defined()) {
        Tensor<float> g = v.grad();
        for (auto& x : g.values()) x *= s;
      }
  }
  return norm;
}

void AdamW::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  std::size_t idx = 0;
  for (const auto& [name, var] : params_.entries()) {
    ad::Var<float> handle = var;
    Tensor<float>& w = handle.mutable_value();
    const Tensor<float>& g = var.grad();
    auto& m = m_[idx];
    auto& v = v_[idx];
    ++idx;
    if (!g.defined()) continue;
    const bool decay = w.rank() >= 2;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      m[i] = static_cast<float>(cfg_.beta1 * m[i] + (1 - cfg_.beta1) * gi);
      v[i] = static_cast<float>(cfg_.beta2 * v[i] + (1 - cfg_.beta2) * gi * gi);
      const double mh = m[i] / bc1, vh = v[i] / bc2;
      double wi = w[i];
      if (decay) wi -= lr * cfg_.weight_decay * wi;
      wi -= lr * mh / (std::sqrt(vh) + cfg_.eps);
      w[i] = static_cast<float>(wi);
    }
  }
}

double scheduled_lr(const OptimConfig& cfg, long long step, long long total_steps) {
  if (cfg.warmup_steps > 0 && step < cfg.warmup_steps) return cfg.lr * static_cast<double>(step + 1) / cfg.warmup_steps;
  const long long span = std::max<long long>(1, total_steps - cfg.warmup_steps);
  const double progress = std::clamp(static_cast<double>(step - cfg.warmup_steps) / span, 0.0, 1.0);
  return cfg.min_lr + 0.5 * (cfg.lr - cfg.min_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

nlohmann::json to_json(const EpochMetrics& m) {
  return {{"epoch", m.epoch},
          {"train_loss", m.train_loss},
          {"val_dice_mode1", m.val_dice_mode1},
          {"val_dice3_mode3", m.val_dice3_mode3},
          {"lr", m.lr},
          {"skipped", m.skipped}};
}

std::pair<double, double> validation_scores(const VerseModel<float>& model, const std::vector<Sample>& val) {
  if (val.empty()) return {0.0, 0.0};
  // Non-owning view; the predictor does not outlive this call.
  const VersePredictor predictor(std::shared_ptr<const VerseModel<float>>(&model, [](const VerseModel<float>*) {}));
  EvalProtocol m1;
  m1.mode = 1;
  EvalProtocol m3;
  m3.mode = 3;
  m3.max_clicks = 3;
  const double d1 = evaluate_protocol(predictor, val, m1).dice_at.at(0);
  const double d3 = evaluate_protocol(predictor, val, m3).dice_at.at(3);
  return {d1, d3};
}

FitResult fit(const TrainConfig& cfg, const std::vector<Sample>& train, const std::vector<Sample>& val,
              const std::filesystem::path& out_dir, const std::function<void(const EpochMetrics&)>& on_epoch,
              std::shared_ptr<VerseModel<float>>* trained) {
  cfg.validate();
  if (train.empty()) throw ContractError("training set is empty");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir.string());
  {
    std::ofstream os(out_dir / "config.json", std::ios::trunc);
    if (!os) throw IoError("cannot write config under " + out_dir.string());
    os << nlohmann::json(cfg).dump(2) << "\n";
  }
  std::ofstream log(out_dir / "metrics.jsonl", std::ios::trunc);
  if (!log) throw IoError("cannot write metrics log under " + out_dir.string());

  auto model = std::make_shared<VerseModel<float>>(cfg.model, cfg.seed);
  AdamW opt(model->params(), cfg.optim);
  Rng rng(cfg.seed ^ 0x5eedULL);
  std::vector<Sample> val_subset(val.begin(), val.begin() + (cfg.val_samples > 0
                                                                   ? std::min<std::size_t>(cfg.val_samples, val.size())
                                                                   : val.size()));
  const long long per_epoch = (static_cast<long long>(train.size()) + cfg.batch_size - 1) / cfg.batch_size;
  const long long total = per_epoch * cfg.epochs;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  FitResult result;
  result.checkpoint = out_dir / "checkpoint.vckp";
  long long step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    EpochMetrics em;
    em.epoch = epoch;
    double loss_sum = 0;
    int loss_count = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), b + cfg.batch_size);
      const EpisodeKind kind = std::bernoulli_distribution(cfg.p_mode12)(rng) ? EpisodeKind::auto_then_refine
                                                                            : EpisodeKind::interactive;
      model->params().zero_grad();
      const float inv = 1.0f / static_cast<float>(end - b);
      for (std::size_t i = b; i < end; ++i) {
        const Sample s = cfg.augment ? augment(train[order[i]], rng) : train[order[i]];
        std::vector<int> targets;
        for (const auto& [t, m] : s.masks)
          if (t < cfg.model.num_targets() &&
              std::any_of(m.values().begin(), m.values().end(), [](std::uint8_t v) { return v != 0; }))
            targets.push_back(t);
        if (targets.empty()) {
          ++em.skipped;
          std::cerr << "warning: skipping " << s.sample_id << " (no non-empty target)\n";
          continue;
        }
        const int target = targets[std::uniform_int_distribution<std::size_t>(0, targets.size() - 1)(rng)];
        EpisodeResult er = build_episode(*model, s, kind, target, cfg.loss, cfg.deep_supervision);
        const double lv = er.loss.value()[0];
        if (!std::isfinite(lv)) {
          Archive dump = model->to_archive({{"failed_sample", s.sample_id}, {"epoch", epoch}, {"step", step}});
          dump.add("failed_sample.image", s.image.clone());
          write_archive(out_dir / "failure_dump.vckp", dump);
          throw TrainingError("non-finite loss on " + s.sample_id + " at epoch " + std::to_string(epoch) +
                              "; diagnostic dump written to " + (out_dir / "failure_dump.vckp").string());
        }
        loss_sum += lv;
        ++loss_count;
        ad::backward(ad::scale(er.loss, inv));
      }
      if (cfg.optim.grad_clip > 0) opt.clip_gradients(cfg.optim.grad_clip);
      em.lr = scheduled_lr(cfg.optim, step, total);
      opt.step(em.lr);
      ++step;
    }
    em.train_loss = loss_count ? loss_sum / loss_count : 0.0;
    std::tie(em.val_dice_mode1, em.val_dice3_mode3) = validation_scores(*model, val_subset);
    em.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log << to_json(em).dump() << "\n";
    log.flush();
    model->save(result.checkpoint, {{"epoch", epoch}, {"train", cfg}});
    result.history.push_back(em);
    if (on_epoch) on_epoch(em);
  }
  if (cfg.epochs == 0) model->save(result.checkpoint, {{"epoch", 0}, {"train", cfg}});
  if (trained) *trained = model;
  return result;
}

}  // namespace verse
