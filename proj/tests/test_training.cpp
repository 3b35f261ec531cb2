#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "fixtures.hpp"
#include "verse/training.hpp"

using namespace verse;
namespace fs = std::filesystem;

namespace {

Sample grid_sample(int h, int w) {
  Sample s;
  s.sample_id = "grid";
  s.image = Image({h, w});
  Mask m({h, w});
  for (int i = 0; i < h * w; ++i) {
    s.image[i] = static_cast<float>(i);
    m[i] = static_cast<std::uint8_t>(i % 3 == 0);
  }
  s.masks[0] = m;
  return s;
}

template <typename T>
std::vector<T> vec(const Tensor<T>& t) {
  return {t.values().begin(), t.values().end()};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::vector<Sample> synthetic(int n, Split split) {
  GenSpec g;
  g.image_size = 64;
  g.n_samples = n;
  g.seed = 3;
  std::vector<Sample> out;
  for (int i = 0; i < n; ++i) out.push_back(synthesize_sample(g, i, split));
  return out;
}

}  // namespace

TEST(Loss, ClosedFormAtHalfProbability) {
  const int n = 40, g_count = 10;
  Tensor<double> gt({n});
  for (int i = 0; i < g_count; ++i) gt[i] = 1.0;
  const auto p = ad::constant(Tensor<double>({n}, 0.5));
  LossConfig cfg;
  const double got = mask_loss(p, gt, cfg).value()[0];
  const double dice = 1.0 - (2 * 0.5 * g_count + 1.0) / (0.5 * n + g_count + 1.0);
  EXPECT_NEAR(got, 5.0 * std::log(2.0) + 5.0 * dice, 1e-12);
}

TEST(Loss, PerfectPredictionIsZero) {
  Tensor<double> gt({3, 3}, std::vector<double>{0, 1, 1, 0, 0, 1, 0, 0, 0});
  EXPECT_EQ(mask_loss(ad::constant(gt.clone()), gt, LossConfig{}).value()[0], 0.0);
}

TEST(Augment, FlipAndRotationIdentities) {
  const Sample s = grid_sample(4, 6);
  EXPECT_EQ(vec(flip_horizontal(flip_horizontal(s)).image), vec(s.image));
  EXPECT_EQ(vec(flip_vertical(flip_vertical(s)).image), vec(s.image));
  Sample r = s;
  for (int i = 0; i < 4; ++i) r = rotate90(r);
  EXPECT_EQ(vec(r.image), vec(s.image));
  EXPECT_EQ(vec(r.masks.at(0)), vec(s.masks.at(0)));
  const Sample hv = flip_vertical(flip_horizontal(s));
  const Sample rr = rotate90(rotate90(s));
  EXPECT_EQ(vec(hv.image), vec(rr.image));
}

TEST(Augment, RotationIsCounterClockwise) {
  const Sample r = rotate90(grid_sample(2, 3));
  ASSERT_EQ(r.image.shape(), (Shape{3, 2}));
  EXPECT_EQ(vec(r.image), (std::vector<float>{2, 5, 1, 4, 0, 3}));
}

TEST(Augment, MasksStayAlignedAndImageInRange) {
  Sample s = synthetic(1, Split::train)[0];
  Rng a(9), b(9);
  for (int i = 0; i < 20; ++i) {
    const Sample x = augment(s, a);
    const Sample y = augment(s, b);
    EXPECT_EQ(vec(x.image), vec(y.image));
    for (float v : x.image.values()) EXPECT_TRUE(v >= 0.0f && v <= 1.0f);
    for (const auto& [t, m] : s.masks) {
      const auto& mx = x.masks.at(t);
      EXPECT_EQ(std::count(mx.values().begin(), mx.values().end(), 1), std::count(m.values().begin(), m.values().end(), 1));
    }
  }
}

TEST(Episode, ShapesModesAndLossOracle) {
  VerseModel<float> m(fixture::tiny_config(64), 2);
  fixture::randomize_zero_params(m, 3);
  const Sample s = synthetic(1, Split::train)[0];
  const int target = s.masks.begin()->first;
  const Tensor<float> gt = s.masks.at(target).cast<float>();
  LossConfig lc;
  for (EpisodeKind kind : {EpisodeKind::auto_then_refine, EpisodeKind::interactive}) {
    const EpisodeResult r = build_episode(m, s, kind, target, lc);
    ASSERT_FALSE(r.episode.steps.empty());
    EXPECT_EQ(r.episode.truncated, r.episode.steps.size() < static_cast<std::size_t>(kEpisodeMasks));
    double sum = 0;
    for (std::size_t i = 0; i < r.episode.steps.size(); ++i) {
      const EpisodeStep& st = r.episode.steps[i];
      if (kind == EpisodeKind::auto_then_refine) {
        EXPECT_EQ(st.mode, i == 0 ? 1 : 2);
        EXPECT_EQ(st.clicks.size(), i);
      } else {
        EXPECT_EQ(st.mode, 3);
        EXPECT_EQ(st.clicks.size(), i + 1);
      }
      sum += mask_loss(ad::constant(st.mask), gt, lc).value()[0];
    }
    EXPECT_NEAR(r.loss.value()[0], sum / static_cast<double>(r.episode.steps.size()), 1e-4 * std::max(1.0, sum));
    if (kind == EpisodeKind::interactive) {
      EXPECT_EQ(r.episode.steps[0].clicks.ordered()[0].polarity, Polarity::positive);
    }
  }
  Sample empty = s;
  empty.masks[target] = Mask(s.masks.at(target).shape());
  EXPECT_THROW(build_episode(m, empty, EpisodeKind::interactive, target, lc), ContractError);
}

TEST(Episode, GradientsReachEveryPyramidLevel) {
  VerseModel<float> m(fixture::tiny_config(64, 8, 3), 4);
  fixture::randomize_zero_params(m, 5);
  const Sample s = synthetic(1, Split::train)[0];
  m.params().zero_grad();
  for (EpisodeKind kind : {EpisodeKind::auto_then_refine, EpisodeKind::interactive})
    ad::backward(build_episode(m, s, kind, s.masks.begin()->first, LossConfig{}).loss);
  int with_grad = 0;
  for (const auto& [name, v] : m.params().entries()) {
    const bool nonzero = v.grad().defined() &&
                         std::any_of(v.grad().values().begin(), v.grad().values().end(), [](float g) { return g != 0.0f; });
    if (name.starts_with("image_encoder.") || name.starts_with("prompt_encoder.")) {
      EXPECT_TRUE(nonzero) << name;
    }
    with_grad += nonzero;
  }
  EXPECT_GT(with_grad, static_cast<int>(m.params().entries().size()) * 3 / 4);
}

TEST(Schedule, WarmupThenCosine) {
  OptimConfig c;
  c.lr = 1e-3;
  c.min_lr = 1e-5;
  c.warmup_steps = 10;
  EXPECT_NEAR(scheduled_lr(c, 0, 110), 1e-4, 1e-15);
  EXPECT_NEAR(scheduled_lr(c, 9, 110), 1e-3, 1e-15);
  EXPECT_NEAR(scheduled_lr(c, 10, 110), 1e-3, 1e-15);
  EXPECT_NEAR(scheduled_lr(c, 60, 110), 0.5 * (1e-3 + 1e-5), 1e-15);
  EXPECT_NEAR(scheduled_lr(c, 110, 110), 1e-5, 1e-15);
  for (long long s = 10; s < 110; ++s) EXPECT_LE(scheduled_lr(c, s + 1, 110), scheduled_lr(c, s, 110));
}

TEST(Optimizer, FirstAdamWStepAndDecayScope) {
  nn::ParamStore<float> store;
  ad::Var<float> w = store.add("w", Tensor<float>({1, 2}, std::vector<float>{1.0f, -2.0f}));
  ad::Var<float> b = store.add("b", Tensor<float>({1}, std::vector<float>{0.5f}));
  const auto x = ad::constant(Tensor<float>({1, 2}, std::vector<float>{3.0f, -0.5f}));
  ad::backward(ad::linear(x, w, b));
  OptimConfig c;
  c.weight_decay = 0.1;
  AdamW opt(store, c);
  const double lr = 0.01;
  opt.step(lr);
  // First bias-corrected step moves each coordinate by lr * sign(g).
  EXPECT_NEAR(w.value()[0], 1.0 - lr * 0.1 * 1.0 - lr, 1e-6);
  EXPECT_NEAR(w.value()[1], -2.0 - lr * 0.1 * -2.0 + lr, 1e-6);
  EXPECT_NEAR(b.value()[0], 0.5 - lr, 1e-6);
  EXPECT_EQ(opt.steps(), 1);
}

TEST(Optimizer, ClipScalesToMaxNorm) {
  nn::ParamStore<float> store;
  ad::Var<float> w = store.add("w", Tensor<float>({1, 2}, std::vector<float>{0.0f, 0.0f}));
  ad::Var<float> b = store.add("b", Tensor<float>({1}, 0.0f));
  ad::backward(ad::linear(ad::constant(Tensor<float>({1, 2}, std::vector<float>{3.0f, 0.0f})), w, b));
  OptimConfig c;
  AdamW opt(store, c);
  EXPECT_NEAR(opt.clip_gradients(1.0), std::sqrt(10.0), 1e-6);
  EXPECT_NEAR(opt.clip_gradients(0.0), 1.0, 1e-6);
  EXPECT_NEAR(w.grad()[0], 3.0 / std::sqrt(10.0), 1e-6);
}

TEST(TrainConfigTest, PresetValidAndBadValuesRejected) {
  const TrainConfig d = desk_preset();
  EXPECT_NO_THROW(d.validate());
  EXPECT_EQ(d.model.channels(), 64);
  EXPECT_LE(d.epochs, 40);
  const nlohmann::json j = d;
  EXPECT_EQ(nlohmann::json(j.get<TrainConfig>()), j);
  TrainConfig bad = d;
  bad.batch_size = 0;
  EXPECT_ANY_THROW(bad.validate());
  bad = d;
  bad.p_mode12 = 1.5;
  EXPECT_ANY_THROW(bad.validate());
  bad = d;
  bad.optim.lr = -1;
  EXPECT_ANY_THROW(bad.validate());
}

TEST(Fit, SameSeedSameLogAndLossFalls) {
  TrainConfig c;
  c.model = fixture::tiny_config(64, 8, 3);
  c.epochs = 3;
  c.batch_size = 4;
  c.seed = 5;
  c.optim.lr = 3e-3;
  c.optim.min_lr = 3e-4;
  const auto train = synthetic(8, Split::train);
  const auto val = synthetic(2, Split::val);
  const fs::path root = fs::temp_directory_path() / ("verse_fit_" + std::to_string(::getpid()));
  const FitResult a = fit(c, train, val, root / "a");
  fit(c, train, val, root / "b");
  EXPECT_EQ(slurp(root / "a" / "metrics.jsonl"), slurp(root / "b" / "metrics.jsonl"));
  EXPECT_TRUE(fs::exists(root / "a" / "checkpoint.vckp"));
  EXPECT_TRUE(fs::exists(root / "a" / "config.json"));
  ASSERT_EQ(a.history.size(), 3u);
  EXPECT_GT(a.history.front().train_loss, a.history.back().train_loss);
  std::ifstream is(root / "a" / "metrics.jsonl");
  std::string line;
  while (std::getline(is, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* k : {"epoch", "train_loss", "val_dice_mode1", "val_dice3_mode3"}) EXPECT_TRUE(j.contains(k)) << k;
  }
  const auto reloaded = VerseModel<float>::load(a.checkpoint);
  EXPECT_EQ(reloaded->config().channels(), 8);
  fs::remove_all(root);
}
