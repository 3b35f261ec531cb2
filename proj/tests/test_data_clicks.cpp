#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "verse/clicks.hpp"
#include "verse/components.hpp"
#include "verse/dataio.hpp"
#include "verse/png_io.hpp"

using namespace verse;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("verse_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

Mask square(int n, int y0, int y1, int x0, int x1) {
  Mask m({n, n});
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) m[static_cast<std::size_t>(y) * n + x] = 1;
  return m;
}

}  // namespace

TEST(Generator, DeterministicBytes) {
  GenSpec g;
  g.n_samples = 4;
  g.image_size = 64;
  g.seed = 7;
  const fs::path a = temp_dir("gen_a"), b = temp_dir("gen_b");
  generate_synthetic_dataset(g, a);
  generate_synthetic_dataset(g, b);
  for (const auto& e : fs::directory_iterator(a)) {
    if (e.is_directory()) continue;
    EXPECT_EQ(slurp(e.path()), slurp(b / e.path().filename())) << e.path();
  }
  const DatasetManifest m = read_manifest(a);
  for (const auto& e : m.entries) {
    EXPECT_EQ(slurp(a / e.image_file), slurp(b / e.image_file));
    EXPECT_EQ(slurp(a / e.mask_file), slurp(b / e.mask_file));
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Generator, MaskShapesAt256) {
  GenSpec g;
  g.n_samples = 2;
  g.image_size = 256;
  for (int i = 0; i < g.n_samples; ++i) {
    const Sample s = synthesize_sample(g, i);
    ASSERT_EQ(s.masks.size(), 3u);
    for (const auto& [t, m] : s.masks) EXPECT_EQ(m.shape(), (Shape{256, 256}));
    EXPECT_EQ(s.image.shape(), (Shape{256, 256}));
  }
}

TEST(Generator, TargetsDisjointAndSingleComponent) {
  GenSpec g;
  g.n_samples = 200;
  g.image_size = 64;
  g.seed = 3;
  for (int i = 0; i < g.n_samples; ++i) {
    const Sample s = synthesize_sample(g, i);
    const Mask& lv = s.masks.at(0);
    const Mask& myo = s.masks.at(1);
    const Mask& rv = s.masks.at(2);
    for (std::size_t p = 0; p < lv.size(); ++p) {
      ASSERT_FALSE(lv[p] && myo[p]) << s.sample_id;
      ASSERT_FALSE(rv[p] && (lv[p] || myo[p])) << s.sample_id;
    }
    for (const auto& [t, m] : s.masks) {
      const Components c = label_components(m.data(), 64, 64);
      EXPECT_EQ(c.sizes.size(), 1u) << s.sample_id << " target " << t;
    }
    EXPECT_GE(*std::min_element(s.image.values().begin(), s.image.values().end()), 0.0f);
    EXPECT_EQ(*std::max_element(s.image.values().begin(), s.image.values().end()), 1.0f);
  }
}

TEST(Generator, InvalidSpecsRejected) {
  GenSpec g;
  g.image_size = 60;
  EXPECT_THROW(g.validate(), ContractError);
  g.image_size = 72;
  EXPECT_NO_THROW(g.validate());
  g.n_targets = 0;
  EXPECT_THROW(g.validate(), ContractError);
}

TEST(DataIO, RoundTripMatchesGenerator) {
  GenSpec g;
  g.n_samples = 3;
  g.image_size = 64;
  g.seed = 11;
  const fs::path root = temp_dir("roundtrip");
  const DatasetManifest m = generate_synthetic_dataset(g, root, Split::val);
  EXPECT_EQ(m.split, Split::val);
  const DatasetManifest back = read_manifest(root / "manifest.json");
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t i = 0; i < back.size(); ++i) {
    const Sample loaded = load_sample(back, i);
    const Sample mem = synthesize_sample(g, static_cast<int>(i), Split::val);
    EXPECT_EQ(loaded.sample_id, mem.sample_id);
    for (std::size_t p = 0; p < mem.image.size(); ++p) EXPECT_NEAR(loaded.image[p], mem.image[p], 1.0 / 65535);
    for (const auto& [t, mask] : mem.masks) {
      ASSERT_TRUE(loaded.masks.count(t));
      EXPECT_TRUE(std::equal(mask.values().begin(), mask.values().end(), loaded.masks.at(t).values().begin()));
    }
  }
  EXPECT_THROW(load_sample(back, back.size()), RangeError);
  fs::remove_all(root);
}

TEST(DataIO, MissingFileIsIoError) {
  GenSpec g;
  g.n_samples = 1;
  g.image_size = 64;
  const fs::path root = temp_dir("missing");
  const DatasetManifest m = generate_synthetic_dataset(g, root);
  fs::remove(root / m.entries[0].image_file);
  EXPECT_THROW(load_sample(m, 0), IoError);
  EXPECT_THROW(read_manifest(root / "nope.json"), IoError);
  fs::remove_all(root);
}

TEST(DataIO, MaskShapeMismatchIsFormatError) {
  GenSpec g;
  g.n_samples = 1;
  g.image_size = 64;
  const fs::path root = temp_dir("mismatch");
  const DatasetManifest m = generate_synthetic_dataset(g, root);
  std::vector<std::uint8_t> idx(32 * 32, 0);
  png::write_file(root / m.entries[0].mask_file, png::encode_indexed(32, 32, idx));
  EXPECT_THROW(load_sample(m, 0), FormatError);
  fs::remove_all(root);
}

TEST(DataIO, SixteenBitMaxMapsToOne) {
  std::vector<std::uint16_t> px = {100, 200, 300, 4000};
  png::Raster r = png::decode(png::encode_gray16(2, 2, px));
  const Image img = image_from_raster(r);
  EXPECT_FLOAT_EQ(img[3], 1.0f);
  EXPECT_FLOAT_EQ(img[0], 0.0f);
}

TEST(Rasterize, DiskCounts) {
  ClickSet cs;
  cs.add({10, 10, Polarity::positive, 0});
  const DensePrompt d = rasterize(cs, 20, 20);
  int pos = 0, neg = 0;
  for (int i = 0; i < 400; ++i) {
    pos += d[i * 3 + 1] == 1.0f;
    neg += d[i * 3 + 2] == 1.0f;
  }
  EXPECT_EQ(pos, 5);
  EXPECT_EQ(neg, 0);

  ClickSet corner;
  corner.add({0, 0, Polarity::negative, 0});
  const DensePrompt c = rasterize(corner, 20, 20);
  int n = 0;
  for (int i = 0; i < 400; ++i) n += c[i * 3 + 2] == 1.0f;
  EXPECT_EQ(n, 3);

  const DensePrompt z = rasterize(ClickSet{}, Tensor<float>({8, 8}));
  for (float v : z.values()) EXPECT_EQ(v, 0.0f);
}

TEST(Rasterize, OrderInvariantAndCarriesPrevMask) {
  Tensor<float> prev({12, 12}, 0.25f);
  ClickSet a, b;
  a.add({2, 3, Polarity::positive, 0});
  a.add({7, 7, Polarity::positive, 1});
  b.add({7, 7, Polarity::positive, 0});
  b.add({2, 3, Polarity::positive, 1});
  const DensePrompt da = rasterize(a, prev), db = rasterize(b, prev);
  EXPECT_TRUE(std::equal(da.values().begin(), da.values().end(), db.values().begin()));
  EXPECT_EQ(da[0], 0.25f);
  EXPECT_THROW(rasterize(a, Tensor<float>({12, 12, 1})), ContractError);
}

TEST(ClickSetTest, CapacityAndDuplicates) {
  ClickSet cs;
  for (int i = 0; i < kMaxClicksPerPolarity; ++i) cs.add({i, 0, Polarity::positive, i});
  EXPECT_THROW(cs.add({30, 0, Polarity::positive, 99}), LimitError);
  EXPECT_NO_THROW(cs.add({0, 0, Polarity::negative, 24}));
  EXPECT_THROW(cs.add({0, 0, Polarity::negative, 25}), ContractError);
  EXPECT_TRUE(cs.pop_last());
  EXPECT_EQ(cs.negatives().size(), 0u);
}

TEST(Pad, FlagsAndSentinels) {
  ClickSet cs;
  for (int i = 0; i < 3; ++i) cs.add({i, i, Polarity::positive, i});
  const PaddedClicks p = pad(cs);
  ASSERT_EQ(p.positive_valid.size(), 24u);
  for (int i = 0; i < 24; ++i) {
    EXPECT_EQ(p.positive_valid[i], i < 3);
    EXPECT_EQ(p.negative_valid[i], 0);
    if (i >= 3) {
      EXPECT_EQ(p.positive_points[i][0], PaddedClicks::kSentinel);
    }
  }
  const PaddedClicks e = pad(ClickSet{});
  EXPECT_EQ(e.positive_count() + e.negative_count(), 0);
  ClickSet full;
  for (int i = 0; i < 24; ++i) full.add({i, 1, Polarity::positive, i});
  EXPECT_EQ(pad(full).positive_count(), 24);
  EXPECT_THROW(pad(full, 10), ContractError);
}

TEST(NextClick, SquareCentre) {
  const Mask gt = square(10, 2, 6, 2, 6);
  const auto c = next_click(Mask({10, 10}), gt);
  ASSERT_TRUE(c);
  EXPECT_EQ(c->x, 4);
  EXPECT_EQ(c->y, 4);
  EXPECT_EQ(c->polarity, Polarity::positive);
}

TEST(NextClick, SingleExtraPixelIsNegative) {
  const Mask gt = square(10, 2, 6, 2, 6);
  Mask pred = gt.clone();
  pred[8 * 10 + 8] = 1;
  const auto c = next_click(pred, gt);
  ASSERT_TRUE(c);
  EXPECT_EQ(c->x, 8);
  EXPECT_EQ(c->y, 8);
  EXPECT_EQ(c->polarity, Polarity::negative);
}

TEST(NextClick, LargerComponentWins) {
  Mask gt({10, 10}), pred({10, 10});
  for (int x = 0; x < 6; ++x)
    for (int y = 0; y < 2; ++y) gt[y * 10 + x] = 1;  // 12 pixels
  for (int x = 7; x < 10; ++x) pred[8 * 10 + x] = 1;  // 3 pixels
  const auto c = next_click(pred, gt);
  ASSERT_TRUE(c);
  EXPECT_LT(c->y, 2);
  EXPECT_LT(c->x, 6);
}

TEST(NextClick, NoErrorNoClick) {
  const Mask gt = square(8, 1, 3, 1, 3);
  EXPECT_FALSE(next_click(gt, gt).has_value());
}

TEST(NextClick, MatchesOracleAndReducesError) {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 150; ++trial) {
    const int h = 8 + static_cast<int>(rng() % 17), w = 8 + static_cast<int>(rng() % 17);
    const Mask gt = oracle::random_mask(h, w, rng), pred = oracle::random_mask(h, w, rng);
    const auto a = next_click(pred, gt);
    const auto b = oracle::next_click(pred, gt);
    ASSERT_EQ(a.has_value(), b.has_value());
    if (!a) continue;
    EXPECT_EQ(a->x, b->x) << trial;
    EXPECT_EQ(a->y, b->y) << trial;
    EXPECT_EQ(a->polarity, b->polarity);
    const std::size_t i = static_cast<std::size_t>(a->y) * w + a->x;
    EXPECT_NE(pred[i] != 0, gt[i] != 0);
  }
}

TEST(DistanceTransform, MatchesBruteForce) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 40; ++trial) {
    const int h = 4 + static_cast<int>(rng() % 12), w = 4 + static_cast<int>(rng() % 12);
    const Mask m = oracle::random_mask(h, w, rng, 0.8);
    std::vector<std::uint8_t> region(m.values().begin(), m.values().end());
    const auto d = squared_distance_to_complement(region.data(), h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        EXPECT_EQ(d[i], region[i] ? oracle::brute_sq_distance(region, h, w, x, y) : 0);
      }
  }
}

TEST(Components, FirstPixelOrderAndSizes) {
  const std::vector<std::uint8_t> m = {1, 1, 0, 1,  //
                                       0, 0, 0, 1,  //
                                       1, 0, 0, 0};
  const Components c = label_components(m.data(), 3, 4);
  ASSERT_EQ(c.sizes.size(), 3u);
  EXPECT_EQ(c.sizes[0], 2);
  EXPECT_EQ(c.sizes[1], 2);
  EXPECT_EQ(c.sizes[2], 1);
  EXPECT_EQ(c.first_pixel[1], 3);
}
