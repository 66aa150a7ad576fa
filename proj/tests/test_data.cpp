#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <string>

#include "mhcnn/data.hpp"
#include "support.hpp"

using namespace mhcnn;
using namespace mhcnn::data;
using test_support::TempDir;

namespace {

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

ImageBuffer random_image(std::size_t h, std::size_t w, std::size_t c, std::uint64_t seed) {
  ImageBuffer img(h, w, c);
  Rng rng(seed);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  return img;
}

Tensor<float> rotate_chw(const Tensor<float>& t, int k) {
  const auto r = ops::rotate90(ops::reshape(t, {1, t.dim(0), t.dim(1), t.dim(2)}), k);
  return ops::reshape(r, {r.dim(1), r.dim(2), r.dim(3)});
}

}  // namespace

TEST(Pnm, RoundTripGrayAndColor) {
  for (std::size_t c : {1u, 3u})
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto img = random_image(3 + seed, 5 + 2 * seed, c, seed);
      const auto bytes = write_pnm(img);
      EXPECT_EQ(read_pnm(bytes), img);
      EXPECT_EQ(write_pnm(read_pnm(bytes)), bytes);
    }
}

TEST(Pnm, HeaderLayout) {
  ImageBuffer img(2, 3, 1);
  const auto bytes = write_pnm(img);
  const std::string header(bytes.begin(), bytes.begin() + 11);
  EXPECT_EQ(header, "P5\n3 2\n255\n");
  EXPECT_EQ(bytes.size(), 11u + 6u);
}

TEST(Pnm, CommentsAndWhitespace) {
  auto bytes = bytes_of("P5 # a comment\n# another\n 2\t1 \n255\n");
  bytes.push_back(7);
  bytes.push_back(200);
  const auto img = read_pnm(bytes);
  EXPECT_EQ(img.width, 2u);
  EXPECT_EQ(img.height, 1u);
  EXPECT_EQ(img.at(0, 0), 7);
  EXPECT_EQ(img.at(0, 1), 200);
}

TEST(Pnm, PayloadMayStartWithWhitespaceByte) {
  // Exactly one separator follows maxval; a payload byte of '\n' is data.
  auto bytes = bytes_of("P5\n1 1\n255\n");
  bytes.push_back('\n');
  EXPECT_EQ(read_pnm(bytes).at(0, 0), '\n');
}

TEST(Pnm, Errors) {
  EXPECT_THROW(read_pnm(bytes_of("P2\n1 1\n255\n0")), PnmError);
  EXPECT_THROW(read_pnm(bytes_of("P5\n1 1\n65535\n00")), PnmError);
  EXPECT_THROW(read_pnm(bytes_of("P5\n0 1\n255\n")), PnmError);
  EXPECT_THROW(read_pnm(bytes_of("P5\n2 2\n255\nabc")), PnmError);
  EXPECT_THROW(read_pnm(bytes_of("P6\n1 1\n255\nab")), PnmError);
  EXPECT_THROW(read_pnm(bytes_of("P5\n2")), PnmError);
  EXPECT_THROW(read_pnm(bytes_of("")), PnmError);
  EXPECT_THROW(read_pnm(bytes_of("P5\nx 1\n255\n0")), PnmError);
  // Every truncation of a valid file fails cleanly.
  const auto good = write_pnm(random_image(4, 4, 3, 1));
  for (std::size_t n = 0; n < good.size(); ++n)
    EXPECT_THROW(read_pnm(std::span(good.data(), n)), PnmError) << n;
}

TEST(Pnm, FileRoundTrip) {
  TempDir dir("pnm");
  const auto img = random_image(9, 13, 3, 4);
  save_pnm(dir / "a.ppm", img);
  EXPECT_EQ(load_pnm(dir / "a.ppm"), img);
  EXPECT_THROW(load_pnm(dir / "missing.pgm"), DataError);
}

TEST(Conversion, FloatRoundTripIsExact) {
  for (std::size_t c : {1u, 3u}) {
    const auto img = random_image(7, 5, c, 11 + c);
    const auto t = to_float(img);
    EXPECT_EQ(t.shape(), (Shape{c, 7, 5}));
    EXPECT_EQ(from_float(t), img);
  }
}

TEST(Conversion, ChannelPlanes) {
  ImageBuffer img(1, 2, 3);
  img.pixels = {10, 20, 30, 40, 50, 60};
  const auto t = to_float(img);
  EXPECT_FLOAT_EQ(t[0], 10 / 255.0F);
  EXPECT_FLOAT_EQ(t[1], 40 / 255.0F);
  EXPECT_FLOAT_EQ(t[2], 20 / 255.0F);
  EXPECT_FLOAT_EQ(t[5], 60 / 255.0F);
}

TEST(Conversion, ClampAndRounding) {
  Tensor<float> t({1, 1, 5}, {-0.5F, 1.5F, 0.5F / 255.0F, 1.49F / 255.0F, 254.51F / 255.0F});
  const auto img = from_float(t);
  EXPECT_EQ(img.at(0, 0), 0);
  EXPECT_EQ(img.at(0, 1), 255);
  EXPECT_EQ(img.at(0, 2), 1);
  EXPECT_EQ(img.at(0, 3), 1);
  EXPECT_EQ(img.at(0, 4), 255);
}

TEST(Noise, StatisticsAndDeterminism) {
  const auto clean = Tensor<float>::fill({1, 200, 200}, 0.5F);
  for (double sigma : {15.0, 25.0, 50.0}) {
    const auto noisy = add_awgn(clean, {sigma, 3});
    double sum = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < noisy.size(); ++i) {
      const double d = static_cast<double>(noisy[i]) - clean[i];
      sum += d;
      sq += d * d;
    }
    const double n = static_cast<double>(noisy.size());
    const double std = std::sqrt(sq / n - (sum / n) * (sum / n));
    EXPECT_NEAR(std, sigma / 255.0, 0.02 * sigma / 255.0);
    EXPECT_NEAR(sum / n, 0.0, 4.0 * sigma / 255.0 / std::sqrt(n));
    EXPECT_EQ(add_awgn(clean, {sigma, 3}), noisy);
    EXPECT_NE(add_awgn(clean, {sigma, 4}), noisy);
  }
}

TEST(Noise, UnclampedAndZeroSigma) {
  const auto clean = Tensor<float>::fill({1, 50, 50}, 1.0F);
  const auto noisy = add_awgn(clean, {50.0, 1});
  EXPECT_GT(*std::max_element(noisy.ptr(), noisy.ptr() + noisy.size()), 1.0F);
  EXPECT_EQ(add_awgn(clean, {0.0, 1}), clean);
  EXPECT_THROW(add_awgn(clean, {-1.0, 1}), std::invalid_argument);
}

TEST(Synthetic, DeterministicAndVaried) {
  const auto a = gen_synthetic(4, 32, 7);
  const auto b = gen_synthetic(4, 32, 7);
  ASSERT_EQ(a.size(), 4u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i], b[i]);
    EXPECT_EQ(a[i].height, 32u);
    EXPECT_EQ(a[i].channels, 1u);
    const auto [lo, hi] = std::minmax_element(a[i].pixels.begin(), a[i].pixels.end());
    EXPECT_GT(*hi - *lo, 50) << "image " << i << " lacks contrast";
    std::set<std::uint8_t> levels(a[i].pixels.begin(), a[i].pixels.end());
    EXPECT_GT(levels.size(), 20u);
  }
  EXPECT_NE(a[0], a[1]);
  EXPECT_NE(gen_synthetic(1, 32, 8)[0], a[0]);
  EXPECT_EQ(gen_synthetic(2, 20, 1, 3)[1].channels, 3u);
  EXPECT_THROW(gen_synthetic(1, 8, 0), std::invalid_argument);
}

TEST(Patches, GridSubsetAndExtra) {
  const std::vector<Tensor<float>> images{Tensor<float>({1, 64, 64}), Tensor<float>({1, 40, 72})};
  const auto grid = patch_locations(images, {32, 16, 0, 0});
  // 3x3 on the first image, 1x3 on the second (40 rows fit one 32-row window).
  EXPECT_EQ(grid.size(), 9u + 3u);
  for (const auto& loc : grid) {
    EXPECT_LE(loc.y + 32, images[loc.image].dim(1));
    EXPECT_LE(loc.x + 32, images[loc.image].dim(2));
  }

  const auto subset = patch_locations(images, {32, 16, 5, 9});
  EXPECT_EQ(subset.size(), 5u);
  for (const auto& loc : subset) EXPECT_NE(std::find(grid.begin(), grid.end(), loc), grid.end());
  EXPECT_EQ(patch_locations(images, {32, 16, 5, 9}), subset);

  const auto extra = patch_locations(images, {32, 16, 40, 9});
  EXPECT_EQ(extra.size(), 40u);
  EXPECT_TRUE(std::equal(grid.begin(), grid.end(), extra.begin()));
  for (const auto& loc : extra) {
    EXPECT_LE(loc.y + 32, images[loc.image].dim(1));
    EXPECT_LE(loc.x + 32, images[loc.image].dim(2));
  }

  EXPECT_THROW(patch_locations({Tensor<float>({1, 16, 16})}, {32, 16, 0, 0}), DataError);
  EXPECT_THROW(patch_locations({}, {32, 16, 0, 0}), DataError);
  EXPECT_THROW(patch_locations(images, {0, 16, 0, 0}), std::invalid_argument);
}

TEST(Patches, CropContent) {
  Tensor<float> img({2, 5, 6});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(i);
  const auto p = crop(img, 1, 2, 3);
  EXPECT_EQ(p.shape(), (Shape{2, 3, 3}));
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t y = 0; y < 3; ++y)
      for (std::size_t x = 0; x < 3; ++x)
        EXPECT_EQ(p[(c * 3 + y) * 3 + x], img[(c * 5 + y + 1) * 6 + x + 2]);
  EXPECT_THROW(crop(img, 3, 0, 3), ShapeError);
}

TEST(Patches, ExtractAndRenoise) {
  std::vector<Tensor<float>> images;
  for (const auto& img : gen_synthetic(3, 32, 2)) images.push_back(to_float(img));
  auto set = extract_patches(images, {16, 8, 0, 0}, {25.0, 5});
  EXPECT_EQ(set.size(), 27u);
  EXPECT_EQ(set.noisy.size(), set.size());
  EXPECT_EQ(set.clean[0], crop(images[0], 0, 0, 16));
  for (std::size_t i = 0; i < set.size(); ++i) EXPECT_EQ(set.noisy[i], add_awgn(set.clean[i], {25.0, mix_seed(5, i)}));

  const auto before = set.noisy;
  renoise(set, {25.0, 6});
  EXPECT_NE(set.noisy[0], before[0]);
  renoise(set, {25.0, 5});
  EXPECT_EQ(set.noisy, before);
}

TEST(Patches, PairedCropsAlign) {
  std::vector<Tensor<float>> clean{Tensor<float>::gaussian({1, 24, 24}, 0, 1, 1)};
  std::vector<Tensor<float>> noisy{Tensor<float>::gaussian({1, 24, 24}, 0, 1, 2)};
  const auto set = extract_paired_patches(clean, noisy, {8, 8, 0, 0});
  ASSERT_EQ(set.size(), 9u);
  EXPECT_EQ(set.clean[4], crop(clean[0], 8, 8, 8));
  EXPECT_EQ(set.noisy[4], crop(noisy[0], 8, 8, 8));
  noisy.push_back(noisy[0]);
  EXPECT_THROW(extract_paired_patches(clean, noisy, {8, 8, 0, 0}), DataError);
}

TEST(Augment, SameTurnForBothMembers) {
  std::set<int> seen;
  for (std::uint64_t seed = 0; seed < 64; ++seed) {
    const int k = augment_turns(seed);
    ASSERT_GE(k, 0);
    ASSERT_LT(k, 4);
    seen.insert(k);
    const auto c = Tensor<float>::gaussian({2, 6, 6}, 0, 1, seed);
    const auto n = Tensor<float>::gaussian({2, 6, 6}, 0, 1, seed + 100);
    const auto [rc, rn] = augment(c, n, seed);
    EXPECT_EQ(rc, rotate_chw(c, k));
    EXPECT_EQ(rn, rotate_chw(n, k));
  }
  EXPECT_EQ(seen.size(), 4u);
  EXPECT_THROW(augment(Tensor<float>({1, 4, 6}), Tensor<float>({1, 4, 6}), 0), ShapeError);
}

TEST(Batching, IndicesArePermutation) {
  const auto batches = batch_indices(23, 5, 9);
  ASSERT_EQ(batches.size(), 5u);
  EXPECT_EQ(batches.back().size(), 3u);
  std::vector<std::size_t> all;
  for (const auto& b : batches) all.insert(all.end(), b.begin(), b.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(all[i], i);
  EXPECT_EQ(batch_indices(23, 5, 9), batches);
  EXPECT_NE(batch_indices(23, 5, 10), batches);
  EXPECT_THROW(batch_indices(3, 0, 0), std::invalid_argument);
  EXPECT_THROW(batch_indices(0, 2, 0), DataError);
}

TEST(Batching, IteratorCoversEachPatchOnce) {
  PatchSet set;
  set.patch_size = 4;
  for (int i = 0; i < 10; ++i) {
    set.clean.push_back(Tensor<float>::fill({1, 4, 4}, static_cast<float>(i)));
    set.noisy.push_back(Tensor<float>::fill({1, 4, 4}, static_cast<float>(i) + 0.5F));
  }
  for (bool aug : {false, true}) {
    BatchIterator it(set, 4, 3, aug);
    EXPECT_EQ(it.batches(), 3u);
    Batch b;
    std::multiset<float> seen;
    while (it.next(b)) {
      ASSERT_EQ(b.clean.rank(), 4u);
      ASSERT_EQ(b.clean.shape(), b.noisy.shape());
      for (std::size_t k = 0; k < b.clean.dim(0); ++k) {
        const float v = b.clean[k * 16];
        seen.insert(v);
        EXPECT_EQ(b.noisy[k * 16], v + 0.5F);
      }
    }
    EXPECT_EQ(seen.size(), 10u);
    for (int i = 0; i < 10; ++i) EXPECT_EQ(seen.count(static_cast<float>(i)), 1u);
  }
}

TEST(Batching, StackLayout) {
  const auto a = Tensor<float>::fill({2, 3, 3}, 1.0F);
  const auto b = Tensor<float>::fill({2, 3, 3}, 2.0F);
  const auto s = stack({a, b});
  EXPECT_EQ(s.shape(), (Shape{2, 2, 3, 3}));
  EXPECT_EQ(s[17], 1.0F);
  EXPECT_EQ(s[18], 2.0F);
  EXPECT_THROW(stack({a, Tensor<float>({2, 3, 4})}), ShapeError);
}

TEST(Folders, SortedAndFiltered) {
  TempDir dir("folder");
  save_pnm(dir / "b.pgm", random_image(4, 4, 1, 1));
  save_pnm(dir / "a.ppm", random_image(4, 4, 3, 2));
  std::ofstream(dir / "notes.txt") << "skip";
  const auto images = load_folder(dir.path());
  ASSERT_EQ(images.size(), 2u);
  EXPECT_EQ(images[0].first, "a.ppm");
  EXPECT_EQ(images[1].first, "b.pgm");
  EXPECT_EQ(images[0].second, random_image(4, 4, 3, 2));
  EXPECT_THROW(load_folder(dir / "nope"), DataError);
}

TEST(Folders, PairedMatchingByName) {
  TempDir dir("paired");
  std::filesystem::create_directories(dir / "clean");
  std::filesystem::create_directories(dir / "noisy");
  save_pnm(dir / "clean/x.pgm", random_image(5, 5, 1, 1));
  save_pnm(dir / "noisy/x.pgm", random_image(5, 5, 1, 2));
  const auto pairs = load_paired_folder(dir.path());
  ASSERT_EQ(pairs.size(), 1u);
  EXPECT_EQ(pairs[0].clean, random_image(5, 5, 1, 1));
  EXPECT_EQ(pairs[0].noisy, random_image(5, 5, 1, 2));

  save_pnm(dir / "clean/y.pgm", random_image(5, 5, 1, 3));
  EXPECT_THROW(load_paired_folder(dir.path()), DataError);
  save_pnm(dir / "noisy/y.pgm", random_image(6, 5, 1, 3));
  EXPECT_THROW(load_paired_folder(dir.path()), DataError);
}
