#include <gtest/gtest.h>

#include <fstream>

#include "test_util.hpp"
#include "winnet/ops.hpp"
#include "winnet/pipeline.hpp"

using namespace winnet;
using testutil::Td;

namespace {

Td ramp_image(std::int64_t H, std::int64_t W) {
  std::vector<double> v(static_cast<std::size_t>(H * W));
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>((i * 37) % 256);
  return Td({1, H, W}, v);
}

void write_bytes(const std::filesystem::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary);
  f << s;
}

ImageError::Kind load_error(const std::string& path) {
  try {
    load_image<double>(path);
  } catch (const ImageError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error for " << path;
  return ImageError::Kind::Unwritable;
}

}  // namespace

TEST(ImageIo, PgmAndPngRoundTrip) {
  auto dir = testutil::scratch_dir("imgio");
  auto img = ramp_image(13, 17);
  for (const char* name : {"a.pgm", "a.png"}) {
    const auto path = (dir / name).string();
    save_image(img, path);
    auto back = load_image<double>(path);
    EXPECT_EQ(back.shape(), (Shape{1, 13, 17}));
    EXPECT_EQ(back.vec(), img.vec()) << name;
    save_image(back, (dir / "again.pgm").string());
    EXPECT_EQ(load_image<double>((dir / "again.pgm").string()).vec(), img.vec());
  }
}

TEST(ImageIo, AsciiAndSixteenBitPgm) {
  auto dir = testutil::scratch_dir("imgio_ascii");
  write_bytes(dir / "a.pgm", "P2\n# comment\n3 2\n255\n0 1 2\n253 254 255\n");
  auto a = load_image<double>((dir / "a.pgm").string());
  EXPECT_EQ(a.vec(), (std::vector<double>{0, 1, 2, 253, 254, 255}));
  write_bytes(dir / "b.pgm", std::string("P5\n2 1\n65535\n\xff\xff\x00\x00", 18));
  auto b = load_image<double>((dir / "b.pgm").string());
  EXPECT_DOUBLE_EQ(b.vec()[0], 255.0);
  EXPECT_DOUBLE_EQ(b.vec()[1], 0.0);
}

TEST(ImageIo, AllBlackIsZero) {
  auto dir = testutil::scratch_dir("imgio_black");
  save_image(Td::zeros({1, 5, 5}), (dir / "k.png").string());
  const auto k = load_image<double>((dir / "k.png").string());
  for (double v : k.vec()) EXPECT_EQ(v, 0.0);
}

TEST(ImageIo, SaveClampsAndRoundsHalfToEven) {
  auto dir = testutil::scratch_dir("imgio_clamp");
  const auto path = (dir / "c.pgm").string();
  save_image(Td({1, 1, 6}, {300.0, -4.0, 2.5, 3.5, 10.49, 254.6}), path);
  EXPECT_EQ(load_image<double>(path).vec(), (std::vector<double>{255, 0, 2, 4, 10, 255}));
}

TEST(ImageIo, ColourInputIsRejected) {
  auto dir = testutil::scratch_dir("imgio_colour");
  write_bytes(dir / "c.ppm", std::string("P6\n1 1\n255\n\x01\x02\x03", 14));
  EXPECT_EQ(load_error((dir / "c.ppm").string()), ImageError::Kind::NotGrayscale);
  png_image out{};
  out.version = PNG_IMAGE_VERSION;
  out.width = 2;
  out.height = 1;
  out.format = PNG_FORMAT_RGB;
  const unsigned char px[6] = {10, 20, 30, 40, 50, 60};
  ASSERT_TRUE(png_image_write_to_file(&out, (dir / "c.png").c_str(), 0, px, 0, nullptr));
  EXPECT_EQ(load_error((dir / "c.png").string()), ImageError::Kind::NotGrayscale);
}

TEST(ImageIo, UnreadableAndUnwritable) {
  auto dir = testutil::scratch_dir("imgio_bad");
  EXPECT_EQ(load_error((dir / "missing.pgm").string()), ImageError::Kind::Unreadable);
  write_bytes(dir / "junk.pgm", "hello world");
  EXPECT_EQ(load_error((dir / "junk.pgm").string()), ImageError::Kind::Unreadable);
  write_bytes(dir / "short.pgm", "P5\n4 4\n255\nab");
  EXPECT_EQ(load_error((dir / "short.pgm").string()), ImageError::Kind::Unreadable);
  write_bytes(dir / "junk.png", "not a png");
  EXPECT_EQ(load_error((dir / "junk.png").string()), ImageError::Kind::Unreadable);
  try {
    save_image(Td::zeros({1, 2, 2}), "/nonexistent/dir/x.pgm");
    FAIL();
  } catch (const ImageError& e) {
    EXPECT_EQ(e.kind(), ImageError::Kind::Unwritable);
  }
}

TEST(Awgn, ZeroSigmaIsIdentity) {
  auto x = ramp_image(8, 8);
  EXPECT_EQ(awgn(x, 0.0, 3).vec(), x.vec());
}

TEST(Awgn, DeterministicPerSeed) {
  auto x = Td::zeros({1, 16, 16});
  EXPECT_EQ(awgn(x, 5.0, 1).vec(), awgn(x, 5.0, 1).vec());
  EXPECT_NE(awgn(x, 5.0, 1).vec(), awgn(x, 5.0, 2).vec());
}

TEST(Awgn, MomentsMatchSigma) {
  const std::int64_t n = 1000 * 1000;
  const double sigma = 25.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto y = awgn(Td::zeros({1, 1000, 1000}), sigma, seed);
    double s = 0, s2 = 0;
    for (double v : y.vec()) {
      s += v;
      s2 += v * v;
    }
    const double mean = s / n, var = s2 / n - mean * mean;
    EXPECT_LT(std::abs(mean), 3 * sigma / std::sqrt(static_cast<double>(n))) << "seed " << seed;
    EXPECT_NEAR(var, sigma * sigma, 0.01 * sigma * sigma) << "seed " << seed;
  }
}

TEST(Awgn, NoClampingAndBadSigma) {
  auto y = awgn(Td::full({1, 50, 50}, 250.0), 30.0, 4);
  EXPECT_GT(*std::max_element(y.vec().begin(), y.vec().end()), 255.0);
  EXPECT_THROW(awgn(y, -1.0, 0), ArgumentError);
}

TEST(Psnr, KnownValues) {
  auto a = ramp_image(10, 10);
  EXPECT_EQ(psnr(a, a), 99.0);
  EXPECT_NEAR(psnr(Td::zeros({1, 4, 4}), Td::full({1, 4, 4}, 255.0)), 0.0, 1e-12);
  // uniform error 25 gives MSE 625
  EXPECT_NEAR(psnr(a, add_scalar(a, 25.0)), 10 * std::log10(255.0 * 255.0 / 625.0), 1e-12);
  EXPECT_NEAR(10 * std::log10(255.0 * 255.0 / 625.0), 20.17, 0.005);
}

TEST(Psnr, NoisyBaselineNearClosedForm) {
  auto x = Td::full({1, 256, 256}, 128.0);
  EXPECT_NEAR(psnr(x, awgn(x, 25.0, 7)), 20.17, 0.05);
}

TEST(Psnr, SymmetricAndShapeChecked) {
  std::mt19937_64 gen(5);
  auto a = testutil::random_image<double>(9, 9, gen), b = testutil::random_image<double>(9, 9, gen);
  EXPECT_EQ(psnr(a, b), psnr(b, a));
  EXPECT_THROW(psnr(a, Td::zeros({1, 9, 8})), ArgumentError);
}

TEST(Dataset, ListingIsSortedAndFiltered) {
  auto dir = testutil::scratch_dir("listing");
  for (const char* n : {"b.pgm", "a.PNG", "c.txt", "d.png"}) write_bytes(dir / n, "x");
  auto files = list_images(dir.string());
  ASSERT_EQ(files.size(), 3u);
  EXPECT_EQ(std::filesystem::path(files[0]).filename(), "a.PNG");
  EXPECT_EQ(std::filesystem::path(files[2]).filename(), "d.png");
  EXPECT_THROW(list_images((dir / "nope").string()), ImageError);
}

TEST(Dataset, PatchCountForOneImage) {
  auto dir = testutil::scratch_dir("ds_one");
  save_image(ramp_image(180, 180), (dir / "a.pgm").string());
  DatasetOptions o;
  auto ds = build_patch_dataset<float>(dir.string(), o);
  EXPECT_EQ(ds.size(), 64);
  EXPECT_EQ(ds.patches.shape(), (Shape{64, 1, 40, 40}));
  // patch 9 is row 1, column 1 of the patch grid
  EXPECT_EQ(ds.manifest[9].y, 20);
  EXPECT_EQ(ds.manifest[9].x, 20);
  const auto img = ramp_image(180, 180);
  EXPECT_EQ(ds.patches.vec()[9 * 1600 + 3 * 40 + 5], static_cast<float>(img.vec()[(20 + 3) * 180 + 20 + 5]));
}

TEST(Dataset, CapAndDeterminism) {
  DatasetOptions o;
  o.count = 10;
  o.seed = 3;
  const auto dir = testutil::data_dir("train");
  auto a = build_patch_dataset<float>(dir, o), b = build_patch_dataset<float>(dir, o);
  EXPECT_EQ(a.size(), 10);
  EXPECT_EQ(dataset_hash(a), dataset_hash(b));
  o.seed = 4;
  EXPECT_NE(dataset_hash(a), dataset_hash(build_patch_dataset<float>(dir, o)));
  for (double v : a.patches.vec()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 255.0);
  }
}

TEST(Dataset, TrainingFixtureSize) {
  DatasetOptions o;
  auto ds = build_patch_dataset<float>(testutil::data_dir("train"), o);
  EXPECT_EQ(list_images(testutil::data_dir("train")).size(), 24u);
  EXPECT_EQ(ds.size(), 24 * 64);
}

TEST(Dataset, AugmentIsSeededPermutationOfPixels) {
  auto dir = testutil::scratch_dir("ds_aug");
  save_image(ramp_image(60, 60), (dir / "a.pgm").string());
  DatasetOptions o;
  auto plain = build_patch_dataset<double>(dir.string(), o);
  o.augment = true;
  auto a1 = build_patch_dataset<double>(dir.string(), o), a2 = build_patch_dataset<double>(dir.string(), o);
  EXPECT_EQ(a1.patches.vec(), a2.patches.vec());
  for (std::int64_t k = 0; k < plain.size(); ++k) {
    std::vector<double> p(plain.patches.vec().begin() + k * 1600, plain.patches.vec().begin() + (k + 1) * 1600);
    std::vector<double> q(a1.patches.vec().begin() + k * 1600, a1.patches.vec().begin() + (k + 1) * 1600);
    std::sort(p.begin(), p.end());
    std::sort(q.begin(), q.end());
    EXPECT_EQ(p, q);
  }
}

TEST(Dataset, ManifestAndErrors) {
  auto dir = testutil::scratch_dir("ds_manifest");
  save_image(ramp_image(50, 45), (dir / "a.pgm").string());
  DatasetOptions o;
  o.stride = 5;
  auto ds = build_patch_dataset<float>(dir.string(), o);
  EXPECT_EQ(ds.size(), 3 * 2);
  write_manifest(ds, (dir / "m.txt").string());
  const auto text = testutil::read_file(dir / "m.txt");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 6);
  EXPECT_NE(text.find("a.pgm\t5\t0\n"), std::string::npos);

  auto empty = testutil::scratch_dir("ds_empty");
  EXPECT_THROW(build_patch_dataset<float>(empty.string(), o), ArgumentError);
  o.patch = 64;
  EXPECT_THROW(build_patch_dataset<float>(dir.string(), o), ArgumentError);
  o.patch = 40;
  o.stride = 0;
  EXPECT_THROW(build_patch_dataset<float>(dir.string(), o), ArgumentError);
}

TEST(Dataset, BatchGathersPatches) {
  auto dir = testutil::scratch_dir("ds_batch");
  save_image(ramp_image(80, 80), (dir / "a.pgm").string());
  auto ds = build_patch_dataset<float>(dir.string(), DatasetOptions{});
  const std::int64_t idx[2] = {3, 1};
  auto b = ds.batch(idx);
  EXPECT_EQ(b.shape(), (Shape{2, 1, 40, 40}));
  EXPECT_TRUE(std::equal(b.vec().begin(), b.vec().begin() + 1600, ds.patches.vec().begin() + 3 * 1600));
  EXPECT_TRUE(std::equal(b.vec().begin() + 1600, b.vec().end(), ds.patches.vec().begin() + 1600));
}
