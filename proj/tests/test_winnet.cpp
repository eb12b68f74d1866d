#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "test_util.hpp"
#include "winnet/model_io.hpp"
#include "winnet/pipeline.hpp"
#include "winnet/winnet.hpp"

using namespace winnet;
using testutil::Td;

namespace {

WinnetConfig tiny_config() {
  WinnetConfig c;
  c.M = 1;
  c.J = 1;
  c.width = 4;
  c.q = 3;
  c.clista_atoms = 16;
  c.clista_layers = 2;
  return c;
}

/// Overwrite every PUNet conv (and Cayley theta) with random values; thresholds keep their init.
template <typename T>
void randomize_lifting(WinnetModel<T>& m, std::uint64_t seed, double spread = 0.2) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> n(0, spread);
  for (auto& [name, t] : named_tensors(m)) {
    const bool punet_conv = (name.find(".predict") != std::string::npos || name.find(".update") != std::string::npos) &&
                            name.find("theta") == std::string::npos;
    const bool frame_theta = name.size() == 12 && name.substr(6) == ".theta";
    if (!punet_conv && !frame_theta) continue;
    for (auto& v : t.vec()) v = static_cast<T>(n(gen));
  }
}

template <typename T>
double max_abs(const Tensor<T>& a, const Tensor<T>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.vec().size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a.vec()[i]) - static_cast<double>(b.vec()[i])));
  return m;
}

}  // namespace

TEST(Config, MapRoundTrip) {
  WinnetConfig c = tiny_config();
  c.K = 2;
  c.frame = FrameSource::Cayley;
  c.sigma_ref = 15.5;
  c.blind = true;
  c.seed = 123456789012345ULL;
  c.punet_threshold_init = 0.07;
  auto back = WinnetConfig::from_map(c.to_map());
  EXPECT_EQ(back.to_map(), c.to_map());
}

TEST(Config, ValidateRejectsBadValues) {
  auto bad = [](auto mutate) {
    WinnetConfig c;
    mutate(c);
    EXPECT_THROW(c.validate(), ArgumentError);
  };
  bad([](WinnetConfig& c) { c.K = 0; });
  bad([](WinnetConfig& c) { c.c = 15; });
  bad([](WinnetConfig& c) { c.h = 16; });
  bad([](WinnetConfig& c) { c.K = 2, c.h = 2; });
  bad([](WinnetConfig& c) { c.q = 4; });
  bad([](WinnetConfig& c) { c.clista_atoms = 10; });
  bad([](WinnetConfig& c) { c.sigma_ref = 0; });
  EXPECT_THROW(WinnetConfig::from_map({{"M", "four"}}), ArgumentError);
  EXPECT_THROW(WinnetConfig::from_map({{"frame", "haar"}}), ArgumentError);
}

TEST(Model, DefaultParameterCount) {
  // PUNet: 3x3 input conv, J blocks of two (q x q depthwise + 1x1) pairs, 3x3 output conv, thresholds.
  const std::int64_t w = 32, q = 5, J = 4, c = 16, h = 1;
  auto punet = [&](std::int64_t cin, std::int64_t cout) {
    return cin * w * 9 + w + J * (2 * (w * q * q + w * w) + w) + cout * w * 9;
  };
  const std::int64_t lifting = 4 * (punet(h, c - h) + punet(c - h, h));
  const std::int64_t clista = 2 * 64 * (c - h) * 9 + 3 * 64;
  auto m = make_model<float>(WinnetConfig{});
  EXPECT_EQ(parameter_count(m), lifting + clista);
  EXPECT_EQ(parameter_count(m), 172352);
  EXPECT_EQ(parameter_count(m, true) - parameter_count(m), 6336);
}

TEST(Model, ScaleStructure) {
  WinnetConfig c = tiny_config();
  c.K = 2;
  c.M = 3;
  auto m = make_model<double>(c);
  ASSERT_EQ(m.K(), 2);
  for (int k = 0; k < 2; ++k) {
    EXPECT_EQ(m.scales[k].linn.dilation(), 1 << k);
    EXPECT_EQ(m.scales[k].linn.predict.size(), 3u);
    EXPECT_EQ(m.scales[k].linn.update.size(), 3u);
  }
}

TEST(Model, TensorNamesAreUnique) {
  WinnetConfig c = tiny_config();
  c.K = 2;
  c.frame = FrameSource::Cayley;
  auto m = make_model<double>(c);
  std::set<std::string> names;
  for (auto& [name, t] : named_tensors(m)) EXPECT_TRUE(names.insert(name).second) << name;
  EXPECT_TRUE(names.count("scale2.theta"));
  EXPECT_TRUE(names.count("scale1.clista.theta2"));
}

TEST(Model, ThresholdsArePositive) {
  auto m = make_model<double>(tiny_config());
  for (auto& [name, t] : named_tensors(m)) {
    if (name.find("theta") == std::string::npos || name == "scale1.theta") continue;
    const auto eff = softplus(t);
    for (double v : eff.vec()) EXPECT_GT(v, 0.0) << name;
  }
}

TEST(Model, SameSeedSameParameters) {
  auto a = make_model<float>(tiny_config()), b = make_model<float>(tiny_config());
  EXPECT_EQ(serialize_model(a), serialize_model(b));
  auto c = tiny_config();
  c.seed = 1;
  EXPECT_NE(serialize_model(a), serialize_model(make_model<float>(c)));
}

TEST(ThresholdPolicy, QuotedCases) {
  auto a = threshold_scale_policy(50, 25);
  EXPECT_EQ(a.punet, 2.0);
  EXPECT_EQ(a.clista, 2.0);
  auto b = threshold_scale_policy(15, 25);
  EXPECT_EQ(b.punet, 1.0);
  EXPECT_DOUBLE_EQ(b.clista, 0.6);
  auto c = threshold_scale_policy(25, 25);
  EXPECT_EQ(c.punet, 1.0);
  EXPECT_EQ(c.clista, 1.0);
}

TEST(ThresholdPolicy, PunetScaleIsExactlyOneBelowReference) {
  for (double s = 0; s < 25; s += 0.37) EXPECT_EQ(threshold_scale_policy(s, 25).punet, 1.0);
}

TEST(ThresholdPolicy, MonotoneInSigma) {
  ThresholdScales prev = threshold_scale_policy(0, 25);
  for (double s = 0.5; s <= 80; s += 0.5) {
    auto cur = threshold_scale_policy(s, 25);
    EXPECT_GE(cur.punet, prev.punet);
    EXPECT_GE(cur.clista, prev.clista);
    prev = cur;
  }
}

TEST(ThresholdPolicy, RejectsBadSigmas) {
  EXPECT_THROW(threshold_scale_policy(10, 0), ArgumentError);
  EXPECT_THROW(threshold_scale_policy(-1, 25), ArgumentError);
  EXPECT_THROW(threshold_scale_policy(std::nan(""), 25), ArgumentError);
}

TEST(ThresholdPolicy, BatchScales) {
  auto sym = batch_scales({10, 50}, 25, true);
  EXPECT_DOUBLE_EQ(sym.punet[0], 0.4);
  EXPECT_DOUBLE_EQ(sym.punet[1], 2.0);
  EXPECT_DOUBLE_EQ(sym.clista[0], 0.4);
  auto asym = batch_scales({10, 50}, 25, false);
  EXPECT_EQ(asym.punet[0], 1.0);
  EXPECT_DOUBLE_EQ(asym.punet[1], 2.0);
}

TEST(Denoise, FreshModelAtZeroSigmaIsIdentity) {
  auto m = make_model<float>(WinnetConfig{});
  std::mt19937_64 gen(1);
  auto y = testutil::random_image<float>(24, 24, gen);
  EXPECT_LT(max_abs(denoise(y, 0.0, m), y), 1e-3);
}

TEST(Denoise, LosslessPathForArbitraryLifting) {
  // Dual-pair CLISTA at zero scale is the identity, so only lifting + frame remain.
  for (FrameSource src : {FrameSource::Dct, FrameSource::Cayley}) {
    for (int K : {1, 2}) {
      auto c = tiny_config();
      c.K = K;
      c.frame = src;
      auto m32 = make_model<float>(c);
      auto m64 = make_model<double>(c);
      randomize_lifting(m32, 7);
      randomize_lifting(m64, 7);
      std::mt19937_64 gen(2);
      auto y64 = testutil::random_image<double>(16, 20, gen);
      Tensor<float> y32(y64.shape(), std::vector<float>(y64.vec().begin(), y64.vec().end()));
      auto out64 = denoise(y64, 0.0, m64);
      EXPECT_LT(max_abs(out64, y64), 1e-9);
      EXPECT_LT(max_abs(denoise(y32, 0.0, m32), y32), 1e-4 * 255);
      // the randomized lifting really is non-trivial
      auto cd = linn_forward(split(scale(y64, 1 / 255.0), m64.scales[0].linn.frame(), 1), m64.scales[0].linn, 1.0);
      auto plain = split(scale(y64, 1 / 255.0), m64.scales[0].linn.frame(), 1);
      EXPECT_GT(max_abs(cd.detail, plain.detail), 1e-3) << "K=" << K << " cayley=" << (src == FrameSource::Cayley);
    }
  }
}

TEST(Denoise, BatchedMatchesSingle) {
  auto m = make_model<double>(tiny_config());
  randomize_lifting(m, 3, 0.1);
  std::mt19937_64 gen(3);
  auto a = testutil::random_image<double>(12, 12, gen), b = testutil::random_image<double>(12, 12, gen);
  std::vector<double> both(a.vec());
  both.insert(both.end(), b.vec().begin(), b.vec().end());
  const double ps[2] = {1.0, 1.6}, cs[2] = {0.4, 1.6};
  auto out = denoise_scaled<double>(Td({2, 1, 12, 12}, both), m, ps, cs);
  auto oa = denoise(a, 10.0, m), ob = denoise(b, 40.0, m);
  std::vector<double> expect(oa.vec());
  expect.insert(expect.end(), ob.vec().begin(), ob.vec().end());
  EXPECT_LT(oracle::max_abs_diff(out.vec(), expect), 1e-10);
}

TEST(Denoise, Deterministic) {
  auto m = make_model<float>(tiny_config());
  randomize_lifting(m, 4, 0.1);
  auto y = awgn(Tensor<float>::full({1, 20, 20}, 100.0f), 25, 5);
  auto a = denoise(y, 25, m), b = denoise(y, 25, m);
  EXPECT_EQ(a.vec(), b.vec());
}

TEST(Denoise, BlindUsesEstimate) {
  auto m = make_model<double>(tiny_config());
  m.nenet = zero_senet<double>();
  auto y = awgn(Td::full({1, 64, 64}, 120.0), 30, 6);
  auto r = denoise_blind(y, m);
  EXPECT_NEAR(r.sigma_hat, 30.0, 3.0);
  EXPECT_EQ(r.image.vec(), denoise(y, r.sigma_hat, m).vec());
}

TEST(Denoise, BlindOnConstantImage) {
  auto m = make_model<double>(tiny_config());
  m.nenet = zero_senet<double>();
  auto y = Td::full({1, 32, 32}, 90.0);
  auto r = denoise_blind(y, m);
  EXPECT_NEAR(r.sigma_hat, 0.0, 1e-3);
  EXPECT_LT(max_abs(r.image, y), 1e-3);
}

TEST(Atom, FreshDctModelGivesFrameFilter) {
  auto m = make_model<double>(tiny_config());
  const auto F = m.scales[0].linn.frame().frame_matrix();
  for (int ch : {0, 5, 15}) {
    auto atom = visualize_atom(m, 1, ch, 2.0, 16, 16);
    ASSERT_EQ(atom.raw.shape(), (Shape{1, 16, 16}));
    std::vector<double> expect(256, 0.0);
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b) expect[(7 + a) * 16 + 7 + b] = 2.0 * F.vec()[ch * 16 + a * 4 + b] / 16.0;
    EXPECT_LT(oracle::max_abs_diff(atom.raw.vec(), expect), 1e-12) << "channel " << ch;
  }
}

TEST(Atom, NormalizedRangeAndZeroAmplitude) {
  auto m = make_model<double>(tiny_config());
  randomize_lifting(m, 8, 0.1);
  auto atom = visualize_atom(m, 1, 3, 1.25);
  const auto [lo, hi] = std::minmax_element(atom.normalized.vec().begin(), atom.normalized.vec().end());
  EXPECT_NEAR(*lo, 0.0, 1e-12);
  EXPECT_NEAR(*hi, 255.0, 1e-9);
  auto zero = visualize_atom(m, 1, 3, 0.0);
  for (double v : zero.raw.vec()) EXPECT_EQ(v, 0.0);
  for (double v : zero.normalized.vec()) EXPECT_EQ(v, 0.0);
}

TEST(Atom, SecondLevelAndErrors) {
  auto c = tiny_config();
  c.K = 2;
  auto m = make_model<double>(c);
  auto atom = visualize_atom(m, 2, 0, 1.0, 32, 32);
  EXPECT_EQ(atom.raw.shape(), (Shape{1, 32, 32}));
  EXPECT_GT(sum_squares(atom.raw).item(), 0.0);
  EXPECT_THROW(visualize_atom(m, 0, 0, 1.0), ArgumentError);
  EXPECT_THROW(visualize_atom(m, 3, 0, 1.0), ArgumentError);
  EXPECT_THROW(visualize_atom(m, 1, 16, 1.0), ArgumentError);
  EXPECT_THROW(visualize_atom(m, 1, -1, 1.0), ArgumentError);
}

TEST(ModelIo, RoundTripIsBitExact) {
  auto c = tiny_config();
  c.K = 2;
  c.frame = FrameSource::Cayley;
  auto m = make_model<float>(c);
  randomize_lifting(m, 9);
  auto dir = testutil::scratch_dir("model_io");
  const auto path = (dir / "m.winnet").string();
  save_model(m, path);
  auto back = load_model<float>(path);
  EXPECT_EQ(back.config.to_map(), m.config.to_map());
  auto a = named_tensors(m), b = named_tensors(back);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].first, b[i].first);
    EXPECT_EQ(a[i].second.vec(), b[i].second.vec()) << a[i].first;
  }
  EXPECT_EQ(serialize_model(back), serialize_model(m));
}

namespace {

ModelFormatError::Kind load_error(const std::vector<char>& buf) {
  try {
    deserialize_model<float>(buf);
  } catch (const ModelFormatError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error";
  return ModelFormatError::Kind::Io;
}

/// Byte offset just after the config block.
std::size_t directory_start(const std::vector<char>& buf) {
  std::uint32_t len;
  std::memcpy(&len, buf.data() + 12, 4);
  return 16 + len;
}

}  // namespace

TEST(ModelIo, CorruptHeaderIsVersionError) {
  auto buf = serialize_model(make_model<float>(tiny_config()));
  auto bad = buf;
  bad[0] = 'X';
  EXPECT_EQ(load_error(bad), ModelFormatError::Kind::Version);
  bad = buf;
  bad[8] = 7;
  EXPECT_EQ(load_error(bad), ModelFormatError::Kind::Version);
}

TEST(ModelIo, TruncationDetected) {
  auto buf = serialize_model(make_model<float>(tiny_config()));
  for (std::size_t keep : {std::size_t{4}, std::size_t{20}, buf.size() / 2, buf.size() - 1}) {
    std::vector<char> cut(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(keep));
    EXPECT_EQ(load_error(cut), ModelFormatError::Kind::Truncated) << keep;
  }
}

TEST(ModelIo, MissingTensorIsNamed) {
  auto buf = serialize_model(make_model<float>(tiny_config()));
  // rename the first directory entry (scale1.predict1.input_conv) so it no longer matches
  const auto pos = directory_start(buf) + 4 + 4;
  buf[pos] = 'S';
  try {
    deserialize_model<float>(buf);
    FAIL() << "no error";
  } catch (const ModelFormatError& e) {
    EXPECT_EQ(e.kind(), ModelFormatError::Kind::MissingTensor);
    EXPECT_NE(std::string(e.what()).find("scale1.predict1.input_conv"), std::string::npos);
  }
}

TEST(ModelIo, ShapeMismatchDetected) {
  auto buf = serialize_model(make_model<float>(tiny_config()));
  // first dimension of the first tensor
  const std::string name = "scale1.predict1.input_conv";
  const auto pos = directory_start(buf) + 4 + 4 + name.size() + 4;
  buf[pos] = static_cast<char>(buf[pos] + 1);
  EXPECT_EQ(load_error(buf), ModelFormatError::Kind::Shape);
}

TEST(ModelIo, BadConfigAndIo) {
  WinnetConfig c = tiny_config();
  auto buf = serialize_model(make_model<float>(c));
  const auto at = std::string(buf.begin(), buf.end()).find("K=1");
  ASSERT_NE(at, std::string::npos);
  buf[at + 2] = '0';
  EXPECT_EQ(load_error(buf), ModelFormatError::Kind::Config);
  try {
    load_model<float>("/nonexistent/dir/model.winnet");
    FAIL();
  } catch (const ModelFormatError& e) {
    EXPECT_EQ(e.kind(), ModelFormatError::Kind::Io);
    EXPECT_NE(std::string(e.what()).find("/nonexistent/dir/model.winnet"), std::string::npos);
  }
  EXPECT_THROW(save_model(make_model<float>(c), "/nonexistent/dir/out.winnet"), ModelFormatError);
}
