#include <gtest/gtest.h>

#include <fstream>

#include "test_util.hpp"
#include "winnet/deblur.hpp"

using namespace winnet;
using testutil::Td;

namespace {

std::string kernel_path(const std::string& name) { return testutil::data_dir("kernels/" + name); }

/// Circular convolution with the kernel centre at the origin, as a direct sum.
std::vector<double> blur_oracle(const std::vector<double>& x, std::int64_t H, std::int64_t W, const Td& k) {
  const auto kh = k.dim(0), kw = k.dim(1);
  std::vector<double> flipped(k.vec().rbegin(), k.vec().rend());
  return oracle::conv_naive(x, 1, H, W, flipped, 1, kh, kw, 1, 1, true);
}

Td random_kernel(std::int64_t kh, std::int64_t kw, std::mt19937_64& gen) {
  auto v = oracle::random_vector(static_cast<std::size_t>(kh * kw), gen, 0.0, 1.0);
  double s = 0;
  for (double x : v) s += x;
  for (double& x : v) x /= s;
  return Td({kh, kw}, v);
}

void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream f(p);
  f << s;
}

WinnetModel<double> blind_model() {
  WinnetConfig c;
  c.M = 1;
  c.J = 1;
  c.width = 4;
  c.q = 3;
  c.blind = true;
  auto m = make_model<double>(c);
  m.nenet = zero_senet<double>();
  return m;
}

}  // namespace

TEST(Kernel, DeltaBoxAndMotion) {
  auto d = load_kernel<double>(kernel_path("delta.txt"));
  EXPECT_EQ(d.shape(), (Shape{3, 3}));
  EXPECT_EQ(d.vec()[4], 1.0);
  EXPECT_EQ(std::count(d.vec().begin(), d.vec().end(), 0.0), 8);
  auto b = load_kernel<double>(kernel_path("box3.txt"));
  for (double v : b.vec()) EXPECT_DOUBLE_EQ(v, 1.0 / 9.0);
  auto m = load_kernel<double>(kernel_path("motion19.txt"));
  EXPECT_EQ(m.shape(), (Shape{19, 19}));
  double s = 0;
  for (double v : m.vec()) s += v;
  EXPECT_NEAR(s, 1.0, 1e-12);
}

TEST(Kernel, RejectsBadFiles) {
  auto dir = testutil::scratch_dir("kernels");
  auto bad = [&](const std::string& name, const std::string& text) {
    write_text(dir / name, text);
    EXPECT_THROW(load_kernel<double>((dir / name).string()), DeblurError) << name;
  };
  bad("empty.txt", "\n\n");
  bad("even.txt", "1 1\n1 1\n");
  bad("negative.txt", "0 0 0\n0 2 -1\n0 0 0\n");
  bad("zero.txt", "0 0 0\n0 0 0\n0 0 0\n");
  bad("word.txt", "0 0 0\n0 one 0\n0 0 0\n");
  bad("ragged.txt", "0 0 0\n0 1\n0 0 0\n");
  EXPECT_THROW(load_kernel<double>((dir / "missing.txt").string()), DeblurError);
}

TEST(Fft, BlurMatchesDirectCircularConvolution) {
  std::mt19937_64 gen(1);
  auto k = random_kernel(5, 3, gen);
  auto x = testutil::random_image<double>(11, 14, gen);
  EXPECT_LT(oracle::max_abs_diff(blur_circular(x, k).vec(), blur_oracle(x.vec(), 11, 14, k)), 1e-10);
}

TEST(Fft, DeltaTransferIsOne) {
  auto K = psf2otf(load_kernel<double>(kernel_path("delta.txt")), 8, 6);
  for (auto v : K.data) EXPECT_LT(std::abs(v - std::complex<double>(1, 0)), 1e-14);
  EXPECT_THROW(psf2otf(Td::zeros({9, 3}), 8, 6), ArgumentError);
}

TEST(XSubproblem, DeltaKernelClosedForm) {
  std::mt19937_64 gen(2);
  auto y = testutil::random_image<double>(9, 10, gen), z = testutil::random_image<double>(9, 10, gen);
  auto k = load_kernel<double>(kernel_path("delta.txt"));
  for (double alpha : {0.01, 1.0, 37.0}) {
    auto x = x_subproblem(y, k, z, alpha);
    std::vector<double> expect(y.vec().size());
    for (std::size_t i = 0; i < expect.size(); ++i) expect[i] = (y.vec()[i] + alpha * z.vec()[i]) / (1 + alpha);
    EXPECT_LT(oracle::max_abs_diff(x.vec(), expect), 1e-10);
  }
}

TEST(XSubproblem, LargeAlphaReturnsZ) {
  std::mt19937_64 gen(3);
  auto y = testutil::random_image<double>(12, 12, gen), z = testutil::random_image<double>(12, 12, gen);
  auto x = x_subproblem(y, load_kernel<double>(kernel_path("box3.txt")), z, 1e9);
  EXPECT_LT(oracle::max_abs_diff(x.vec(), z.vec()), 1e-6);
}

TEST(XSubproblem, MatchesDenseCirculantSolve) {
  std::mt19937_64 gen(4);
  const std::int64_t H = 16, W = 16, n = H * W;
  for (int trial = 0; trial < 3; ++trial) {
    auto k = random_kernel(5, 5, gen);
    auto y = testutil::random_image<double>(H, W, gen), z = testutil::random_image<double>(H, W, gen);
    const double alpha = 0.05 + trial;
    auto A = oracle::materialize([&](const std::vector<double>& v) { return blur_oracle(v, H, W, k); },
                                 static_cast<std::size_t>(n));
    auto At = oracle::transpose(A);
    auto N = oracle::matmul(At, A);
    for (std::int64_t i = 0; i < n; ++i) N[i][i] += alpha;
    auto rhs = oracle::matvec(At, y.vec());
    for (std::int64_t i = 0; i < n; ++i) rhs[i] += alpha * z.vec()[i];
    auto expect = oracle::solve(N, rhs);
    EXPECT_LT(oracle::max_abs_diff(x_subproblem(y, k, z, alpha).vec(), expect), 1e-6);
  }
}

TEST(XSubproblem, ResidualIsOptimal) {
  std::mt19937_64 gen(5);
  const std::int64_t H = 20, W = 18;
  auto k = load_kernel<double>(kernel_path("motion19.txt"));
  auto y = testutil::random_image<double>(H, W, gen), z = testutil::random_image<double>(H, W, gen);
  // 19x19 does not fit a 18-wide grid; use a centred 7x7 crop renormalised
  std::vector<double> c;
  for (int i = 6; i < 13; ++i)
    for (int j = 6; j < 13; ++j) c.push_back(k.vec()[i * 19 + j] + 1e-3);
  double s = 0;
  for (double v : c) s += v;
  for (double& v : c) v /= s;
  Td k7({7, 7}, c);
  const double alpha = 0.3;
  auto x = x_subproblem(y, k7, z, alpha);
  // gradient: K^T (K x - y) + alpha (x - z), K^T is correlation with the unflipped kernel
  auto r = blur_oracle(x.vec(), H, W, k7);
  for (std::size_t i = 0; i < r.size(); ++i) r[i] -= y.vec()[i];
  auto g = oracle::conv_naive(r, 1, H, W, k7.vec(), 1, 7, 7, 1, 1, true);
  double gn = 0, yn = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double gi = g[i] + alpha * (x.vec()[i] - z.vec()[i]);
    gn += gi * gi;
    yn += y.vec()[i] * y.vec()[i];
  }
  EXPECT_LT(std::sqrt(gn), 1e-6 * std::sqrt(yn));
}

TEST(XSubproblem, RejectsBadArguments) {
  auto y = Td::zeros({1, 8, 8});
  auto k = load_kernel<double>(kernel_path("delta.txt"));
  EXPECT_THROW(x_subproblem(y, k, y, 0.0), ArgumentError);
  EXPECT_THROW(x_subproblem(y, k, y, -1.0), ArgumentError);
  EXPECT_THROW(x_subproblem(y, k, Td::zeros({1, 8, 7}), 1.0), ContractError);
}

TEST(EdgeTaper, DeltaKernelIsIdentityAndInteriorKept) {
  std::mt19937_64 gen(6);
  auto y = testutil::random_image<double>(20, 24, gen);
  EXPECT_LT(oracle::max_abs_diff(edge_taper(y, load_kernel<double>(kernel_path("delta.txt"))).vec(), y.vec()), 1e-10);
  auto t = edge_taper(y, load_kernel<double>(kernel_path("box3.txt")));
  // the box autocorrelation spans +-2 pixels, so rows/cols 3..n-3 are untouched
  for (int i = 3; i <= 17; ++i)
    for (int j = 3; j <= 21; ++j) EXPECT_NEAR(t.vec()[i * 24 + j], y.vec()[i * 24 + j], 1e-10);
  EXPECT_GT(std::abs(t.vec()[0] - y.vec()[0]), 1e-6);
}

TEST(Hqs, DeltaKernelKeepsImage) {
  // Smooth content, so the uniform-weight estimator is not inflated by texture.
  std::vector<double> v(64 * 64);
  for (int i = 0; i < 64; ++i)
    for (int j = 0; j < 64; ++j) v[i * 64 + j] = std::round(120 + 50 * std::sin(j / 9.0) * std::cos(i / 13.0));
  Td clean({1, 64, 64}, v);
  auto y = awgn(clean, 1.0, 7);
  auto r = hqs_deblur(y, load_kernel<double>(kernel_path("delta.txt")), blind_model());
  EXPECT_GE(psnr(r.image, clean), psnr(y, clean) - 0.5);
  EXPECT_LE(r.trace.size(), 30u);
}

TEST(Hqs, TraceTerminatesAndDecreases) {
  auto clean = load_image<double>(testutil::data_dir("heldout/coins_0.pgm"));
  auto k = load_kernel<double>(kernel_path("box3.txt"));
  auto y = awgn(blur_circular(clean, k), 2.55, 8);
  std::ostringstream log;
  auto r = hqs_deblur(y, k, blind_model(), {}, &clean, &log);
  ASSERT_FALSE(r.trace.empty());
  EXPECT_LE(r.trace.size(), 30u);
  EXPECT_DOUBLE_EQ(r.trace[0].beta, 10 * r.beta0);
  for (std::size_t i = 0; i < r.trace.size(); ++i) {
    EXPECT_TRUE(std::isfinite(r.trace[i].beta));
    EXPECT_LT(r.trace[i].next_beta, r.trace[i].beta);
    EXPECT_TRUE(std::isfinite(r.trace[i].psnr));
    if (i + 1 < r.trace.size()) {
      EXPECT_EQ(r.trace[i + 1].beta, r.trace[i].next_beta);
      EXPECT_GT(r.trace[i].next_beta, r.beta0);
    }
  }
  EXPECT_LE(r.trace.back().next_beta, r.beta0);
  EXPECT_NE(log.str().find("beta0\t"), std::string::npos);
  EXPECT_GT(psnr(r.image, clean), psnr(y, clean));
}

TEST(Hqs, MaxItersBoundsLoop) {
  auto clean = load_image<double>(testutil::data_dir("heldout/cell_0.pgm"));
  auto k = load_kernel<double>(kernel_path("box3.txt"));
  DeblurOptions opt;
  opt.max_iters = 2;
  auto r = hqs_deblur(awgn(blur_circular(clean, k), 2.55, 9), k, blind_model(), opt);
  EXPECT_EQ(r.trace.size(), 2u);
}

TEST(Hqs, RejectsBadInputs) {
  auto m = blind_model();
  auto y = Td::full({1, 16, 16}, 100.0);
  EXPECT_THROW(hqs_deblur(y, Td::full({2, 2}, 0.25), m), ArgumentError);
  EXPECT_THROW(hqs_deblur(y, Td::full({3, 3}, 0.2), m), ArgumentError);
  DeblurOptions opt;
  opt.lambda = 0;
  EXPECT_THROW(hqs_deblur(y, load_kernel<double>(kernel_path("delta.txt")), m, opt), ArgumentError);
  auto bad = awgn(y, 5.0, 1);
  bad.vec()[17] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(hqs_deblur(bad, load_kernel<double>(kernel_path("delta.txt")), m), DeblurError);
}
