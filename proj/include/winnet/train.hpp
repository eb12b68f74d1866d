#pragma once

// Training of the denoiser (L_r + lambda1 L_s + lambda2 L_o) and of the noise
// estimator (L_n), both with Adam and a fixed-seed schedule.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "winnet/adam.hpp"
#include "winnet/model_io.hpp"
#include "winnet/pipeline.hpp"
#include "winnet/winnet.hpp"

namespace winnet {

struct TrainConfig {
  bool blind = false;
  double sigma = 25.0;      // single-level training
  double sigma_max = 55.0;  // blind: sigma ~ U[0, sigma_max]
  int epochs = 50;
  int batch = 32;
  double lr = 1e-3;
  double lr_final = 1e-4;
  int lr_decay_epoch = 30;  // first epoch that uses lr_final (0-based)
  double lambda1 = 0.1;
  double lambda2 = 10.0;
  int spectral_every = 10;
  int power_iters = 5;
  int spectral_plane = 40;
  std::uint64_t seed = 0;
  std::int64_t max_batches = 0;  // per epoch; 0 = full pass
  std::string checkpoint_dir;    // empty = no checkpoints
  std::uint64_t val_seed = 1234;
};

struct EpochStats {
  int epoch = 0;
  double total = 0;
  double recon = 0;
  double spectral = 0;
  double orthogonal = 0;
  double val_psnr = 0;  // 0 when no validation set
};

template <typename T>
struct TrainResult {
  WinnetModel<T> model;
  std::vector<EpochStats> epochs;
};

/// (1/2N) sum_i ||x_i - xhat_i||^2, N = leading extent, with intensities
/// taken on [0,1] so the regulariser weights keep their meaning.
template <typename T>
Tensor<T> loss_reconstruction(const Tensor<T>& xhat, const Tensor<T>& x) {
  if (xhat.shape() != x.shape()) throw ContractError("loss_reconstruction: shape mismatch");
  const double r = kIntensityRange;
  return scale(sum_squares(sub(x, xhat)), static_cast<T>(1.0 / (2.0 * r * r * static_cast<double>(x.dim(0)))));
}

/// (1/2N) sum_i (sigma_i - sigma_hat_i)^2.
template <typename T>
Tensor<T> loss_noise(const Tensor<T>& sigma_true, const Tensor<T>& sigma_hat) {
  if (sigma_true.numel() != sigma_hat.numel()) throw ContractError("loss_noise: length mismatch");
  return scale(sum_squares(sub(sigma_true, sigma_hat)), T(1) / (T(2) * static_cast<T>(sigma_true.numel())));
}

template <typename T>
Tensor<T> loss_orthogonal(const WinnetModel<T>& m) {
  Tensor<T> acc = Tensor<T>::scalar(T(0));
  for (const auto& sp : m.scales) acc = add(acc, sum_squares(orthogonal_residual(sp.clista.W_s, sp.clista.W_a)));
  return acc;
}

/// Visits (scale, step, block) in a fixed order with the predict and update blocks.
template <typename T, typename F>
void for_each_block_pair(const WinnetModel<T>& m, F&& f) {
  for (const auto& sp : m.scales)
    for (std::size_t j = 0; j < sp.linn.predict.size(); ++j)
      for (std::size_t b = 0; b < sp.linn.predict[j].blocks.size(); ++b)
        f(sp.linn.predict[j].blocks[b], sp.linn.update[j].blocks[b], sp.linn.dilation());
}

/// Mean over the K*M*J block indices of ||P_branch|| + ||U_branch||, each by
/// block power iteration on a plane x plane map.
template <typename T>
T loss_spectral_value(const WinnetModel<T>& m, int plane = 40, int iters = 50, std::uint64_t seed = 0) {
  double acc = 0;
  int n = 0;
  for_each_block_pair(m, [&](const ResidualBlock<T>& P, const ResidualBlock<T>& U, int dil) {
    acc += block_spectral_norm(P, plane, plane, dil, iters, seed) + block_spectral_norm(U, plane, plane, dil, iters, seed);
    ++n;
  });
  return n ? static_cast<T>(acc / n) : T(0);
}

/// Differentiable variant used in training: warm-started single-vector power
/// iteration per operator; `states` grows on first use.
template <typename T>
Tensor<T> loss_spectral(const WinnetModel<T>& m, std::vector<PowerIterationState<T>>& states, int plane, int iters,
                        std::uint64_t seed) {
  Tensor<T> acc = Tensor<T>::scalar(T(0));
  std::size_t idx = 0;
  int n = 0;
  auto one = [&](const ResidualBlock<T>& b, int dil) {
    if (states.size() <= idx) states.push_back({{}, derive_seed(seed, 0x5eed, idx)});
    acc = add(acc, spectral_norm_tracked(block_operator(b, plane, plane, dil), states[idx++], iters));
  };
  for_each_block_pair(m, [&](const ResidualBlock<T>& P, const ResidualBlock<T>& U, int dil) {
    one(P, dil);
    one(U, dil);
    ++n;
  });
  return n ? scale(acc, T(1) / static_cast<T>(n)) : acc;
}

namespace detail {

inline double lr_for_epoch(const TrainConfig& c, int epoch) { return epoch < c.lr_decay_epoch ? c.lr : c.lr_final; }

template <typename T>
void check_finite(const Tensor<T>& v, const char* what, int epoch, std::int64_t iter) {
  if (!std::isfinite(static_cast<double>(v.item())))
    throw TrainingDivergedError(std::string("training diverged: ") + what + " is not finite at epoch " +
                                std::to_string(epoch + 1) + ", iteration " + std::to_string(iter));
}

/// Noisy copy of a batch: sample i gets sigma[i] * n from a per-batch stream.
template <typename T>
Tensor<T> noisy_batch(const Tensor<T>& x, const std::vector<double>& sigma, std::uint64_t seed) {
  std::vector<T> out(x.vec());
  const std::size_t per = out.size() / sigma.size();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<T>(out[i] + sigma[i / per] * normal_at(seed, i));
  return Tensor<T>(x.shape(), std::move(out));
}

}  // namespace detail

/// Mean PSNR of the denoiser on fixed noisy copies of `clean` at `sigma`.
template <typename T>
double validation_psnr(const WinnetModel<T>& m, const std::vector<Tensor<T>>& clean, double sigma, std::uint64_t seed) {
  NoGradGuard ng;
  double acc = 0;
  for (std::size_t i = 0; i < clean.size(); ++i)
    acc += psnr(denoise(awgn(clean[i], sigma, derive_seed(seed, i)), sigma, m), clean[i]);
  return clean.empty() ? 0.0 : acc / static_cast<double>(clean.size());
}

/// Optimises the denoiser parameters of a fresh model built from `mcfg`.
/// `log` receives one tab-separated line per iteration and per epoch.
template <typename T>
TrainResult<T> train_winnet(const TrainConfig& tc, WinnetConfig mcfg, const PatchDataset<T>& ds,
                            const std::vector<Tensor<T>>& validation = {}, std::ostream* log = nullptr) {
  if (ds.size() == 0) throw ArgumentError("train: empty dataset");
  if (tc.epochs < 1 || tc.batch < 1) throw ArgumentError("train: epochs and batch must be positive");
  mcfg.blind = tc.blind;
  if (!tc.blind) mcfg.sigma_ref = tc.sigma;
  if (mcfg.seed == 0) mcfg.seed = tc.seed;
  TrainResult<T> res{make_model<T>(mcfg), {}};
  auto& model = res.model;
  auto params = denoiser_parameters(model);
  AdamState<T> adam;
  std::vector<PowerIterationState<T>> power;
  Rng rng(derive_seed(tc.seed, 0x7EA1));
  std::vector<std::int64_t> order(static_cast<std::size_t>(ds.size()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::int64_t>(i);
  if (log) *log << "epoch\titer\tL_r\tL_s\tL_o\ttotal\n";

  std::int64_t iter = 0;
  double held_spectral = 0;
  for (int e = 0; e < tc.epochs; ++e) {
    adam.lr = detail::lr_for_epoch(tc, e);
    rng.shuffle(order);
    EpochStats st;
    st.epoch = e + 1;
    std::int64_t nb = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(tc.batch)) {
      if (tc.max_batches > 0 && nb >= tc.max_batches) break;
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(tc.batch));
      std::span<const std::int64_t> idx(order.data() + start, end - start);
      auto x = ds.batch(idx);
      std::vector<double> sig(idx.size(), tc.sigma);
      if (tc.blind)
        for (auto& s : sig) s = rng.uniform(0.0, tc.sigma_max);
      auto y = detail::noisy_batch(x, sig, derive_seed(tc.seed, 0x4015E, static_cast<std::uint64_t>(iter)));
      auto bs = batch_scales(sig, model.sigma_ref(), mcfg.symmetric_blind_scaling || !tc.blind);
      std::vector<T> ps(bs.punet.begin(), bs.punet.end()), cs(bs.clista.begin(), bs.clista.end());

      auto xhat = denoise_scaled<T>(y, model, ps, cs);
      auto Lr = loss_reconstruction(xhat, x);
      auto Lo = loss_orthogonal(model);
      Tensor<T> total = add(Lr, scale(Lo, static_cast<T>(tc.lambda2)));
      if (tc.lambda1 != 0 && iter % tc.spectral_every == 0) {
        auto Ls = loss_spectral(model, power, tc.spectral_plane, tc.power_iters, tc.seed);
        held_spectral = Ls.item();
        total = add(total, scale(Ls, static_cast<T>(tc.lambda1)));
      } else {
        total = add_scalar(total, static_cast<T>(tc.lambda1 * held_spectral));
      }
      detail::check_finite(total, "total loss", e, iter);

      for (auto& p : params) p.zero_grad();
      backward(total);
      adam_step<T>(params, adam);

      st.total += total.item();
      st.recon += Lr.item();
      st.spectral += held_spectral;
      st.orthogonal += Lo.item();
      if (log) {
        char line[256];
        std::snprintf(line, sizeof line, "%d\t%lld\t%.6g\t%.6g\t%.6g\t%.6g\n", e + 1, static_cast<long long>(iter),
                      static_cast<double>(Lr.item()), held_spectral, static_cast<double>(Lo.item()),
                      static_cast<double>(total.item()));
        *log << line;
      }
      ++iter;
      ++nb;
    }
    if (nb > 0) {
      st.total /= nb;
      st.recon /= nb;
      st.spectral /= nb;
      st.orthogonal /= nb;
    }
    if (!validation.empty()) st.val_psnr = validation_psnr(model, validation, tc.blind ? 25.0 : tc.sigma, tc.val_seed);
    res.epochs.push_back(st);
    if (log) {
      char line[256];
      std::snprintf(line, sizeof line, "epoch\t%d\tmean_total=%.6g\tmean_L_r=%.6g\tmean_L_s=%.6g\tmean_L_o=%.6g\tval_psnr=%.4f\n",
                    st.epoch, st.total, st.recon, st.spectral, st.orthogonal, st.val_psnr);
      *log << line << std::flush;
    }
    if (!tc.checkpoint_dir.empty()) {
      std::filesystem::create_directories(tc.checkpoint_dir);
      save_model(model, tc.checkpoint_dir + "/epoch" + std::to_string(e + 1) + ".winnet");
    }
  }
  return res;
}

struct NenetTrainConfig {
  int epochs = 10;
  int batch = 32;
  double lr = 1e-3;
  double sigma_max = 55.0;
  int patch = 4;
  int stride = 1;
  double jitter = 1e-8;
  std::uint64_t seed = 0;
  std::int64_t max_batches = 0;
};

struct NenetEpochStats {
  int epoch = 0;
  double loss = 0;
};

template <typename T>
struct NenetTrainResult {
  SenetParams<T> params;
  std::vector<NenetEpochStats> epochs;
};

/// Fits SENet so that the weighted-covariance estimate tracks the true sigma
/// of AWGN-corrupted patches, sigma ~ U[0, sigma_max].
template <typename T>
NenetTrainResult<T> train_nenet(const NenetTrainConfig& tc, const PatchDataset<T>& ds, std::ostream* log = nullptr) {
  if (ds.size() == 0) throw ArgumentError("train_nenet: empty dataset");
  Rng init(derive_seed(tc.seed, 0x5E7));
  NenetTrainResult<T> res{make_senet<T>(init), {}};
  std::vector<Tensor<T>> params = res.params.convs;
  AdamState<T> adam;
  adam.lr = tc.lr;
  Rng rng(derive_seed(tc.seed, 0x7EA2));
  std::vector<std::int64_t> order(static_cast<std::size_t>(ds.size()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::int64_t>(i);
  NenetConfig<T> nc;
  nc.patch = tc.patch;
  nc.stride = tc.stride;
  nc.jitter = static_cast<T>(tc.jitter);
  std::int64_t iter = 0;
  if (log) *log << "epoch\titer\tL_n\n";
  for (int e = 0; e < tc.epochs; ++e) {
    rng.shuffle(order);
    NenetEpochStats st{e + 1, 0};
    std::int64_t nb = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(tc.batch)) {
      if (tc.max_batches > 0 && nb >= tc.max_batches) break;
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(tc.batch));
      std::vector<T> truth, est;
      Tensor<T> acc = Tensor<T>::scalar(T(0));
      for (std::size_t i = start; i < end; ++i) {
        const std::int64_t id[1] = {order[i]};
        auto x = ds.batch(id);
        const double s = rng.uniform(0.0, tc.sigma_max);
        auto y = awgn(reshape(x, {1, ds.patch, ds.patch}), s, derive_seed(tc.seed, 0x4E, static_cast<std::uint64_t>(iter * 1024 + (i - start))));
        auto sh = nenet_estimate(y, res.params, nc).sigma;
        auto d = add_scalar(sh, static_cast<T>(-s));
        acc = add(acc, mul(d, d));
      }
      auto L = scale(acc, T(1) / (T(2) * static_cast<T>(end - start)));
      detail::check_finite(L, "noise loss", e, iter);
      for (auto& p : params) p.zero_grad();
      backward(L);
      adam_step<T>(params, adam);
      st.loss += L.item();
      if (log) *log << e + 1 << '\t' << iter << '\t' << L.item() << '\n';
      ++iter;
      ++nb;
    }
    if (nb > 0) st.loss /= nb;
    res.epochs.push_back(st);
  }
  return res;
}

}  // namespace winnet
