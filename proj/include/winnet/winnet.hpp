#pragma once

// Multi-scale assembly. Scale k splits its input, runs the k-th lifting
// network, denoises the detail part with CLISTA and hands the coarse part to
// scale k+1. Reconstruction walks back from the deepest scale: the deepest
// coarse part passes through unchanged and every reconstructed image becomes
// the coarse input of the next shallower inverse.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <type_traits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "winnet/clista.hpp"
#include "winnet/lifting.hpp"
#include "winnet/nenet.hpp"

namespace winnet {

/// Images are stored on [0,255]; parameters act on [0,1].
inline constexpr double kIntensityRange = 255.0;

struct WinnetConfig {
  int K = 1;
  int p = 4;
  int c = 16;
  int h = 1;
  int M = 4;
  int J = 4;
  int width = 32;
  int q = 5;
  int clista_atoms = 64;
  int clista_layers = 3;
  int clista_kernel = 3;
  FrameSource frame = FrameSource::Dct;
  double sigma_ref = 25.0;
  bool blind = false;
  // Blind models: true rescales the PUNet thresholds below sigma_ref too.
  bool symmetric_blind_scaling = true;
  int nenet_patch = 4;
  int nenet_stride = 1;
  std::uint64_t seed = 0;
  double punet_threshold_init = 0.03;   // times sigma_ref
  double clista_threshold_init = 1.0;   // times sigma_ref

  std::map<std::string, std::string> to_map() const;
  static WinnetConfig from_map(const std::map<std::string, std::string>& kv);
  void validate() const;
};

template <typename T>
struct ScaleParams {
  LinnParams<T> linn;
  ClistaParams<T> clista;
};

template <typename T>
struct WinnetModel {
  WinnetConfig config;
  std::vector<ScaleParams<T>> scales;
  SenetParams<T> nenet;

  double sigma_ref() const { return config.sigma_ref; }
  int K() const { return static_cast<int>(scales.size()); }
};

struct ThresholdScales {
  double punet = 1.0;
  double clista = 1.0;
};

inline void WinnetConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ArgumentError("config: " + what);
  };
  need(K >= 1, "K must be >= 1");
  need(p >= 1 && c >= p * p, "c must be >= p^2");
  need(h >= 1 && h < c, "h must be in [1, c-1]");
  need(K == 1 || h == 1, "multi-scale models need h == 1");
  need(frame == FrameSource::Cayley || c == p * p, "the DCT frame needs c == p^2");
  need(M >= 0 && J >= 0, "M and J must be non-negative");
  need(width >= 1 && q >= 1 && q % 2 == 1, "width >= 1 and odd q");
  need(clista_atoms >= c - h, "clista_atoms must be >= c - h");
  need(clista_layers >= 0 && clista_kernel >= 1 && clista_kernel % 2 == 1, "odd clista_kernel");
  need(sigma_ref > 0 && std::isfinite(sigma_ref), "sigma_ref must be positive");
  need(nenet_patch >= 2 && nenet_stride >= 1, "nenet patch >= 2, stride >= 1");
}

inline std::map<std::string, std::string> WinnetConfig::to_map() const {
  auto d = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  return {{"K", std::to_string(K)},
          {"p", std::to_string(p)},
          {"c", std::to_string(c)},
          {"h", std::to_string(h)},
          {"M", std::to_string(M)},
          {"J", std::to_string(J)},
          {"width", std::to_string(width)},
          {"q", std::to_string(q)},
          {"clista_atoms", std::to_string(clista_atoms)},
          {"clista_layers", std::to_string(clista_layers)},
          {"clista_kernel", std::to_string(clista_kernel)},
          {"frame", frame == FrameSource::Dct ? "dct" : "cayley"},
          {"sigma_ref", d(sigma_ref)},
          {"blind", blind ? "1" : "0"},
          {"symmetric_blind_scaling", symmetric_blind_scaling ? "1" : "0"},
          {"nenet_patch", std::to_string(nenet_patch)},
          {"nenet_stride", std::to_string(nenet_stride)},
          {"seed", std::to_string(seed)},
          {"punet_threshold_init", d(punet_threshold_init)},
          {"clista_threshold_init", d(clista_threshold_init)}};
}

inline WinnetConfig WinnetConfig::from_map(const std::map<std::string, std::string>& kv) {
  WinnetConfig c;
  auto get = [&](const char* key, auto& field) {
    auto it = kv.find(key);
    if (it == kv.end()) return;
    try {
      using F = std::decay_t<decltype(field)>;
      if constexpr (std::is_same_v<F, double>) field = std::stod(it->second);
      else if constexpr (std::is_same_v<F, bool>) field = it->second == "1" || it->second == "true";
      else if constexpr (std::is_same_v<F, std::uint64_t>) field = std::stoull(it->second);
      else field = std::stoi(it->second);
    } catch (const std::exception&) {
      throw ArgumentError(std::string("config: bad value for ") + key + ": '" + it->second + "'");
    }
  };
  get("K", c.K);
  get("p", c.p);
  get("c", c.c);
  get("h", c.h);
  get("M", c.M);
  get("J", c.J);
  get("width", c.width);
  get("q", c.q);
  get("clista_atoms", c.clista_atoms);
  get("clista_layers", c.clista_layers);
  get("clista_kernel", c.clista_kernel);
  if (auto it = kv.find("frame"); it != kv.end()) {
    if (it->second == "dct") c.frame = FrameSource::Dct;
    else if (it->second == "cayley") c.frame = FrameSource::Cayley;
    else throw ArgumentError("config: frame must be dct or cayley");
  }
  get("sigma_ref", c.sigma_ref);
  get("blind", c.blind);
  get("symmetric_blind_scaling", c.symmetric_blind_scaling);
  get("nenet_patch", c.nenet_patch);
  get("nenet_stride", c.nenet_stride);
  get("seed", c.seed);
  get("punet_threshold_init", c.punet_threshold_init);
  get("clista_threshold_init", c.clista_threshold_init);
  return c;
}

template <typename T>
WinnetModel<T> make_model(const WinnetConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, 0x1417));
  WinnetModel<T> m;
  m.config = cfg;
  const T punet_thr = static_cast<T>(cfg.punet_threshold_init * cfg.sigma_ref / kIntensityRange);
  const T clista_thr = static_cast<T>(cfg.clista_threshold_init * cfg.sigma_ref / kIntensityRange);
  for (int k = 1; k <= cfg.K; ++k) {
    ScaleParams<T> sp;
    auto& L = sp.linn;
    L.source = cfg.frame;
    L.p = cfg.p;
    L.c = cfg.c;
    L.h = cfg.h;
    L.scale_index = k;
    if (cfg.frame == FrameSource::Cayley) L.theta = Tensor<T>::zeros({cfg.c, cfg.c}, true);
    for (int j = 0; j < cfg.M; ++j) {
      L.predict.push_back(make_punet<T>(cfg.h, cfg.c - cfg.h, cfg.width, cfg.J, cfg.q, L.dilation(), punet_thr, rng));
      L.update.push_back(make_punet<T>(cfg.c - cfg.h, cfg.h, cfg.width, cfg.J, cfg.q, L.dilation(), punet_thr, rng));
    }
    sp.clista = make_clista<T>(cfg.c - cfg.h, cfg.clista_atoms, cfg.clista_kernel, cfg.clista_layers, clista_thr, rng);
    m.scales.push_back(std::move(sp));
  }
  m.nenet = make_senet<T>(rng);
  return m;
}

/// Every tensor of the model with a stable name, in a fixed order.
template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> named_tensors(const WinnetModel<T>& m) {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  auto punet = [&](const std::string& pre, const PUNetParams<T>& p) {
    out.emplace_back(pre + ".input_conv", p.input_conv);
    out.emplace_back(pre + ".theta_in", p.theta_in);
    for (std::size_t j = 0; j < p.blocks.size(); ++j) {
      const auto b = pre + ".block" + std::to_string(j + 1);
      out.emplace_back(b + ".dw1", p.blocks[j].dw1);
      out.emplace_back(b + ".pw1", p.blocks[j].pw1);
      out.emplace_back(b + ".theta", p.blocks[j].theta);
      out.emplace_back(b + ".dw2", p.blocks[j].dw2);
      out.emplace_back(b + ".pw2", p.blocks[j].pw2);
    }
    out.emplace_back(pre + ".output_conv", p.output_conv);
  };
  for (std::size_t k = 0; k < m.scales.size(); ++k) {
    const auto s = "scale" + std::to_string(k + 1);
    const auto& L = m.scales[k].linn;
    if (L.source == FrameSource::Cayley) out.emplace_back(s + ".theta", L.theta);
    for (std::size_t j = 0; j < L.predict.size(); ++j) {
      punet(s + ".predict" + std::to_string(j + 1), L.predict[j]);
      punet(s + ".update" + std::to_string(j + 1), L.update[j]);
    }
    const auto& C = m.scales[k].clista;
    out.emplace_back(s + ".clista.W_a", C.W_a);
    out.emplace_back(s + ".clista.W_s", C.W_s);
    for (std::size_t t = 0; t < C.theta.size(); ++t)
      out.emplace_back(s + ".clista.theta" + std::to_string(t + 1), C.theta[t]);
  }
  for (std::size_t l = 0; l < m.nenet.convs.size(); ++l)
    out.emplace_back("nenet.conv" + std::to_string(l + 1), m.nenet.convs[l]);
  return out;
}

/// Denoiser tensors only (everything except NENet).
template <typename T>
std::vector<Tensor<T>> denoiser_parameters(const WinnetModel<T>& m) {
  std::vector<Tensor<T>> out;
  for (auto& [name, t] : named_tensors(m))
    if (name.rfind("nenet.", 0) != 0) out.push_back(t);
  return out;
}

template <typename T>
std::int64_t parameter_count(const WinnetModel<T>& m, bool include_nenet = false) {
  std::int64_t n = 0;
  for (auto& [name, t] : named_tensors(m))
    if (include_nenet || name.rfind("nenet.", 0) != 0) n += t.numel();
  return n;
}

/// sigma_T >= sigma_N: every threshold scales by sigma_T / sigma_N.
/// sigma_T <  sigma_N: only CLISTA thresholds scale; PUNets keep scale 1.
inline ThresholdScales threshold_scale_policy(double sigma_T, double sigma_N) {
  if (!(sigma_N > 0) || !std::isfinite(sigma_N)) throw ArgumentError("threshold policy: sigma_N must be positive");
  if (!(sigma_T >= 0) || !std::isfinite(sigma_T)) throw ArgumentError("threshold policy: sigma_T must be >= 0");
  const double r = sigma_T / sigma_N;
  if (sigma_T >= sigma_N) return {r, r};
  return {1.0, r};
}

/// Per-sample factors for training and batched inference.
struct BatchScales {
  std::vector<double> punet;
  std::vector<double> clista;
};

inline BatchScales batch_scales(const std::vector<double>& sigmas, double sigma_ref, bool symmetric) {
  BatchScales b;
  for (double s : sigmas) {
    auto ts = threshold_scale_policy(s, sigma_ref);
    b.punet.push_back(symmetric ? s / sigma_ref : ts.punet);
    b.clista.push_back(ts.clista);
  }
  return b;
}

/// Full analysis / denoise / synthesis chain on [1,H,W] or [N,1,H,W]. Pixel
/// values are on the [0,255] scale; the network itself sees [0,1].
template <typename T>
Tensor<T> denoise_scaled(const Tensor<T>& y, const WinnetModel<T>& m, std::span<const T> punet_scales,
                         std::span<const T> clista_scales) {
  std::vector<FrameKernels<T>> frames;
  std::vector<CoarseDetail<T>> coeffs;
  Tensor<T> input = scale(y, static_cast<T>(1 / kIntensityRange));
  for (const auto& sp : m.scales) {
    frames.push_back(sp.linn.frame());
    auto cd = linn_forward(split(input, frames.back(), sp.linn.dilation()), sp.linn, punet_scales);
    cd.detail = clista_denoise(cd.detail, sp.clista, clista_scales);
    coeffs.push_back(cd);
    input = cd.coarse;
  }
  Tensor<T> coarse = input;
  for (std::size_t k = m.scales.size(); k-- > 0;) {
    const auto& L = m.scales[k].linn;
    auto cd = linn_inverse(CoarseDetail<T>{coarse, coeffs[k].detail}, L, punet_scales);
    coarse = merge(cd, frames[k], L.dilation());
  }
  return scale(coarse, static_cast<T>(kIntensityRange));
}

template <typename T>
Tensor<T> denoise(const Tensor<T>& y, double sigma_T, const WinnetModel<T>& m) {
  auto ts = threshold_scale_policy(sigma_T, m.sigma_ref());
  const T ps[1] = {static_cast<T>(ts.punet)};
  const T cs[1] = {static_cast<T>(ts.clista)};
  return denoise_scaled<T>(y, m, std::span<const T>(ps, 1), std::span<const T>(cs, 1));
}

template <typename T>
NenetConfig<T> nenet_config(const WinnetModel<T>& m) {
  NenetConfig<T> c;
  c.patch = m.config.nenet_patch;
  c.stride = m.config.nenet_stride;
  return c;
}

template <typename T>
T estimate_noise(const Tensor<T>& y, const WinnetModel<T>& m) {
  NoGradGuard ng;
  return nenet_estimate(y, m.nenet, nenet_config(m)).sigma.item();
}

template <typename T>
struct BlindResult {
  Tensor<T> image;
  double sigma_hat = 0;
};

template <typename T>
BlindResult<T> denoise_blind(const Tensor<T>& y, const WinnetModel<T>& m) {
  NoGradGuard ng;
  const double s = estimate_noise(y, m);
  return {denoise(y, s, m), s};
}

template <typename T>
struct AtomImage {
  Tensor<T> raw;
  Tensor<T> normalized;  // min-max stretched to [0,255]; zero when flat
};

/// Impulse response of the inverse path: coefficients at `level` are zero
/// except `amplitude` at the centre pixel of `channel` (coarse channels first),
/// then reconstructed through that level's inverse and every shallower one
/// with zero details.
template <typename T>
AtomImage<T> visualize_atom(const WinnetModel<T>& m, int level, int channel, double amplitude, std::int64_t H = 64,
                            std::int64_t W = 64) {
  if (level < 1 || level > m.K()) throw ArgumentError("visualize_atom: level out of range");
  const int c = m.config.c, h = m.config.h;
  if (channel < 0 || channel >= c) throw ArgumentError("visualize_atom: channel out of range");
  NoGradGuard ng;
  std::vector<T> coarse(static_cast<std::size_t>(h * H * W), T(0)), det(static_cast<std::size_t>((c - h) * H * W), T(0));
  const std::int64_t centre = (H / 2) * W + W / 2;
  if (channel < h) coarse[channel * H * W + centre] = static_cast<T>(amplitude);
  else det[(channel - h) * H * W + centre] = static_cast<T>(amplitude);
  const T one[1] = {T(1)};
  Tensor<T> img;
  CoarseDetail<T> cd{Tensor<T>({h, H, W}, coarse), Tensor<T>({c - h, H, W}, det)};
  for (int k = level; k >= 1; --k) {
    const auto& L = m.scales[k - 1].linn;
    if (k < level) cd = {img, Tensor<T>::zeros({c - h, H, W})};
    img = merge(linn_inverse(cd, L, std::span<const T>(one, 1)), L.frame(), L.dilation());
  }
  AtomImage<T> out{img, Tensor<T>::zeros(img.shape())};
  const auto [lo, hi] = std::minmax_element(img.vec().begin(), img.vec().end());
  if (*hi > *lo)
    for (std::size_t i = 0; i < img.vec().size(); ++i)
      out.normalized.vec()[i] = (img.vec()[i] - *lo) / (*hi - *lo) * T(255);
  return out;
}

}  // namespace winnet
