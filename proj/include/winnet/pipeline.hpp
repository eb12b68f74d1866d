#pragma once

// Grayscale image I/O, noise synthesis, PSNR and training patch sets.
// Images are [1,H,W] tensors with intensities on [0,255]; nothing is clamped
// until an image is written.

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "winnet/rng.hpp"
#include "winnet/tensor.hpp"

namespace winnet {

inline constexpr double kPsnrCap = 99.0;

namespace detail {

inline std::string lower_ext(const std::filesystem::path& p) {
  auto e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return e;
}

inline bool is_image_file(const std::filesystem::path& p) {
  const auto e = lower_ext(p);
  return e == ".pgm" || e == ".png";
}

template <typename T>
Tensor<T> read_pnm(const std::string& path) {
  using Kind = ImageError::Kind;
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ImageError(Kind::Unreadable, "cannot open image '" + path + "'");
  auto token = [&]() {
    std::string t;
    while (f) {
      int c = f.peek();
      if (c == '#') {
        std::string skip;
        std::getline(f, skip);
      } else if (std::isspace(c)) {
        f.get();
      } else {
        break;
      }
    }
    f >> t;
    return t;
  };
  const std::string magic = token();
  if (magic == "P3" || magic == "P6") throw ImageError(Kind::NotGrayscale, "'" + path + "' is a colour image");
  if (magic != "P2" && magic != "P5") throw ImageError(Kind::Unreadable, "'" + path + "' is not a PGM/PNG file");
  long w = 0, h = 0, maxval = 0;
  try {
    w = std::stol(token());
    h = std::stol(token());
    maxval = std::stol(token());
  } catch (const std::exception&) {
    throw ImageError(Kind::Unreadable, "'" + path + "' has a malformed header");
  }
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535)
    throw ImageError(Kind::Unreadable, "'" + path + "' has a malformed header");
  std::vector<T> data(static_cast<std::size_t>(w * h));
  const double scale = 255.0 / static_cast<double>(maxval);
  if (magic == "P5") {
    f.get();
    const int bpp = maxval > 255 ? 2 : 1;
    std::vector<unsigned char> raw(data.size() * bpp);
    f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (f.gcount() != static_cast<std::streamsize>(raw.size()))
      throw ImageError(Kind::Unreadable, "'" + path + "' is truncated");
    for (std::size_t i = 0; i < data.size(); ++i) {
      const unsigned v = bpp == 1 ? raw[i] : (raw[2 * i] << 8) | raw[2 * i + 1];
      data[i] = static_cast<T>(maxval == 255 ? v : v * scale);
    }
  } else {
    for (auto& v : data) {
      long x;
      if (!(f >> x)) throw ImageError(Kind::Unreadable, "'" + path + "' is truncated");
      v = static_cast<T>(maxval == 255 ? x : x * scale);
    }
  }
  return Tensor<T>({1, h, w}, std::move(data));
}

template <typename T>
Tensor<T> read_png(const std::string& path) {
  using Kind = ImageError::Kind;
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw ImageError(Kind::Unreadable, "cannot read PNG '" + path + "': " + img.message);
  if (img.format & PNG_FORMAT_FLAG_COLOR) {
    png_image_free(&img);
    throw ImageError(Kind::NotGrayscale, "'" + path + "' is a colour image");
  }
  img.format = PNG_FORMAT_GRAY;
  std::vector<unsigned char> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr))
    throw ImageError(Kind::Unreadable, "cannot decode PNG '" + path + "': " + img.message);
  std::vector<T> data(buf.begin(), buf.end());
  return Tensor<T>({1, static_cast<std::int64_t>(img.height), static_cast<std::int64_t>(img.width)}, std::move(data));
}

}  // namespace detail

/// Reads 8-bit (or 16-bit, rescaled) grayscale PGM or PNG.
template <typename T>
Tensor<T> load_image(const std::string& path) {
  if (!std::filesystem::exists(path))
    throw ImageError(ImageError::Kind::Unreadable, "image '" + path + "' does not exist");
  if (detail::lower_ext(path) == ".png") return detail::read_png<T>(path);
  return detail::read_pnm<T>(path);
}

/// Clamps to [0,255] and rounds half to even. PNG when the extension is
/// .png, binary PGM otherwise.
template <typename T>
void save_image(const Tensor<T>& img, const std::string& path) {
  const std::int64_t H = img.dim(img.rank() - 2), W = img.dim(img.rank() - 1);
  if (img.numel() != H * W) throw ContractError("save_image: expected a single-channel image");
  std::vector<unsigned char> px(static_cast<std::size_t>(H * W));
  for (std::size_t i = 0; i < px.size(); ++i) {
    const double v = std::nearbyint(std::clamp<double>(img.vec()[i], 0.0, 255.0));
    px[i] = static_cast<unsigned char>(std::isnan(v) ? 0 : v);
  }
  if (detail::lower_ext(path) == ".png") {
    png_image out{};
    out.version = PNG_IMAGE_VERSION;
    out.width = static_cast<png_uint_32>(W);
    out.height = static_cast<png_uint_32>(H);
    out.format = PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&out, path.c_str(), 0, px.data(), 0, nullptr))
      throw ImageError(ImageError::Kind::Unwritable, "cannot write '" + path + "'");
    return;
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ImageError(ImageError::Kind::Unwritable, "cannot write '" + path + "'");
  f << "P5\n" << W << " " << H << "\n255\n";
  f.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (!f) throw ImageError(ImageError::Kind::Unwritable, "write failed for '" + path + "'");
}

/// y = x + sigma * n with n from the counter-based normal stream of `seed`.
template <typename T>
Tensor<T> awgn(const Tensor<T>& x, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0) || !std::isfinite(sigma)) throw ArgumentError("awgn: sigma must be finite and >= 0");
  std::vector<T> out(x.vec());
  if (sigma > 0)
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(out[i] + sigma * normal_at(seed, i));
  return Tensor<T>(x.shape(), std::move(out));
}

/// 10 log10(255^2 / MSE), capped at kPsnrCap (also returned for MSE == 0).
template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.numel() != b.numel() || a.numel() == 0)
    throw ArgumentError("psnr: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  double se = 0;
  for (std::size_t i = 0; i < a.vec().size(); ++i) {
    const double d = static_cast<double>(a.vec()[i]) - static_cast<double>(b.vec()[i]);
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.numel());
  if (mse == 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(255.0 * 255.0 / mse));
}

/// Sorted list of .pgm/.png files in a directory.
inline std::vector<std::string> list_images(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw ImageError(ImageError::Kind::Unreadable, "'" + dir + "' is not a directory");
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && detail::is_image_file(e.path())) out.push_back(e.path().string());
  std::sort(out.begin(), out.end());
  return out;
}

struct PatchSource {
  std::string file;
  std::int64_t y = 0;
  std::int64_t x = 0;
};

template <typename T>
struct PatchDataset {
  Tensor<T> patches;  // [Np, 1, P, P]
  std::vector<PatchSource> manifest;
  std::uint64_t seed = 0;
  int patch = 40;

  std::int64_t size() const { return static_cast<std::int64_t>(manifest.size()); }

  /// Patches idx[0..n) stacked as [n, 1, P, P].
  Tensor<T> batch(std::span<const std::int64_t> idx) const {
    const std::int64_t pp = std::int64_t(patch) * patch;
    std::vector<T> out(static_cast<std::size_t>(idx.size() * pp));
    for (std::size_t i = 0; i < idx.size(); ++i)
      std::copy_n(patches.vec().begin() + idx[i] * pp, pp, out.begin() + i * pp);
    return Tensor<T>({static_cast<std::int64_t>(idx.size()), 1, patch, patch}, std::move(out));
  }
};

struct DatasetOptions {
  int patch = 40;
  int stride = 20;
  std::int64_t count = 0;  // 0 keeps every patch
  std::uint64_t seed = 0;
  bool augment = false;  // random flips / quarter turns per patch
};

/// Patches are extracted file by file (sorted names), raster order inside each
/// file. A cap keeps a seeded random subset in extraction order.
template <typename T>
PatchDataset<T> build_patch_dataset(const std::string& dir, const DatasetOptions& opt) {
  if (opt.patch < 1 || opt.stride < 1) throw ArgumentError("dataset: patch and stride must be positive");
  const auto files = list_images(dir);
  if (files.empty()) throw ArgumentError("dataset: no .pgm/.png images in '" + dir + "'");
  const int P = opt.patch;
  std::vector<PatchSource> all;
  std::vector<Tensor<T>> images;
  for (std::size_t f = 0; f < files.size(); ++f) {
    images.push_back(load_image<T>(files[f]));
    const auto H = images.back().dim(1), W = images.back().dim(2);
    for (std::int64_t y = 0; y + P <= H; y += opt.stride)
      for (std::int64_t x = 0; x + P <= W; x += opt.stride) all.push_back({files[f], y, x});
  }
  if (all.empty()) throw ArgumentError("dataset: images are smaller than the patch size");
  std::vector<std::size_t> pick(all.size());
  for (std::size_t i = 0; i < pick.size(); ++i) pick[i] = i;
  if (opt.count > 0 && opt.count < static_cast<std::int64_t>(all.size())) {
    Rng rng(derive_seed(opt.seed, 0xDA7A));
    rng.shuffle(pick);
    pick.resize(static_cast<std::size_t>(opt.count));
    std::sort(pick.begin(), pick.end());
  }
  PatchDataset<T> ds;
  ds.seed = opt.seed;
  ds.patch = P;
  std::vector<T> data(pick.size() * P * P);
  std::size_t file_idx = 0;
  Rng aug(derive_seed(opt.seed, 0xA06));
  for (std::size_t k = 0; k < pick.size(); ++k) {
    const auto& src = all[pick[k]];
    while (files[file_idx] != src.file) ++file_idx;
    const auto& img = images[file_idx];
    const auto W = img.dim(2);
    const int mode = opt.augment ? static_cast<int>(aug.below(8)) : 0;
    for (int i = 0; i < P; ++i)
      for (int j = 0; j < P; ++j) {
        int a = i, b = j;
        if (mode & 1) b = P - 1 - b;
        if (mode & 2) a = P - 1 - a;
        if (mode & 4) std::swap(a, b);
        data[(k * P + i) * P + j] = img.vec()[(src.y + a) * W + src.x + b];
      }
    ds.manifest.push_back(src);
  }
  ds.patches = Tensor<T>({static_cast<std::int64_t>(pick.size()), 1, P, P}, std::move(data));
  return ds;
}

/// FNV-1a over the raw bytes of a float array.
template <typename T>
std::uint64_t fnv1a(std::span<const T> v) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  const auto* p = reinterpret_cast<const unsigned char*>(v.data());
  for (std::size_t i = 0; i < v.size_bytes(); ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

template <typename T>
std::uint64_t dataset_hash(const PatchDataset<T>& ds) {
  return fnv1a<T>(ds.patches.vec());
}

/// One "path<TAB>y<TAB>x" line per patch.
template <typename T>
void write_manifest(const PatchDataset<T>& ds, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw ImageError(ImageError::Kind::Unwritable, "cannot write manifest '" + path + "'");
  for (const auto& s : ds.manifest) f << s.file << '\t' << s.y << '\t' << s.x << '\n';
}

}  // namespace winnet
