#pragma once

// Command-line front end. run() returns 0 on success, 2 on usage errors and 1
// on runtime errors; every message names the offending path.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "winnet/deblur.hpp"
#include "winnet/model_io.hpp"
#include "winnet/pipeline.hpp"
#include "winnet/train.hpp"
#include "winnet/winnet.hpp"

namespace winnet {

struct ReportRow {
  std::string name;
  double psnr = 0;
};

/// `name<TAB>psnr` per row (in the given order) and a final `MEAN<TAB>value`.
inline void emit_report(const std::vector<ReportRow>& rows, std::ostream& out) {
  if (rows.empty()) throw ArgumentError("report: no images to report");
  double acc = 0;
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.2f", r.psnr);
    out << r.name << '\t' << buf << '\n';
    acc += r.psnr;
  }
  std::snprintf(buf, sizeof buf, "%.2f", acc / static_cast<double>(rows.size()));
  out << "MEAN\t" << buf << '\n';
}

inline void emit_report(const std::vector<ReportRow>& rows, const std::string& path) {
  std::ostringstream s;
  emit_report(rows, s);
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw ImageError(ImageError::Kind::Unwritable, "cannot write report '" + path + "'");
  f << s.str();
  if (!f) throw ImageError(ImageError::Kind::Unwritable, "write failed for report '" + path + "'");
}

/// Flat `key=value` text; blank lines and lines starting with '#' are ignored.
inline std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ArgumentError("cannot open config file '" + path + "'");
  std::map<std::string, std::string> kv;
  int n = 0;
  for (std::string line; std::getline(f, line);) {
    ++n;
    auto a = line.find_first_not_of(" \t\r");
    if (a == std::string::npos || line[a] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ArgumentError("config file '" + path + "' line " + std::to_string(n) + ": expected key=value");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r"), e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

struct TrainSetup {
  TrainConfig train;
  WinnetConfig model;
  DatasetOptions data;
};

namespace detail {

template <typename F>
void parse_field(const std::map<std::string, std::string>& kv, const std::string& key, F& field) {
  auto it = kv.find(key);
  if (it == kv.end()) return;
  try {
    std::size_t used = 0;
    if constexpr (std::is_same_v<F, double>) field = std::stod(it->second, &used);
    else if constexpr (std::is_same_v<F, bool>) {
      if (it->second != "0" && it->second != "1" && it->second != "true" && it->second != "false")
        throw std::invalid_argument(key);
      field = it->second == "1" || it->second == "true";
      used = it->second.size();
    } else if constexpr (std::is_same_v<F, std::string>) {
      field = it->second;
      used = it->second.size();
    } else if constexpr (std::is_same_v<F, std::uint64_t>) field = std::stoull(it->second, &used);
    else field = static_cast<F>(std::stoll(it->second, &used));
    if (used != it->second.size()) throw std::invalid_argument(key);
  } catch (const std::exception&) {
    throw ArgumentError("config: bad value for " + key + ": '" + it->second + "'");
  }
}

}  // namespace detail

/// Splits a flat key=value map into training, model and dataset settings.
/// `seed` and `blind` apply to both training and the model.
inline TrainSetup train_setup_from_map(const std::map<std::string, std::string>& kv) {
  static const std::set<std::string> train_keys = {
      "sigma", "sigma_max", "epochs", "batch", "lr", "lr_final", "lr_decay_epoch", "lambda1", "lambda2",
      "spectral_every", "power_iters", "spectral_plane", "max_batches", "checkpoint_dir", "val_seed",
      "patch", "stride", "count", "augment", "seed", "blind"};
  const auto model_keys = WinnetConfig{}.to_map();
  for (const auto& [k, v] : kv)
    if (!train_keys.count(k) && !model_keys.count(k)) throw ArgumentError("config: unknown key '" + k + "'");
  TrainSetup s;
  auto& t = s.train;
  detail::parse_field(kv, "sigma", t.sigma);
  detail::parse_field(kv, "sigma_max", t.sigma_max);
  detail::parse_field(kv, "blind", t.blind);
  detail::parse_field(kv, "epochs", t.epochs);
  detail::parse_field(kv, "batch", t.batch);
  detail::parse_field(kv, "lr", t.lr);
  detail::parse_field(kv, "lr_final", t.lr_final);
  detail::parse_field(kv, "lr_decay_epoch", t.lr_decay_epoch);
  detail::parse_field(kv, "lambda1", t.lambda1);
  detail::parse_field(kv, "lambda2", t.lambda2);
  detail::parse_field(kv, "spectral_every", t.spectral_every);
  detail::parse_field(kv, "power_iters", t.power_iters);
  detail::parse_field(kv, "spectral_plane", t.spectral_plane);
  detail::parse_field(kv, "seed", t.seed);
  detail::parse_field(kv, "max_batches", t.max_batches);
  detail::parse_field(kv, "checkpoint_dir", t.checkpoint_dir);
  detail::parse_field(kv, "val_seed", t.val_seed);
  detail::parse_field(kv, "patch", s.data.patch);
  detail::parse_field(kv, "stride", s.data.stride);
  detail::parse_field(kv, "count", s.data.count);
  detail::parse_field(kv, "augment", s.data.augment);
  s.data.seed = t.seed;
  std::map<std::string, std::string> mk;
  for (const auto& [k, v] : kv)
    if (model_keys.count(k)) mk[k] = v;
  s.model = WinnetConfig::from_map(mk);
  s.model.validate();
  return s;
}

namespace detail {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::map<std::string, std::string> parse_overrides(const std::vector<std::string>& sets) {
  std::map<std::string, std::string> kv;
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--set expects KEY=VALUE, got '" + s + "'");
    kv[s.substr(0, eq)] = s.substr(eq + 1);
  }
  return kv;
}

inline std::string stem_name(const std::string& path) { return std::filesystem::path(path).filename().string(); }

template <typename T>
std::vector<Tensor<T>> load_all(const std::string& dir) {
  std::vector<Tensor<T>> out;
  for (const auto& f : list_images(dir)) out.push_back(load_image<T>(f));
  return out;
}

inline void require_file(const std::string& path, const char* what) {
  if (!std::filesystem::exists(path)) throw ArgumentError(std::string(what) + " '" + path + "' does not exist");
}

}  // namespace detail

/// Runs the command line; `out` receives results, `err` diagnostics.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  using Real = float;
  CLI::App app{"WINNet: invertible wavelet-inspired denoising, noise estimation and deblurring", "winnet"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_help_all_flag("--help-all");
  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "Seed for all randomness")->capture_default_str();

  // train
  auto* tr = app.add_subcommand("train", "Train a denoiser on a directory of clean images");
  std::string tr_data, tr_out, tr_config, tr_log, tr_val, tr_manifest;
  std::vector<std::string> tr_sets;
  double tr_sigma = -1;
  int tr_epochs = 0;
  bool tr_blind = false;
  tr->add_option("--data", tr_data, "Directory of clean .pgm/.png images")->required();
  tr->add_option("--out", tr_out, "Output model file")->required();
  tr->add_option("--config", tr_config, "key=value configuration file");
  tr->add_option("--set", tr_sets, "Override one configuration key (KEY=VALUE), repeatable");
  tr->add_option("--sigma", tr_sigma, "Training noise level on the [0,255] scale");
  tr->add_flag("--blind", tr_blind, "Train on sigma ~ U[0, sigma_max]");
  tr->add_option("--epochs", tr_epochs, "Number of epochs");
  tr->add_option("--log", tr_log, "Write per-iteration metrics here");
  tr->add_option("--val", tr_val, "Directory of clean validation images");
  tr->add_option("--manifest", tr_manifest, "Write the patch manifest here");

  // train-nenet
  auto* tn = app.add_subcommand("train-nenet", "Train the noise estimator and store it in a model file");
  std::string tn_data, tn_out, tn_model, tn_log;
  NenetTrainConfig tn_cfg;
  int tn_patch = 40, tn_stride = 20;
  std::int64_t tn_count = 0;
  tn->add_option("--data", tn_data, "Directory of clean images")->required();
  tn->add_option("--out", tn_out, "Output model file")->required();
  tn->add_option("--model", tn_model, "Model whose noise estimator is replaced (default: fresh blind model)");
  tn->add_option("--epochs", tn_cfg.epochs)->capture_default_str();
  tn->add_option("--batch", tn_cfg.batch)->capture_default_str();
  tn->add_option("--lr", tn_cfg.lr)->capture_default_str();
  tn->add_option("--max-batches", tn_cfg.max_batches)->capture_default_str();
  tn->add_option("--patch", tn_patch, "Training patch size")->capture_default_str();
  tn->add_option("--stride", tn_stride, "Training patch stride")->capture_default_str();
  tn->add_option("--count", tn_count, "Keep at most this many patches (0 = all)")->capture_default_str();
  tn->add_option("--log", tn_log, "Write per-iteration losses here");

  // denoise
  auto* dn = app.add_subcommand("denoise", "Denoise an image or a directory of images");
  std::string dn_model, dn_in, dn_out;
  double dn_sigma = -1;
  bool dn_blind = false;
  dn->add_option("--model", dn_model, "Model file")->required();
  dn->add_option("--input", dn_in, "Noisy image or directory")->required();
  dn->add_option("--output", dn_out, "Output image or directory")->required();
  auto* dn_sig_opt = dn->add_option("--sigma", dn_sigma, "Noise level on the [0,255] scale");
  auto* dn_blind_opt = dn->add_flag("--blind", dn_blind, "Estimate the noise level first");
  dn_sig_opt->excludes(dn_blind_opt);

  // estimate
  auto* es = app.add_subcommand("estimate", "Estimate the noise level of images");
  std::string es_model, es_in;
  int es_patch = 4, es_stride = 1;
  es->add_option("--model", es_model, "Model file (default: uniform patch weights)");
  es->add_option("--input", es_in, "Image or directory")->required();
  es->add_option("--patch", es_patch, "Patch size when no model is given")->capture_default_str();
  es->add_option("--stride", es_stride, "Patch stride when no model is given")->capture_default_str();

  // deblur
  auto* db = app.add_subcommand("deblur", "Plug-and-play deblurring with a blind model");
  std::string db_model, db_in, db_out, db_kernel, db_clean, db_trace;
  DeblurOptions db_opt;
  db->add_option("--model", db_model, "Blind model file")->required();
  db->add_option("--input", db_in, "Blurred noisy image")->required();
  db->add_option("--output", db_out, "Output image")->required();
  db->add_option("--kernel", db_kernel, "Blur kernel text file")->required();
  db->add_option("--lambda", db_opt.lambda, "Data-term weight")->capture_default_str();
  db->add_option("--max-iters", db_opt.max_iters, "Iteration cap")->capture_default_str();
  db->add_option("--clean", db_clean, "Reference image for per-iteration PSNR");
  db->add_option("--trace", db_trace, "Write the beta trace here");

  // atoms
  auto* at = app.add_subcommand("atoms", "Render one synthesis atom of a model");
  std::string at_model, at_out;
  int at_level = 1, at_channel = 0, at_size = 64;
  double at_amp = 1.0;
  at->add_option("--model", at_model, "Model file")->required();
  at->add_option("--output", at_out, "Output image")->required();
  at->add_option("--level", at_level)->capture_default_str();
  at->add_option("--channel", at_channel)->capture_default_str();
  at->add_option("--amplitude", at_amp)->capture_default_str();
  at->add_option("--size", at_size)->capture_default_str();

  // eval
  auto* ev = app.add_subcommand("eval", "PSNR of every image in --noisy against the same name in --clean");
  std::string ev_clean, ev_noisy, ev_report;
  ev->add_option("--clean", ev_clean, "Directory of reference images")->required();
  ev->add_option("--noisy", ev_noisy, "Directory of images to score")->required();
  ev->add_option("--report", ev_report, "Also write the report here");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  if (!rev.empty()) rev.pop_back();  // program name
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*dn && !dn_blind && dn_sigma < 0) throw detail::UsageError("denoise: give --sigma S or --blind\n" + dn->help());

    if (*tr) {
      std::map<std::string, std::string> kv;
      if (!tr_config.empty()) kv = read_config_file(tr_config);
      for (const auto& [k, v] : detail::parse_overrides(tr_sets)) kv[k] = v;
      if (tr_sigma >= 0) kv["sigma"] = std::to_string(tr_sigma);
      if (tr_blind) kv["blind"] = "1";
      if (tr_epochs > 0) kv["epochs"] = std::to_string(tr_epochs);
      if (app.get_option("--seed")->count() || !kv.count("seed")) kv["seed"] = std::to_string(seed);
      auto setup = train_setup_from_map(kv);
      auto ds = build_patch_dataset<Real>(tr_data, setup.data);
      if (!tr_manifest.empty()) write_manifest(ds, tr_manifest);
      std::vector<Tensor<Real>> val;
      if (!tr_val.empty()) val = detail::load_all<Real>(tr_val);
      std::ofstream logf;
      if (!tr_log.empty()) {
        logf.open(tr_log, std::ios::trunc);
        if (!logf) throw ArgumentError("cannot write log '" + tr_log + "'");
      }
      auto res = train_winnet<Real>(setup.train, setup.model, ds, val, tr_log.empty() ? nullptr : &logf);
      save_model(res.model, tr_out);
      const auto& last = res.epochs.back();
      char buf[160];
      std::snprintf(buf, sizeof buf, "trained %d epochs on %lld patches; final L_r %.4f", last.epoch,
                    static_cast<long long>(ds.size()), last.recon);
      out << buf;
      if (!val.empty()) {
        std::snprintf(buf, sizeof buf, "; validation PSNR %.2f dB", last.val_psnr);
        out << buf;
      }
      out << "\n";
      return 0;
    }

    if (*tn) {
      tn_cfg.seed = seed;
      DatasetOptions dopt;
      dopt.patch = tn_patch;
      dopt.stride = tn_stride;
      dopt.count = tn_count;
      dopt.seed = seed;
      WinnetModel<Real> m;
      if (!tn_model.empty()) {
        m = load_model<Real>(tn_model);
      } else {
        WinnetConfig c;
        c.blind = true;
        c.seed = seed;
        m = make_model<Real>(c);
      }
      tn_cfg.patch = m.config.nenet_patch;
      tn_cfg.stride = m.config.nenet_stride;
      auto ds = build_patch_dataset<Real>(tn_data, dopt);
      std::ofstream logf;
      if (!tn_log.empty()) {
        logf.open(tn_log, std::ios::trunc);
        if (!logf) throw ArgumentError("cannot write log '" + tn_log + "'");
      }
      auto res = train_nenet<Real>(tn_cfg, ds, tn_log.empty() ? nullptr : &logf);
      m.nenet = res.params;
      save_model(m, tn_out);
      char buf[96];
      std::snprintf(buf, sizeof buf, "trained noise estimator; final L_n %.4f\n", res.epochs.back().loss);
      out << buf;
      return 0;
    }

    if (*dn) {
      auto m = load_model<Real>(dn_model);
      namespace fs = std::filesystem;
      detail::require_file(dn_in, "input");
      std::vector<std::pair<std::string, std::string>> jobs;
      if (fs::is_directory(dn_in)) {
        fs::create_directories(dn_out);
        for (const auto& f : list_images(dn_in)) jobs.emplace_back(f, (fs::path(dn_out) / fs::path(f).filename()).string());
      } else {
        jobs.emplace_back(dn_in, dn_out);
      }
      for (const auto& [src, dst] : jobs) {
        auto y = load_image<Real>(src);
        NoGradGuard ng;
        if (dn_blind) {
          auto r = denoise_blind(y, m);
          save_image(r.image, dst);
          char buf[64];
          std::snprintf(buf, sizeof buf, "\t%.4f\n", r.sigma_hat);
          out << detail::stem_name(src) << buf;
        } else {
          save_image(denoise(y, dn_sigma, m), dst);
        }
      }
      return 0;
    }

    if (*es) {
      detail::require_file(es_in, "input");
      std::vector<std::string> files;
      if (std::filesystem::is_directory(es_in)) files = list_images(es_in);
      else files.push_back(es_in);
      if (files.empty()) throw ArgumentError("estimate: no images in '" + es_in + "'");
      std::optional<WinnetModel<Real>> m;
      if (!es_model.empty()) m = load_model<Real>(es_model);
      for (const auto& f : files) {
        auto y = load_image<Real>(f);
        double s;
        if (m) {
          s = estimate_noise(y, *m);
        } else {
          NoGradGuard ng;
          auto pm = extract_patches(y, es_patch, es_stride);
          s = estimate_sigma(pm, Tensor<Real>::full({pm.count}, Real(1))).item();
        }
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.4f\n", s);
        if (files.size() > 1) out << detail::stem_name(f) << '\t';
        out << buf;
      }
      return 0;
    }

    if (*db) {
      auto m = load_model<Real>(db_model);
      auto k = load_kernel<Real>(db_kernel);
      auto y = load_image<Real>(db_in);
      std::optional<Tensor<Real>> ref;
      if (!db_clean.empty()) ref = load_image<Real>(db_clean);
      std::ostringstream tl;
      auto r = hqs_deblur(y, k, m, db_opt, ref ? &*ref : nullptr, &tl);
      save_image(r.image, db_out);
      if (!db_trace.empty()) {
        std::ofstream f(db_trace, std::ios::trunc);
        if (!f) throw ArgumentError("cannot write trace '" + db_trace + "'");
        f << tl.str();
      }
      out << "iterations\t" << r.trace.size() << "\n";
      if (ref) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "psnr_in\t%.2f\npsnr_out\t%.2f\n", psnr(y, *ref), psnr(r.image, *ref));
        out << buf;
      }
      return 0;
    }

    if (*at) {
      auto m = load_model<Real>(at_model);
      auto a = visualize_atom(m, at_level, at_channel, at_amp, at_size, at_size);
      save_image(a.normalized, at_out);
      return 0;
    }

    if (*ev) {
      const auto noisy = list_images(ev_noisy);
      if (!std::filesystem::is_directory(ev_clean))
        throw ImageError(ImageError::Kind::Unreadable, "'" + ev_clean + "' is not a directory");
      if (noisy.empty()) throw ArgumentError("eval: no images in '" + ev_noisy + "'");
      std::vector<ReportRow> rows;
      for (const auto& f : noisy) {
        const auto name = detail::stem_name(f);
        const auto ref = (std::filesystem::path(ev_clean) / name).string();
        detail::require_file(ref, "reference image");
        rows.push_back({name, psnr(load_image<Real>(f), load_image<Real>(ref))});
      }
      emit_report(rows, out);
      if (!ev_report.empty()) emit_report(rows, ev_report);
      return 0;
    }
  } catch (const detail::UsageError& e) {
    err << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return run(std::vector<std::string>(argv, argv + argc), out, err);
}

}  // namespace winnet
