// SPDX-License-Identifier: Apache-2.0
/**
 * @file   cli.hpp
 * @brief  The `uni4eye` command line: synth, pretrain, transfer, finetune,
 *         evaluate, reconstruct, gradmap and gradcheck.
 *
 * Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
 * Option precedence: flags > --config file > built-in defaults.
 */
#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "uni4eye/checkpoint.hpp"
#include "uni4eye/config.hpp"
#include "uni4eye/datasets.hpp"
#include "uni4eye/evaluation.hpp"
#include "uni4eye/gradcheck.hpp"
#include "uni4eye/imaging.hpp"
#include "uni4eye/pipeline.hpp"

namespace uni4eye::cli {

namespace fs = std::filesystem;

inline std::string utc_timestamp() {
  std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

/// Creates `<parent>/<command>-<UTC>-<seed>` (or exactly `fixed`) holding the
/// given files. Files are written into a hidden staging directory first and
/// the directory is renamed into place only once complete.
inline fs::path create_run_dir(const fs::path &parent, const std::string &command,
                               std::uint64_t seed, const fs::path &fixed,
                               const std::vector<std::pair<std::string, std::string>> &files) {
  fs::path target;
  if (!fixed.empty()) {
    target = fixed;
    if (fs::exists(target))
      throw ConfigError("run directory '" + target.string() + "' already exists");
  } else {
    std::string base = command + "-" + utc_timestamp() + "-" + std::to_string(seed);
    target = parent / base;
    for (int k = 1; fs::exists(target); ++k)
      target = parent / (base + "-" + std::to_string(k));
  }
  fs::path dir = target.parent_path().empty() ? fs::path(".") : target.parent_path();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec)
    throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  fs::path staging = dir / ("." + target.filename().string() + ".tmp");
  fs::remove_all(staging, ec);
  fs::create_directory(staging, ec);
  if (ec)
    throw IoError("cannot create '" + staging.string() + "': " + ec.message());
  try {
    for (const auto &[name, text] : files)
      write_text(staging / name, text);
    fs::rename(staging, target);
  } catch (...) {
    fs::remove_all(staging, ec);
    throw;
  }
  return target;
}

/// Writes every line to the console stream and to `<run>/log.txt`.
class RunLog {
public:
  RunLog(std::ostream &console, const fs::path &file)
      : console_(console), file_(file, std::ios::app) {}
  void line(const std::string &s) {
    console_ << s << "\n";
    file_ << s << "\n";
    file_.flush();
  }

private:
  std::ostream &console_;
  std::ofstream file_;
};

/// Flag bindings: each records how to apply an explicitly given flag on top
/// of the file/default configuration.
class Bindings {
public:
  template <class T>
  CLI::Option *add(CLI::App *app, const std::string &name, T &var,
                   const std::string &desc,
                   std::function<void(RunConfig &, const T &)> apply) {
    CLI::Option *o = app->add_option(name, var, desc)->capture_default_str();
    items_.push_back({o, [&var, apply](RunConfig &c) { apply(c, var); }});
    return o;
  }
  CLI::Option *flag(CLI::App *app, const std::string &name, bool &var,
                    const std::string &desc,
                    std::function<void(RunConfig &)> apply) {
    CLI::Option *o = app->add_flag(name, var, desc);
    items_.push_back({o, [apply](RunConfig &c) { apply(c); }});
    return o;
  }
  void apply(RunConfig &c) const {
    for (const auto &[opt, fn] : items_)
      if (opt->count() > 0)
        fn(c);
  }

private:
  std::vector<std::pair<CLI::Option *, std::function<void(RunConfig &)>>> items_;
};

inline std::pair<bool, bool> parse_dims(const std::string &d) {
  if (d == "both")
    return {true, true};
  if (d == "2")
    return {true, false};
  if (d == "3")
    return {false, true};
  throw ConfigError("--dims must be 2, 3 or both");
}

inline std::vector<double> parse_list(const std::string &s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size())
        throw std::invalid_argument(item);
    } catch (const std::exception &) {
      throw ConfigError("'" + s + "' is not a comma-separated list of numbers");
    }
  }
  return out;
}

inline int infer_dims(const fs::path &p) {
  auto ext = p.extension().string();
  if (ext == ".png" || ext == ".PNG")
    return 2;
  if (ext == ".raw")
    return 3;
  throw ConfigError("cannot tell dimensionality of '" + p.string() +
                    "' (expected .png or .raw)");
}

inline std::string alpha_tag(double a) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%.2f", a);
  return buf;
}

inline Model<float> model_for_stage_d(const Checkpoint &c) {
  Model<float> m = model_from_checkpoint<float>(c);
  if (!m.head)
    throw ConfigError("checkpoint has no classification head; run `uni4eye "
                      "transfer` on it first");
  return m;
}

inline Manifest load_manifest_checked(const std::string &path) {
  if (path.empty())
    throw ConfigError("no manifest given (use --manifest or the config key "
                      "\"manifest\")");
  if (!fs::exists(path))
    throw ConfigError("manifest '" + path + "' does not exist");
  Manifest m = read_manifest(path);
  m.check();
  return m;
}

/// Parses and runs one command line. `args[0]` is the program name.
inline int run_cli(const std::vector<std::string> &args, std::ostream &out,
                   std::ostream &err) {
  CLI::App app{"Unified 2D/3D masked image modelling with intensity and edge "
               "reconstruction, plus fine-tuning and evaluation.",
               "uni4eye"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  app.footer("Exit codes: 0 success, 1 usage/config error, 2 runtime failure.\n"
             "Precedence: flags > --config file > defaults.");

  RunConfig defaults;
  std::string config_path, runs_dir = defaults.runs_dir, run_dir;
  std::uint64_t seed = 0;
  bool deterministic = false;
  std::string manifest_flag;
  Bindings bind;

  auto common = [&](CLI::App *sub) {
    sub->add_option("--config", config_path, "JSON run configuration file")
        ->check(CLI::ExistingFile);
    bind.add<std::uint64_t>(sub, "--seed", seed, "Random seed",
                            [](RunConfig &c, const std::uint64_t &v) { c.seed = v; });
    bind.add<std::string>(sub, "--runs-dir", runs_dir,
                          "Parent directory of timestamped run directories",
                          [](RunConfig &c, const std::string &v) { c.runs_dir = v; });
    sub->add_option("--run-dir", run_dir,
                    "Exact run directory to create instead of a timestamped one");
    sub->add_flag("--deterministic", deterministic,
                  "Force single-threaded deterministic execution (always on)");
  };
  auto manifest_opt = [&](CLI::App *sub) {
    bind.add<std::string>(sub, "--manifest", manifest_flag, "Corpus manifest.json",
                          [](RunConfig &c, const std::string &v) { c.manifest = v; });
  };

  // synth ------------------------------------------------------------------
  auto *synth = app.add_subcommand("synth", "Generate a synthetic fundus/volume corpus");
  common(synth);
  std::string synth_out;
  int n2 = 256, n3 = 16, image_size = 64;
  std::string volume_size = "32,64,32", split_counts;
  double lesion_prob = 0.5;
  synth->add_option("--out", synth_out, "Output corpus directory")->required();
  synth->add_option("--n-2d", n2, "Number of 2D images")->check(CLI::NonNegativeNumber);
  synth->add_option("--n-3d", n3, "Number of 3D volumes")->check(CLI::NonNegativeNumber);
  synth->add_option("--image-size", image_size, "Square image side in pixels")
      ->check(CLI::PositiveNumber);
  synth->add_option("--volume-size", volume_size, "Volume extent D,H,W");
  synth->add_option("--lesion-prob", lesion_prob, "Probability of a lesion (label 1)")
      ->check(CLI::Range(0.0, 1.0));
  synth->add_option("--split-counts", split_counts,
                    "Explicit train,val,test counts (default: id-hash 70/15/15)");

  // pretrain ---------------------------------------------------------------
  auto *pre = app.add_subcommand("pretrain", "Stage P: masked reconstruction pre-training");
  common(pre);
  manifest_opt(pre);
  TrainConfig pd = defaults.pretrain;
  std::string dims_p = "both", preset_p, decoders = "both";
  bool no_aug_p = false;
  bind.add<int>(pre, "--epochs", pd.epochs, "Training epochs",
                [](RunConfig &c, const int &v) { c.pretrain.epochs = v; });
  bind.add<long>(pre, "--steps", pd.steps, "Exact step budget (overrides epochs when > 0)",
                 [](RunConfig &c, const long &v) { c.pretrain.steps = v; });
  bind.add<double>(pre, "--lr", pd.lr, "Initial learning rate",
                   [](RunConfig &c, const double &v) { c.pretrain.lr = v; });
  bind.add<double>(pre, "--alpha", pd.alpha, "Mask ratio in [0,1)",
                   [](RunConfig &c, const double &v) { c.pretrain.alpha = v; });
  bind.add<double>(pre, "--lambda-i", pd.loss.lambda_i, "Intensity loss weight",
                   [](RunConfig &c, const double &v) { c.pretrain.loss.lambda_i = v; });
  bind.add<double>(pre, "--lambda-e", pd.loss.lambda_e, "Edge loss weight",
                   [](RunConfig &c, const double &v) { c.pretrain.loss.lambda_e = v; });
  bind.add<int>(pre, "--batch-2d", pd.batch.batch_size_2d, "2D batch size",
                [](RunConfig &c, const int &v) { c.pretrain.batch.batch_size_2d = v; });
  bind.add<int>(pre, "--batch-3d", pd.batch.batch_size_3d, "3D batch size",
                [](RunConfig &c, const int &v) { c.pretrain.batch.batch_size_3d = v; });
  bind.add<long>(pre, "--checkpoint-every", pd.checkpoint_every,
                 "Write a checkpoint every N steps (0 = only at the end)",
                 [](RunConfig &c, const long &v) { c.pretrain.checkpoint_every = v; });
  bind.add<int>(pre, "--slice-axis", pd.slice_axis, "3D edge-target slicing axis (0=D,1=H,2=W)",
                [](RunConfig &c, const int &v) { c.pretrain.slice_axis = v; });
  bind.add<std::string>(pre, "--dims", dims_p, "Sample dimensionalities: 2, 3 or both",
                        [](RunConfig &c, const std::string &v) {
                          std::tie(c.pretrain.use_2d, c.pretrain.use_3d) = parse_dims(v);
                        });
  bind.add<std::string>(pre, "--decoders", decoders, "Decoders: both, intensity or edge",
                        [](RunConfig &c, const std::string &v) {
                          if (v != "both" && v != "intensity" && v != "edge")
                            throw ConfigError("--decoders must be both, intensity or edge");
                          c.model.intensity_decoder = v != "edge";
                          c.model.edge_decoder = v != "intensity";
                        });
  bind.add<std::string>(pre, "--encoder-preset", preset_p,
                        "Encoder preset: vit-tiny, vit-base or vit-large",
                        [](RunConfig &c, const std::string &v) {
                          c.model.encoder = EncoderConfig::preset(v);
                          c.model.patch.embed_dim = c.model.encoder.dim;
                        });
  bind.flag(pre, "--no-augment", no_aug_p, "Disable augmentation",
            [](RunConfig &c) { c.pretrain.augment_enabled = false; });

  // transfer ---------------------------------------------------------------
  auto *tr = app.add_subcommand("transfer", "Load UPE + encoder into a stage D model with a new head");
  common(tr);
  std::string tr_ckpt, tr_preset;
  int tr_classes = defaults.num_classes;
  tr->add_option("--checkpoint", tr_ckpt, "Stage P checkpoint")
      ->required()->check(CLI::ExistingFile);
  bind.add<int>(tr, "--num-classes", tr_classes, "Classes of the new head",
                [](RunConfig &c, const int &v) { c.num_classes = v; });
  tr->add_option("--encoder-preset", tr_preset,
                 "Requested encoder preset (default: the checkpoint's own)");

  // finetune ---------------------------------------------------------------
  auto *ft = app.add_subcommand("finetune", "Stage D: supervised fine-tuning");
  common(ft);
  manifest_opt(ft);
  TrainConfig fd = defaults.finetune;
  std::string ft_ckpt, dims_f = "both";
  bool scratch = false, freeze = false, no_aug_f = false;
  int ft_classes = defaults.num_classes;
  auto *ft_ck = ft->add_option("--checkpoint", ft_ckpt, "Stage D checkpoint (from transfer)")
                    ->check(CLI::ExistingFile);
  ft->add_flag("--from-scratch", scratch,
               "Start from a randomly initialised model built from the config")
      ->excludes(ft_ck);
  bind.add<int>(ft, "--num-classes", ft_classes, "Classes (with --from-scratch)",
                [](RunConfig &c, const int &v) { c.num_classes = v; });
  bind.add<int>(ft, "--epochs", fd.epochs, "Training epochs",
                [](RunConfig &c, const int &v) { c.finetune.epochs = v; });
  bind.add<long>(ft, "--steps", fd.steps, "Exact step budget (overrides epochs when > 0)",
                 [](RunConfig &c, const long &v) { c.finetune.steps = v; });
  bind.add<double>(ft, "--lr", fd.lr, "Initial learning rate",
                   [](RunConfig &c, const double &v) { c.finetune.lr = v; });
  bind.add<int>(ft, "--batch-2d", fd.batch.batch_size_2d, "2D batch size",
                [](RunConfig &c, const int &v) { c.finetune.batch.batch_size_2d = v; });
  bind.add<int>(ft, "--batch-3d", fd.batch.batch_size_3d, "3D batch size",
                [](RunConfig &c, const int &v) { c.finetune.batch.batch_size_3d = v; });
  bind.add<std::string>(ft, "--dims", dims_f, "Sample dimensionalities: 2, 3 or both",
                        [](RunConfig &c, const std::string &v) {
                          std::tie(c.finetune.use_2d, c.finetune.use_3d) = parse_dims(v);
                        });
  bind.flag(ft, "--freeze-encoder", freeze, "Train only the classification head",
            [](RunConfig &c) { c.finetune.freeze_encoder = true; });
  bind.flag(ft, "--no-augment", no_aug_f, "Disable augmentation",
            [](RunConfig &c) { c.finetune.augment_enabled = false; });

  // evaluate ---------------------------------------------------------------
  auto *ev = app.add_subcommand("evaluate", "Score stage D checkpoints on a split");
  common(ev);
  manifest_opt(ev);
  std::vector<std::string> ev_ckpts, ev_names;
  std::string ev_split = "test", dims_e = "both";
  int bootstrap = 0;
  ev->add_option("--checkpoint", ev_ckpts, "Stage D checkpoint(s); one report each")
      ->required()->check(CLI::ExistingFile);
  ev->add_option("--name", ev_names, "Row names for the table (default: file stems)");
  ev->add_option("--split", ev_split, "Split to score: train, val or test");
  ev->add_option("--dims", dims_e, "Sample dimensionalities: 2, 3 or both");
  ev->add_option("--bootstrap", bootstrap, "Bootstrap resamples for 95% intervals (0 = off)")
      ->check(CLI::NonNegativeNumber);

  // reconstruct ------------------------------------------------------------
  auto *rc = app.add_subcommand("reconstruct", "Write masked / reconstructed panels");
  common(rc);
  std::string rc_ckpt, rc_input, rc_sweep;
  double rc_alpha = 0.5;
  int rc_axis = 0;
  rc->add_option("--checkpoint", rc_ckpt, "Stage P checkpoint")
      ->required()->check(CLI::ExistingFile);
  rc->add_option("--input", rc_input, "Input .png image or .raw volume")
      ->required()->check(CLI::ExistingFile);
  rc->add_option("--alpha", rc_alpha, "Mask ratio in [0,1)");
  rc->add_option("--alpha-sweep", rc_sweep, "Comma-separated mask ratios, e.g. 0.25,0.5,0.75");
  rc->add_option("--slice-axis", rc_axis, "Volume axis for the central slice and edge target");

  // gradmap ----------------------------------------------------------------
  auto *gm = app.add_subcommand("gradmap", "Export the Sobel gradient-map target of an input");
  common(gm);
  std::string gm_input, gm_output;
  int gm_axis = 0;
  gm->add_option("--input", gm_input, "Input .png image or .raw volume")
      ->required()->check(CLI::ExistingFile);
  gm->add_option("--output", gm_output, "Output file (default: <run>/<stem>_gradmap.<ext>)");
  gm->add_option("--slice-axis", gm_axis, "Volume slicing axis (0=D,1=H,2=W)");
  gm->add_flag("--native", "Keep the input resolution instead of resizing to the canonical shape");

  // gradcheck --------------------------------------------------------------
  auto *gc = app.add_subcommand("gradcheck", "Finite-difference check of all analytic gradients");
  common(gc);
  std::string precision = "both";
  int gc_params = 50;
  gc->add_option("--precision", precision, "32, 64 or both")
      ->check(CLI::IsMember({"32", "64", "both"}));
  gc->add_option("--params", gc_params, "Number of sampled parameters")
      ->check(CLI::PositiveNumber);

  // ------------------------------------------------------------------------
  std::vector<const char *> argv;
  for (const auto &a : args)
    argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError &e) {
    int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  CLI::App *sub = app.get_subcommands().front();
  const std::string cmd = sub->get_name();
  RunConfig cfg;
  fs::path run;
  try {
    if (!config_path.empty())
      cfg = read_run_config(config_path, cfg);
    bind.apply(cfg);
    cfg.sync_seed();
    if (!cfg.manifest.empty())
      cfg.manifest = fs::absolute(cfg.manifest).lexically_normal().string();
    cfg.check();

    // Everything checkable without side effects fails before the run
    // directory exists.
    if (cmd == "pretrain" || cmd == "finetune" || cmd == "evaluate")
      load_manifest_checked(cfg.manifest);
    if (cmd == "finetune" && !scratch && ft_ckpt.empty())
      throw ConfigError("finetune needs --checkpoint or --from-scratch");
    if (cmd == "evaluate") {
      parse_split(ev_split);
      parse_dims(dims_e);
      if (!ev_names.empty() && ev_names.size() != ev_ckpts.size())
        throw ConfigError("--name must be given once per --checkpoint");
    }
    if (cmd == "reconstruct" && !rc_sweep.empty())
      parse_list(rc_sweep);

    nlohmann::json command = {{"command", cmd}, {"argv", args}};
    run = create_run_dir(cfg.runs_dir, cmd, cfg.seed, run_dir,
                         {{"config.json", to_json(cfg).dump(2) + "\n"},
                          {"command.json", command.dump(2) + "\n"}});
  } catch (const Error &e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception &e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }

  RunLog log(out, run / "log.txt");
  log.line("run directory: " + run.string());
  try {
    if (cmd == "synth") {
      SynthOptions o;
      o.seed = cfg.seed;
      o.n_2d = n2;
      o.n_3d = n3;
      o.geometry.image = {image_size, image_size};
      auto v = parse_list(volume_size);
      if (v.size() != 3)
        throw ConfigError("--volume-size needs three values D,H,W");
      o.geometry.volume = {static_cast<int>(v[0]), static_cast<int>(v[1]),
                           static_cast<int>(v[2])};
      o.lesion_prob = lesion_prob;
      if (!split_counts.empty()) {
        auto s = parse_list(split_counts);
        if (s.size() != 3)
          throw ConfigError("--split-counts needs three values train,val,test");
        o.split_counts = std::array<int, 3>{static_cast<int>(s[0]),
                                            static_cast<int>(s[1]),
                                            static_cast<int>(s[2])};
      }
      Manifest m = synth_corpus(o, synth_out);
      int lesions = 0;
      for (const auto &e : m.entries)
        lesions += e.label.value_or(0);
      log.line("wrote " + std::to_string(m.entries.size()) + " samples (" +
               std::to_string(lesions) + " with lesion) to " + synth_out);
    } else if (cmd == "pretrain") {
      Manifest m = load_manifest_checked(cfg.manifest);
      ModelConfig mc = cfg.model;
      mc.num_classes = 0;
      Model<float> model = Model<float>::create(mc, cfg.seed);
      log.line("model: " + std::to_string(model.parameter_count()) + " parameters");
      PretrainHooks hooks;
      hooks.on_step = [&](const LossRow &r) {
        if (r.step % 10 == 0)
          log.line("step " + std::to_string(r.step) + " dims " +
                   std::to_string(r.dims) + " L_i " + fmt_double(r.loss_intensity) +
                   " L_e " + fmt_double(r.loss_edge) + " L_ssl " +
                   fmt_double(r.loss_ssl) + " lr " + fmt_double(r.lr));
      };
      PretrainResult r = pretrain(cfg.pretrain, m, model, run, hooks);
      write_text(run / "loss_log.csv", loss_log_csv(r.log));
      save_checkpoint(r.checkpoint, run / "checkpoint.u4e");
      log.line("checkpoint: " + (run / "checkpoint.u4e").string());
    } else if (cmd == "transfer") {
      Checkpoint c = load_checkpoint(tr_ckpt);
      std::optional<ModelConfig> req;
      if (!tr_preset.empty()) {
        ModelConfig mc = c.model_config();
        mc.encoder = EncoderConfig::preset(tr_preset);
        mc.patch.embed_dim = mc.encoder.dim;
        req = mc;
      }
      TransferReport rep;
      Model<float> model = transfer<float>(c, cfg.num_classes, cfg.seed, &rep, req);
      nlohmann::json train = c.config.value("train", nlohmann::json::object());
      save_checkpoint(make_checkpoint(model, train, 0, ""), run / "transferred.u4e");
      write_text(run / "transfer_report.json",
                 nlohmann::json{{"loaded", rep.loaded},
                                {"dropped", rep.dropped},
                                {"new", rep.fresh}}
                         .dump(2) +
                     "\n");
      log.line("loaded " + std::to_string(rep.loaded.size()) + ", dropped " +
               std::to_string(rep.dropped.size()) + ", new " +
               std::to_string(rep.fresh.size()) + " tensors");
      log.line("checkpoint: " + (run / "transferred.u4e").string());
    } else if (cmd == "finetune") {
      Manifest m = load_manifest_checked(cfg.manifest);
      Model<float> model;
      if (scratch) {
        ModelConfig mc = cfg.model;
        mc.intensity_decoder = false;
        mc.edge_decoder = false;
        mc.num_classes = cfg.num_classes;
        model = Model<float>::create(mc, cfg.seed);
      } else if (!ft_ckpt.empty()) {
        model = model_for_stage_d(load_checkpoint(ft_ckpt));
      } else {
        throw ConfigError("finetune needs --checkpoint or --from-scratch");
      }
      FinetuneResult r = finetune(cfg.finetune, m, std::move(model));
      write_text(run / "metric_log.csv", metric_log_csv(r.log));
      for (const auto &row : r.log)
        log.line("epoch " + std::to_string(row.epoch) + " train_ce " +
                 fmt_double(row.train_ce) +
                 (row.val ? " val_auc " + format_percent(row.val->auc) +
                                " val_acc " + format_percent(row.val->accuracy)
                          : std::string()));
      save_checkpoint(r.checkpoint, run / "best.u4e");
      log.line("best epoch " + std::to_string(r.best_epoch) + "; checkpoint: " +
               (run / "best.u4e").string());
    } else if (cmd == "evaluate") {
      Manifest m = load_manifest_checked(cfg.manifest);
      Split split = parse_split(ev_split);
      auto [u2, u3] = parse_dims(dims_e);
      auto idx = m.select(split, u2, u3);
      if (idx.empty())
        throw ConfigError("split '" + ev_split + "' has no samples");
      if (!ev_names.empty() && ev_names.size() != ev_ckpts.size())
        throw ConfigError("--name must be given once per --checkpoint");
      std::vector<std::pair<std::string, MetricsReport>> rows;
      nlohmann::json reports = nlohmann::json::object();
      for (std::size_t i = 0; i < ev_ckpts.size(); ++i) {
        Model<float> model = model_for_stage_d(load_checkpoint(ev_ckpts[i]));
        SampleStore store(m, model.config.geometry);
        PredictionSet ps = predict(model, store, idx);
        MetricsReport rep = compute_metrics(ps);
        std::string name = ev_names.empty() ? fs::path(ev_ckpts[i]).parent_path().filename().string() +
                                                  "/" + fs::path(ev_ckpts[i]).stem().string()
                                            : ev_names[i];
        nlohmann::json j = to_json(rep);
        j["checkpoint"] = ev_ckpts[i];
        j["split"] = ev_split;
        j["n"] = ps.size();
        if (bootstrap > 0) {
          nlohmann::json ci = nlohmann::json::object();
          for (const char *metric : {"auc", "accuracy", "precision", "recall", "f1", "kappa"}) {
            try {
              auto c = bootstrap_ci(ps, metric, bootstrap, cfg.seed);
              ci[metric] = {{"low", round2(c.low)}, {"high", round2(c.high)},
                            {"resamples", c.resamples}, {"skipped", c.skipped}};
            } catch (const Error &e) {
              ci[metric] = {{"error", e.what()}};
            }
          }
          j["ci95"] = ci;
        }
        for (const auto &w : rep.warnings)
          log.line("warning (" + name + "): " + w);
        reports[name] = j;
        rows.emplace_back(name, rep);
      }
      std::string table = format_table(rows);
      write_text(run / "metrics.json", reports.dump(2) + "\n");
      write_text(run / "report.txt", table);
      out << table;
    } else if (cmd == "reconstruct") {
      Checkpoint c = load_checkpoint(rc_ckpt);
      Model<float> model = model_from_checkpoint<float>(c);
      if (!model.config.stage_p())
        throw ConfigError("reconstruct needs a stage P checkpoint (this one has no decoders)");
      std::vector<double> alphas =
          rc_sweep.empty() ? std::vector<double>{rc_alpha} : parse_list(rc_sweep);
      fs::path in(rc_input);
      ImageSample s = load_sample(in, infer_dims(in), model.config.geometry);
      Rng rng(cfg.seed);
      std::string stem = in.stem().string();
      write_png(run / (stem + "_original.png"), panel_view(s, rc_axis));
      for (double a : alphas) {
        auto p = reconstruct(model, s, a, rng, rc_axis);
        std::string tag = stem + "_a" + alpha_tag(a);
        write_png(run / (tag + "_masked.png"), p.masked);
        if (p.intensity)
          write_png(run / (tag + "_intensity.png"), *p.intensity);
        if (p.edge)
          write_png(run / (tag + "_edge.png"), *p.edge);
        log.line("alpha " + alpha_tag(a) + " L_i " + fmt_double(p.loss_intensity) +
                 " L_e " + fmt_double(p.loss_edge));
      }
    } else if (cmd == "gradmap") {
      fs::path in(gm_input);
      int d = infer_dims(in);
      ImageSample s;
      if (gm->count("--native") > 0) {
        s = d == 2 ? read_png(in, 3) : read_raw_volume(in);
      } else {
        s = load_sample(in, d, cfg.model.geometry);
      }
      ImageSample g = edge_target(s, gm_axis);
      fs::path outp = gm_output.empty()
                          ? run / (in.stem().string() + "_gradmap" + (d == 2 ? ".png" : ".raw"))
                          : fs::path(gm_output);
      if (d == 2)
        write_png(outp, g);
      else
        write_raw_volume(outp, g);
      log.line("gradient map: " + outp.string());
    } else if (cmd == "gradcheck") {
      GradCheckOptions o;
      o.n_params = gc_params;
      o.seed = cfg.seed;
      bool ok = true;
      nlohmann::json j = nlohmann::json::object();
      auto report = [&](const std::string &label, const GradCheckReport &r, double tol) {
        bool pass = r.max_rel_error < tol;
        ok = ok && pass;
        log.line(label + "-bit: max relative error " + fmt_double(r.max_rel_error) +
                 " over " + std::to_string(r.entries.size()) + " parameters (tolerance " +
                 fmt_double(tol) + ") " + (pass ? "PASS" : "FAIL"));
        nlohmann::json entries = nlohmann::json::array();
        for (const auto &e : r.entries)
          entries.push_back({{"param", e.param}, {"index", e.index},
                             {"analytic", e.analytic}, {"numeric", e.numeric},
                             {"rel_error", e.rel_error}});
        j[label] = {{"max_rel_error", r.max_rel_error}, {"tolerance", tol},
                    {"pass", pass}, {"entries", entries}};
      };
      if (precision != "32")
        report("64", gradcheck<double>(o), 1e-6);
      if (precision != "64")
        report("32", gradcheck<float>(o), 1e-3);
      write_text(run / "gradcheck.json", j.dump(2) + "\n");
      if (!ok)
        return 2;
    }
  } catch (const ConfigError &e) {
    log.line(std::string("error: ") + e.what());
    return 1;
  } catch (const std::exception &e) {
    log.line(std::string("error: ") + e.what());
    return 2;
  }
  return 0;
}

inline int run_cli(int argc, char **argv, std::ostream &out = std::cout,
                   std::ostream &err = std::cerr) {
  std::vector<std::string> args(argv, argv + argc);
  return run_cli(args, out, err);
}

} // namespace uni4eye::cli
