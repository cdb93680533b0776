#include "cli.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "samtta/adapt.hpp"
#include "samtta/calibrate.hpp"
#include "samtta/checkpoint.hpp"
#include "samtta/error.hpp"
#include "samtta/pretrain.hpp"
#include "samtta/run_manifest.hpp"
#include "samtta/synthdata.hpp"

namespace samtta::cli {

namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kSubcommands = {"gen", "pretrain", "adapt", "eval", "calibrate"};

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read '" + path.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
}

std::vector<StreamSample> load_manifest_samples(const fs::path& manifest, bool normalize) {
  const auto entries = read_manifest(manifest);
  if (entries.empty()) throw DomainError("manifest '" + manifest.string() + "' lists no samples");
  std::vector<StreamSample> samples;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    try {
      samples.push_back(load_sample(entries[i]));
      if (normalize) normalize_minmax(samples.back().image);
    } catch (const std::exception& e) {
      throw Error("sample " + std::to_string(i) + " unreadable: " + e.what());
    }
  }
  return samples;
}

// Runs `body` and writes the run manifest afterwards, whether it succeeded or not.
int with_manifest(RunManifest& manifest, const fs::path& path, std::ostream& err,
                  const std::function<void()>& body) {
  const auto start = std::chrono::steady_clock::now();
  int code = kExitOk;
  try {
    body();
    manifest.ok = true;
  } catch (const std::exception& e) {
    manifest.ok = false;
    manifest.error = e.what();
    err << "error: " << e.what() << '\n';
    code = kExitRuntime;
  }
  manifest.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  try {
    manifest.write(path);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    code = kExitRuntime;
  }
  return code;
}

struct GenArgs {
  std::string profile = "source";
  std::size_t n = 100;
  std::uint64_t seed = 0;
  std::string out;
};

struct PretrainArgs {
  std::string config_file;
  std::string out;
  std::map<std::string, std::string> overrides;
};

struct AdaptArgs {
  std::string checkpoint, manifest, out, dump_sbct;
  std::string strategy = "sam-tta";
  AdaptConfig config;
  bool normalize = false;
};

struct EvalArgs {
  std::string pred, manifest, out;
};

struct CalibrateArgs {
  std::string checkpoint, out;
  std::vector<std::string> manifests;
  std::string mode = "both";
  std::size_t jobs = 1;
  AdaptConfig config;
  bool normalize = false;
};

std::vector<std::pair<std::string, std::string>> adapt_entries(const AdaptConfig& c) {
  return {{"strategy", strategy_name(c.strategy)},
          {"seed", std::to_string(c.seed)},
          {"steps_per_image", std::to_string(c.steps_per_image)},
          {"lr_sbct", format_number(c.lr_sbct)},
          {"lr_lora_prompt", format_number(c.lr_lora_prompt)},
          {"weight_decay", format_number(c.weight_decay)},
          {"ema_alpha", format_number(c.ema_alpha)},
          {"lambda_ifc", format_number(c.lambda_ifc)},
          {"reset_optimizer", c.reset_optimizer ? "true" : "false"},
          {"update_max_every_step", c.update_max_every_step ? "true" : "false"}};
}

void add_adapt_options(CLI::App* sub, AdaptConfig& c) {
  sub->add_option("--seed", c.seed, "Seed for adapter initialisation")->capture_default_str();
  sub->add_option("--steps-per-image", c.steps_per_image, "Gradient steps per image")->capture_default_str();
  sub->add_option("--lr-sbct", c.lr_sbct, "Learning rate of the SBCT scalars")->capture_default_str();
  sub->add_option("--lr-lora-prompt", c.lr_lora_prompt, "Learning rate of LoRA and prompt encoder")
      ->capture_default_str();
  sub->add_option("--weight-decay", c.weight_decay, "Weight decay of LoRA and prompt encoder")->capture_default_str();
  sub->add_option("--ema-alpha", c.ema_alpha, "Teacher EMA rate")->capture_default_str();
  sub->add_option("--lambda-ifc", c.lambda_ifc, "Weight of the feature-consistency term")->capture_default_str();
  sub->add_flag("--reset-optimizer", c.reset_optimizer, "Clear Adam moments before each image");
  sub->add_flag("--update-max-every-step", c.update_max_every_step,
                "Fold S_IoU into the running maximum at every step, not once per image");
}

int run_gen(const GenArgs& a, const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  RunManifest m;
  m.subcommand = "gen";
  m.argv = argv;
  m.seed = a.seed;
  m.config = {{"profile", a.profile}, {"n", std::to_string(a.n)}, {"seed", std::to_string(a.seed)}};
  m.outputs = {{"dir", a.out}};
  return with_manifest(m, fs::path(a.out) / "run.json", err, [&] {
    const ShiftProfile profile = shift_profile(a.profile);
    const auto samples = a.profile == "source" ? gen_source(a.seed, a.n) : gen_target(a.seed, a.n, profile);
    write_dataset(a.out, samples);
    out << "wrote " << samples.size() << " " << a.profile << " samples to " << a.out << '\n';
  });
}

int run_pretrain(const PretrainArgs& a, const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  RunManifest m;
  m.subcommand = "pretrain";
  m.argv = argv;
  m.outputs = {{"checkpoint", a.out}};
  if (!a.config_file.empty()) m.inputs = {{"config", a.config_file}};
  PretrainConfig config;
  return with_manifest(m, a.out + ".run.json", err, [&] {
    if (!a.config_file.empty()) {
      for (const auto& [k, v] : parse_key_values(read_text(a.config_file))) config.set(k, v);
    }
    for (const auto& [k, v] : a.overrides) config.set(k, v);
    m.config = config.entries();
    m.seed = config.seed;
    config.validate();
    PretrainResult result = pretrain(config, [&](const EpochReport& e) {
      out << "epoch " << e.epoch << " train_loss " << format_number(e.train_loss) << " val_dice "
          << format_number(e.val_dice) << (e.improved ? " *" : "") << '\n'
          << std::flush;
    });
    save_checkpoint(result.model, a.out);
    out << "best epoch " << result.best_epoch << " val_dice " << format_number(result.best_val_dice) << '\n';
    out << format_summary(validate(result.model, pretrain_val_set(config)));
  });
}

int run_adapt(AdaptArgs a, const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  RunManifest m;
  m.subcommand = "adapt";
  m.argv = argv;
  m.seed = a.config.seed;
  m.inputs = {{"checkpoint", a.checkpoint}, {"manifest", a.manifest}};
  m.outputs = {{"dir", a.out}};
  if (!a.dump_sbct.empty()) m.outputs.emplace_back("dump_sbct", a.dump_sbct);
  return with_manifest(m, fs::path(a.out) / "run.json", err, [&] {
    a.config.strategy = parse_strategy(a.strategy);
    if (a.config.strategy == Strategy::SbctOnly) throw DomainError("sbct-only is available through calibrate");
    m.config = adapt_entries(a.config);
    m.config.emplace_back("normalize", a.normalize ? "true" : "false");
    const SegModel model = load_checkpoint(a.checkpoint);
    Adapter adapter(model, a.config);
    StreamOutputs outputs{a.out, std::nullopt};
    if (!a.dump_sbct.empty()) outputs.dump_sbct = fs::path(a.dump_sbct);
    const StreamResult result = adapt_manifest(adapter, a.manifest, outputs, a.normalize);
    for (const auto& w : result.warnings) err << "warning: " << w << '\n';
    m.warnings = result.warnings;
    out << format_summary(summarize(result.rows));
  });
}

int run_eval(const EvalArgs& a, const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  RunManifest m;
  m.subcommand = "eval";
  m.argv = argv;
  m.inputs = {{"pred", a.pred}, {"manifest", a.manifest}};
  m.outputs = {{"metrics", a.out}};
  return with_manifest(m, a.out + ".run.json", err, [&] {
    const auto entries = read_manifest(a.manifest);
    if (entries.empty()) throw DomainError("manifest '" + a.manifest + "' lists no samples");
    // Predicted IoU and loss columns are only known to the adapt run.
    std::vector<MetricsRow> logged;
    const fs::path logged_path = fs::path(a.pred) / "metrics.csv";
    if (fs::exists(logged_path)) {
      logged = parse_metrics_csv(read_text(logged_path), hd95_sentinel(kCanvas, kCanvas));
      if (logged.size() != entries.size()) {
        throw FormatError(logged_path.string() + " has " + std::to_string(logged.size()) + " rows, manifest has " +
                          std::to_string(entries.size()));
      }
    }
    std::vector<MetricsRow> rows;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      Image pred, gt;
      try {
        pred = read_pnm(fs::path(a.pred) / indexed_name("pred", i, "pgm"));
        gt = read_pnm(entries[i].mask);
      } catch (const std::exception& e) {
        throw Error("sample " + std::to_string(i) + " unreadable: " + e.what());
      }
      if (pred.channels != 1 || gt.channels != 1 || pred.height != gt.height || pred.width != gt.width) {
        throw ShapeError("sample " + std::to_string(i) + ": prediction and mask differ in shape");
      }
      MetricsRow r = logged.empty() ? MetricsRow{} : logged[i];
      if (logged.empty()) {
        r.pred_iou = r.l_icm = r.l_dpc = r.l_ifc = r.lambda_dpc = std::numeric_limits<double>::quiet_NaN();
      }
      r.index = i;
      r.dice = dice(pred.data, gt.data);
      const auto h = hd95(pred.data, gt.data, gt.height, gt.width);
      r.hd95_defined = h.has_value();
      r.hd95 = h ? *h : hd95_sentinel(gt.height, gt.width);
      r.true_iou = mask_iou(pred.data, gt.data);
      rows.push_back(r);
    }
    write_text(a.out, metrics_csv(rows));
    out << format_summary(summarize(rows));
  });
}

int run_calibrate(CalibrateArgs a, const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  RunManifest m;
  m.subcommand = "calibrate";
  m.argv = argv;
  m.seed = a.config.seed;
  m.inputs = {{"checkpoint", a.checkpoint}};
  for (std::size_t i = 0; i < a.manifests.size(); ++i) m.inputs.emplace_back("manifest" + std::to_string(i), a.manifests[i]);
  m.outputs = {{"dir", a.out}};
  return with_manifest(m, fs::path(a.out) / "run.json", err, [&] {
    std::vector<CalibrationMode> modes;
    if (a.mode == "both") {
      modes = {CalibrationMode::Off, CalibrationMode::SbctOnly};
    } else {
      modes = {parse_calibration_mode(a.mode)};
    }
    if (a.jobs == 0) throw DomainError("--jobs must be at least 1");
    m.config = adapt_entries(a.config);
    m.config.erase(m.config.begin());
    m.config.emplace_back("mode", a.mode);
    m.config.emplace_back("jobs", std::to_string(a.jobs));
    m.config.emplace_back("normalize", a.normalize ? "true" : "false");
    const SegModel model = load_checkpoint(a.checkpoint);

    // Streams are independent, so they may run on separate threads.
    std::vector<std::vector<CalibrationReport>> reports(a.manifests.size());
    std::vector<std::string> failures(a.manifests.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t i = next++; i < a.manifests.size(); i = next++) {
        try {
          const auto samples = load_manifest_samples(a.manifests[i], a.normalize);
          for (auto mode : modes) reports[i].push_back(calibrate(model, samples, mode, a.config));
        } catch (const std::exception& e) {
          failures[i] = e.what();
        }
      }
    };
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < std::min(a.jobs, a.manifests.size()); ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    for (std::size_t i = 0; i < failures.size(); ++i) {
      if (!failures[i].empty()) throw Error(a.manifests[i] + ": " + failures[i]);
    }

    std::ostringstream csv;
    csv << "manifest,mode,pearson_r,mean_dice,rows\n";
    for (std::size_t i = 0; i < reports.size(); ++i) {
      for (const auto& r : reports[i]) {
        const std::string name = calibration_mode_name(r.mode);
        const std::string pr = r.summary.pearson ? format_number(*r.summary.pearson) : "undefined";
        csv << a.manifests[i] << ',' << name << ',' << pr << ',' << format_number(r.summary.mean_dice) << ','
            << r.summary.rows << '\n';
        out << a.manifests[i] << " mode=" << name << " pearson_r=" << pr
            << " mean_dice=" << format_number(r.summary.mean_dice) << '\n';
        write_text(fs::path(a.out) / ("metrics_" + std::to_string(i) + "_" + name + ".csv"), metrics_csv(r.rows));
      }
      if (reports[i].size() == 2) {
        const auto gain = calibration_gain(reports[i][0], reports[i][1]);
        out << a.manifests[i] << " delta_r=" << (gain ? format_number(*gain) : "undefined") << '\n';
      }
    }
    write_text(fs::path(a.out) / "calibration.csv", csv.str());
  });
}

}  // namespace

std::string suggest_subcommand(const std::string& name) {
  std::string best;
  std::size_t best_d = 3;
  for (const auto& s : kSubcommands) {
    const std::size_t d = edit_distance(name, s);
    if (d < best_d || (best.empty() && s.rfind(name, 0) == 0 && !name.empty())) {
      best = s;
      best_d = d;
    }
  }
  return best;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  if (!args.empty() && !args[0].empty() && args[0][0] != '-' &&
      std::find(kSubcommands.begin(), kSubcommands.end(), args[0]) == kSubcommands.end()) {
    err << "error: unknown subcommand '" << args[0] << "'";
    const std::string s = suggest_subcommand(args[0]);
    if (!s.empty()) err << "; did you mean '" << s << "'?";
    err << "\nrun 'samtta --help' for the list of subcommands\n";
    return kExitUsage;
  }

  CLI::App app{"Test-time adaptation of a promptable segmenter under domain shift", "samtta"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a synthetic dataset");
  g->add_option("--profile", gen.profile, "source, mri-like or ct-like")
      ->check(CLI::IsMember({"source", "mri-like", "ct-like"}))
      ->capture_default_str();
  g->add_option("--n", gen.n, "Number of samples")->check(CLI::PositiveNumber)->capture_default_str();
  g->add_option("--seed", gen.seed, "Data seed")->capture_default_str();
  g->add_option("--out", gen.out, "Output directory")->required();

  PretrainArgs pre;
  auto* p = app.add_subcommand("pretrain", "Train the segmenter on synthetic source data");
  p->add_option("--config", pre.config_file, "key=value config file");
  p->add_option("--out", pre.out, "Output checkpoint path")->required();
  std::map<std::string, std::string> pre_values;
  for (const auto& [key, value] : PretrainConfig{}.entries()) {
    p->add_option("--" + key, pre_values[key], "Override '" + key + "' (default " + value + ")");
  }

  AdaptArgs ad;
  auto* a = app.add_subcommand("adapt", "Adapt online over a target stream");
  a->add_option("--checkpoint", ad.checkpoint, "Pretrained checkpoint")->required();
  a->add_option("--manifest", ad.manifest, "Stream manifest.csv")->required();
  a->add_option("--strategy", ad.strategy, "sam-tta, tent, mean-teacher or none")
      ->check(CLI::IsMember({"sam-tta", "tent", "mean-teacher", "none"}))
      ->capture_default_str();
  a->add_option("--out", ad.out, "Output directory")->required();
  a->add_option("--dump-sbct", ad.dump_sbct, "Write per-image SBCT curves and remapped images here");
  a->add_flag("--normalize", ad.normalize, "Min-max normalize each input image to [0,1]");
  add_adapt_options(a, ad.config);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Score saved predictions against ground truth");
  e->add_option("--pred", ev.pred, "Directory with pred_%05d.pgm")->required();
  e->add_option("--manifest", ev.manifest, "Manifest with ground-truth masks")->required();
  e->add_option("--out", ev.out, "Output metrics CSV")->required();

  CalibrateArgs cal;
  auto* c = app.add_subcommand("calibrate", "Compare IoU-predictor calibration with and without SBCT adaptation");
  c->add_option("--checkpoint", cal.checkpoint, "Pretrained checkpoint")->required();
  c->add_option("--manifest", cal.manifests, "Stream manifest.csv (repeat for several streams)")->required();
  c->add_option("--mode", cal.mode, "off, sbct-only or both")
      ->check(CLI::IsMember({"off", "sbct-only", "both"}))
      ->capture_default_str();
  c->add_option("--out", cal.out, "Output directory")->required();
  c->add_option("--jobs", cal.jobs, "Streams processed in parallel")->capture_default_str();
  c->add_flag("--normalize", cal.normalize, "Min-max normalize each input image to [0,1]");
  add_adapt_options(c, cal.config);

  for (auto* sub : app.get_subcommands({})) sub->allow_extras(false);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    for (auto* sub : app.get_subcommands({})) {
      if (sub->parsed()) {
        out << sub->help();
        return kExitOk;
      }
    }
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << '\n';
    return kExitOk;
  } catch (const CLI::ParseError& ex) {
    err << "error: " << ex.what() << "\nrun 'samtta --help' for usage\n";
    return kExitUsage;
  }

  if (g->parsed()) return run_gen(gen, args, out, err);
  if (p->parsed()) {
    for (const auto& [key, value] : pre_values) {
      if (p->count("--" + key)) pre.overrides[key] = value;
    }
    return run_pretrain(pre, args, out, err);
  }
  if (a->parsed()) return run_adapt(ad, args, out, err);
  if (e->parsed()) return run_eval(ev, args, out, err);
  if (c->parsed()) return run_calibrate(cal, args, out, err);
  err << "error: no subcommand given\n";
  return kExitUsage;
}

}  // namespace samtta::cli
