#include "celltopo/cli.hpp"

#include "celltopo/image_io.hpp"
#include "celltopo/oracle.hpp"
#include "celltopo/patterns.hpp"
#include "celltopo/selftest.hpp"
#include "celltopo/stats.hpp"
#include "celltopo/sweep.hpp"
#include "celltopo/trainer.hpp"
#include "celltopo/wnet.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

namespace celltopo {

namespace fs = std::filesystem;

std::vector<std::pair<std::string, std::string>> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file " + path);
  std::vector<std::pair<std::string, std::string>> pairs;
  std::string line;
  int row = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r"), e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++row;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw UsageError("config " + path + " line " + std::to_string(row) + ": expected key=value");
    }
    std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    std::replace(key.begin(), key.end(), '_', '-');
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    pairs.emplace_back(key, value);
  }
  return pairs;
}

namespace {

// ---- option groups ---------------------------------------------------------

struct SpecOptions {
  std::string kind = "lines";
  bool lines = false, crossed = false, circles = false, discs = false, curves = false, glyphs = false, blank = false;
  double width_um = 10.0;
  double sep_um = 20.0;
  double angle_deg = 0.0;
  std::vector<double> radii_um;
  std::string text;
  std::string spec_json;
  std::string spec_file;

  void add(CLI::App* app) {
    app->add_option("--kind", kind, "pattern kind: blank, lines, crossed, circles, discs, curves, glyphs, border");
    app->add_flag("--lines", lines, "parallel lines");
    app->add_flag("--crossed", crossed, "crossed lines");
    app->add_flag("--circles", circles, "concentric circles");
    app->add_flag("--discs", discs, "filled circles");
    app->add_flag("--curves", curves, "curves");
    app->add_flag("--glyphs", glyphs, "glyph text");
    app->add_flag("--blank", blank, "unmachined glass");
    app->add_option("--width-um", width_um, "line width in um");
    app->add_option("--sep-um", sep_um, "edge-to-edge line separation in um");
    app->add_option("--angle-deg", angle_deg, "line angle, counter-clockwise");
    app->add_option("--radii-um", radii_um, "ring or disc radii in um")->delimiter(',');
    app->add_option("--text", text, "glyph text");
    app->add_option("--spec-json", spec_json, "full spec as a JSON object");
    app->add_option("--spec-file", spec_file, "JSONL spec file; the first line is used");
  }

  TopographySpec build() const {
    if (!spec_json.empty() && !spec_file.empty()) throw UsageError("give at most one of --spec-json and --spec-file");
    if (!spec_json.empty()) {
      try {
        TopographySpec s = nlohmann::json::parse(spec_json).get<TopographySpec>();
        s.validate();
        return s;
      } catch (const nlohmann::json::exception& e) {
        throw UsageError(std::string("bad --spec-json: ") + e.what());
      }
    }
    if (!spec_file.empty()) {
      auto specs = read_specs_jsonl(spec_file);
      if (specs.empty()) throw UsageError("spec file " + spec_file + " is empty");
      return specs.front();
    }
    const std::vector<std::pair<bool, const char*>> shortcuts{{lines, "lines"},     {crossed, "crossed"},
                                                              {circles, "circles"}, {discs, "discs"},
                                                              {curves, "curves"},   {glyphs, "glyphs"},
                                                              {blank, "blank"}};
    std::string name = kind;
    int chosen = 0;
    for (const auto& [on, n] : shortcuts) {
      if (on) {
        name = n;
        ++chosen;
      }
    }
    if (chosen > 1) throw UsageError("choose a single pattern kind");
    static const std::map<std::string, std::string> aliases{
        {"lines", "parallel_lines"}, {"crossed", "crossed_lines"}, {"circles", "concentric_circles"},
        {"discs", "filled_circles"}, {"border", "border_box"}};
    const auto alias = aliases.find(name);
    TopographySpec s;
    try {
      s.kind = pattern_kind_from_string(alias == aliases.end() ? name : alias->second);
    } catch (const std::exception&) {
      throw UsageError("unknown pattern kind '" + name + "'");
    }
    s.width_um = width_um;
    s.separation_um = sep_um;
    s.angle_deg = angle_deg;
    s.radii_um = radii_um;
    s.text = text;
    s.validate();
    return s;
  }
};

struct RuleOptions {
  OracleRules rules;
  void add(CLI::App* app) {
    app->add_option("--theta-um", rules.theta_align_um, "smooth gaps narrower than this are bridged");
    app->add_option("--adhesion-bias", rules.adhesion_bias, "placement weight of adhesive pixels");
    app->add_option("--parallel-influence", rules.parallel_influence, "alignment chance of off-line cells");
    app->add_option("--align-jitter-deg", rules.align_jitter_deg, "angular spread of aligned cells");
    app->add_option("--guided-elongation", rules.guided_elongation, "minimum elongation of line-following cells");
    app->add_option("--line-glow", rules.line_glow, "fluorescence of machined pixels");
  }
};

struct AlignmentOptions {
  AlignmentConfig cfg;
  void add(CLI::App* app) {
    app->add_option("--cone-deg", cfg.cone_deg, "half-width of the aligned angle window");
    app->add_option("--min-elongation", cfg.min_elongation, "axis ratio for an oriented component");
    app->add_option("--fraction-threshold", cfg.fraction_threshold, "aligned fraction needed to call alignment");
    app->add_option("--min-oriented", cfg.min_oriented, "pooled oriented components needed for a verdict");
    app->add_option("--on-line-share", cfg.on_line_share, "share of a component on machined pixels to score it");
    app->add_option("--tau", cfg.threshold.tau, "mask threshold on the normalized image");
  }
};

// ---- helpers ---------------------------------------------------------------

void check_resolution(int r) {
  try {
    FrameConfig::with_resolution(r).validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("--resolution: ") + e.what());
  }
}

fs::path manifest_path(const std::string& p) {
  fs::path path(p);
  if (fs::is_directory(path)) path /= kManifestName;
  if (!fs::exists(path)) throw std::runtime_error("manifest not found: " + path.string());
  return path;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create output directory " + dir);
}

// Effective configuration of a subcommand, one key=value per line, in the
// format read_config_file accepts.
std::string effective_config(const CLI::App* app, std::uint64_t seed, bool deterministic) {
  std::ostringstream out;
  out << "# celltopo " << app->get_name() << "\n";
  out << "seed=" << seed << "\n";
  out << "deterministic=" << (deterministic ? "true" : "false") << "\n";
  for (const CLI::Option* opt : app->get_options()) {
    const std::string name = opt->get_single_name();
    if (name.empty() || name == "help" || name == "help-all" || opt->get_lnames().empty()) continue;
    std::string value;
    if (opt->count() > 0) {
      const auto res = opt->reduced_results();
      for (std::size_t i = 0; i < res.size(); ++i) value += (i ? "," : "") + res[i];
    } else {
      value = opt->get_default_str();
    }
    if (opt->get_type_size() == 0 && value.empty()) value = "false";
    if (value.empty() || value == "{}") continue;  // left at its default
    out << name << '=' << value << '\n';
  }
  return out.str();
}

std::string fmt_p(double p) {
  std::ostringstream s;
  s << std::setprecision(4) << p;
  return s.str();
}

}  // namespace

int run_cli(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cell positioning on laser-machined topographies: synthesis, training, prediction and analysis",
               "celltopo"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)->always_capture_default();
  app.require_subcommand(1);
  app.fallthrough();  // global options may follow the subcommand
  app.set_help_all_flag("--help-all", "expand all subcommand help");

  std::string config_path;
  std::uint64_t seed = 1;
  bool deterministic = false;
  app.add_option("--config", config_path, "key=value config file; flags override it");
  app.add_option("--seed", seed, "global seed for every random stream");
  app.add_flag("--deterministic", deterministic, "single-threaded, byte-reproducible mode");

  // pattern
  CLI::App* pattern = app.add_subcommand("pattern", "render a topography design to a PNG");
  SpecOptions pattern_spec;
  pattern_spec.add(pattern);
  int pattern_resolution = 256;
  std::string pattern_out = "pattern.png";
  pattern->add_option("--resolution", pattern_resolution, "pixels per side (scale fixed at 500/256 um/px)");
  pattern->add_option("-o,--out", pattern_out, "output PNG");

  // oracle
  CLI::App* oracle = app.add_subcommand("oracle", "build a synthetic training dataset");
  RuleOptions oracle_rules;
  oracle_rules.add(oracle);
  int oracle_count = 256, oracle_resolution = 64;
  std::string oracle_out, oracle_specs;
  oracle->add_option("--count", oracle_count, "number of records");
  oracle->add_option("--resolution", oracle_resolution, "pixels per side");
  oracle->add_option("--specs", oracle_specs, "JSONL spec list (default: built-in mix)");
  oracle->add_option("--out-dir", oracle_out, "dataset directory")->required();

  // train
  CLI::App* train_cmd = app.add_subcommand("train", "train the W-Net on a dataset manifest");
  TrainConfig train_cfg;
  NetConfig train_net = NetConfig::desk();
  std::string train_manifest, train_out, train_crop = "none";
  train_cmd->add_option("--manifest", train_manifest, "manifest.jsonl or its directory")->required();
  train_cmd->add_option("--out-dir", train_out, "checkpoint and loss trace directory")->required();
  train_cmd->add_option("--epochs", train_cfg.epochs, "passes over the dataset");
  train_cmd->add_option("--lr", train_cfg.learning_rate, "learning rate");
  train_cmd->add_option("--lambda-rec", train_cfg.lambda_rec, "reconstruction weight");
  train_cmd->add_option("--lambda-adv", train_cfg.lambda_adv, "final adversarial weight");
  train_cmd->add_option("--adv-warmup", train_cfg.adv_warmup, "fraction of iterations without adversarial loss");
  train_cmd->add_option("--adv-ramp-end", train_cfg.adv_ramp_end, "fraction of iterations where the ramp ends");
  train_cmd->add_option("--target-floor", train_cfg.target_floor, "background level targets are lifted to");
  train_cmd->add_option("--max-iterations", train_cfg.max_iterations, "stop early (0: no limit)");
  train_cmd->add_option("--checkpoint-every", train_cfg.checkpoint_every, "iterations between checkpoints (0: end only)");
  train_cmd->add_option("--crop", train_crop, "none or random")->check(CLI::IsMember({"none", "random"}));
  train_cmd->add_option("--base-channels", train_net.base_channels, "channels of the first level");
  train_cmd->add_option("--channel-cap", train_net.channel_cap, "channel ceiling");

  // predict
  CLI::App* predict = app.add_subcommand("predict", "predict a fluorescence image from a checkpoint");
  SpecOptions predict_spec;
  predict_spec.add(predict);
  std::string predict_ckpt, predict_topo, predict_out = "prediction.png";
  int predict_day = 8;
  double predict_density = 0.4;
  predict->add_option("--checkpoint", predict_ckpt, "WNT1 checkpoint")->required();
  predict->add_option("--topography", predict_topo, "binary topography PNG instead of a spec");
  predict->add_option("--day", predict_day, "culture day: 0, 1, 8 or 30");
  predict->add_option("--density", predict_density, "seeding density in [0, 1]");
  predict->add_option("-o,--out", predict_out, "output PNG");

  // compare
  CLI::App* compare_cmd = app.add_subcommand("compare", "section-level overlap test between two images");
  std::string cmp_pred, cmp_exp, cmp_out = "compare_out";
  int cmp_sections = 16, cmp_threshold = 1;
  double cmp_tau = 0.25, cmp_min_area = -1;
  compare_cmd->add_option("prediction", cmp_pred, "predicted image PNG")->required();
  compare_cmd->add_option("experiment", cmp_exp, "reference image PNG")->required();
  compare_cmd->add_option("--out-dir", cmp_out, "composite and report directory");
  compare_cmd->add_option("--sections", cmp_sections, "sections per side");
  compare_cmd->add_option("--section-threshold", cmp_threshold, "occupied pixels that mark a section");
  compare_cmd->add_option("--tau", cmp_tau, "mask threshold on the normalized image");
  compare_cmd->add_option("--min-area-px", cmp_min_area, "smallest kept component (default: 5 um disc)");

  // sweep
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "minimum line separation for alignment across widths");
  SweepConfig sweep_cfg;
  AlignmentOptions sweep_align;
  RuleOptions sweep_rules;
  sweep_align.add(sweep_cmd);
  sweep_rules.add(sweep_cmd);
  std::string sweep_ckpt, sweep_out;
  bool sweep_oracle = false;
  sweep_cmd->add_option("--checkpoint", sweep_ckpt, "WNT1 checkpoint to measure");
  sweep_cmd->add_flag("--oracle", sweep_oracle, "measure the oracle directly instead of a model");
  sweep_cmd->add_option("--out-dir", sweep_out, "output directory")->required();
  sweep_cmd->add_option("--widths-um", sweep_cfg.widths_um, "line widths")->delimiter(',');
  sweep_cmd->add_option("--separations-um", sweep_cfg.separations_um, "separation ladder")->delimiter(',');
  sweep_cmd->add_option("--days", sweep_cfg.days, "culture days")->delimiter(',');
  sweep_cmd->add_option("--densities", sweep_cfg.densities, "densities")->delimiter(',');
  sweep_cmd->add_option("--replicates", sweep_cfg.replicates, "pooled seeds per grid point");
  sweep_cmd->add_option("--line-angle-deg", sweep_cfg.line_angle_deg, "line direction");
  int sweep_resolution = 64;
  sweep_cmd->add_option("--resolution", sweep_resolution, "frame size for --oracle runs");

  app.add_subcommand("selftest", "numerical self-checks of this build");

  // Config file values go in front of the subcommand's own flags so the
  // flags win under the take-last policy.
  std::vector<std::string> args = raw_args;
  try {
    std::string config_file;
    for (std::size_t i = 0; i < args.size(); ++i) {
      if (args[i] == "--config" && i + 1 < args.size()) {
        config_file = args[i + 1];
      } else if (args[i].rfind("--config=", 0) == 0) {
        config_file = args[i].substr(9);
      }
    }
    if (!config_file.empty()) {
      auto sub_at = std::find_if(args.begin(), args.end(), [&](const std::string& a) {
        return app.get_subcommand_no_throw(a) != nullptr;
      });
      if (sub_at == args.end()) throw UsageError("a subcommand is required");
      const CLI::App* sub = app.get_subcommand(*sub_at);
      std::vector<std::string> injected, global;
      for (const auto& [key, value] : read_config_file(config_file)) {
        if (key == "seed" || key == "deterministic") {
          global.push_back("--" + key + "=" + value);
        } else if (sub->get_option_no_throw("--" + key) != nullptr) {
          injected.push_back("--" + key + "=" + value);
        } else if (key.rfind("#", 0) != 0) {
          throw UsageError("unknown config key '" + key + "' for " + sub->get_name());
        }
      }
      const auto pos = sub_at - args.begin();
      args.insert(args.begin() + pos + 1, injected.begin(), injected.end());
      args.insert(args.begin() + pos, global.begin(), global.end());
    }
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "celltopo: error[usage]: " << msg << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    err << "celltopo: error[usage]: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (pattern->parsed()) {
      check_resolution(pattern_resolution);
      const TopographySpec spec = pattern_spec.build();
      const TopographyRaster raster = rasterize(spec, FrameConfig::with_resolution(pattern_resolution));
      write_raster_png(pattern_out, raster);
      write_text_file(pattern_out + ".config", effective_config(pattern, seed, deterministic));
      out << "wrote " << pattern_out << " (" << to_string(spec.kind) << ", machined fraction "
          << machined_fraction(raster) << ")\n";
    } else if (oracle->parsed()) {
      check_resolution(oracle_resolution);
      if (oracle_count < 1) throw UsageError("--count must be >= 1");
      oracle_rules.rules.validate();
      const auto specs = oracle_specs.empty() ? default_spec_mix() : read_specs_jsonl(oracle_specs);
      ensure_dir(oracle_out);
      write_text_file(fs::path(oracle_out) / "effective_config.txt", effective_config(oracle, seed, deterministic));
      const DatasetManifest m = build_dataset(specs, oracle_rules.rules, oracle_count,
                                              FrameConfig::with_resolution(oracle_resolution), seed, oracle_out);
      out << "wrote " << m.records.size() << " records to " << oracle_out << "\n";
    } else if (train_cmd->parsed()) {
      train_cfg.seed = seed;
      train_cfg.crop = train_crop == "random" ? CropPolicy::kRandom : CropPolicy::kNone;
      const DatasetManifest m = read_manifest(manifest_path(train_manifest));
      train_net.resolution = m.frame.resolution;
      train_net.validate();
      train_cfg.checkpoint_dir = train_out;
      train_cfg.validate();
      ensure_dir(train_out);
      write_text_file(fs::path(train_out) / "effective_config.txt", effective_config(train_cmd, seed, deterministic));
      const auto per_epoch = static_cast<std::int64_t>(m.records.size());
      TrainResult r = train(m, train_net, train_cfg, [&](const LossRecord& rec, std::int64_t total) {
        if ((rec.iter + 1) % per_epoch == 0 || rec.iter + 1 == total) {
          out << "iter " << rec.iter + 1 << "/" << total << " l_rec " << rec.l_rec << " l_adv " << rec.l_adv_gen
              << " l_disc " << rec.l_disc << " lambda_adv " << rec.lambda_adv << "\n"
              << std::flush;
        }
      });
      r.trace.write_csv(fs::path(train_out) / "loss.csv");
      save_checkpoint(r.checkpoint, fs::path(train_out) / "checkpoint.wnt");
      out << "first-epoch mean l_rec " << r.checkpoint.first_epoch_rec << ", last-epoch mean l_rec "
          << r.checkpoint.last_epoch_rec << "\n";
    } else if (predict->parsed()) {
      check_day_density(predict_day, predict_density);
      const Checkpoint ck = load_checkpoint(predict_ckpt);
      const FrameConfig frame = FrameConfig::with_resolution(ck.net.resolution);
      TopographyRaster raster;
      if (!predict_topo.empty()) {
        raster = read_raster_png(predict_topo, frame);
      } else {
        raster = rasterize(predict_spec.build(), frame);
      }
      const FluorescenceImage img = generate(ck.generator, assemble_input(raster, predict_day, predict_density, seed));
      write_png_gray(predict_out, img.values);
      write_text_file(predict_out + ".config", effective_config(predict, seed, deterministic));
      out << "wrote " << predict_out << "\n";
    } else if (compare_cmd->parsed()) {
      const Grid a = read_png_gray(cmp_pred), b = read_png_gray(cmp_exp);
      if (!a.same_shape(b)) {
        throw UsageError("image sizes differ: " + cmp_pred + " is " + std::to_string(a.dim(2)) + "x" +
                         std::to_string(a.dim(1)) + ", " + cmp_exp + " is " + std::to_string(b.dim(2)) + "x" +
                         std::to_string(b.dim(1)));
      }
      if (a.dim(1) != a.dim(2)) throw UsageError("images must be square");
      ThresholdConfig th = ThresholdConfig::for_frame(FrameConfig::with_resolution(a.dim(1)));
      th.tau = cmp_tau;
      if (cmp_min_area >= 0) th.min_area_px = cmp_min_area;
      if (cmp_sections < 1 || a.dim(1) % cmp_sections != 0) {
        throw UsageError("--sections must divide the image side " + std::to_string(a.dim(1)));
      }
      const BitMask pm = cell_mask(normalize_image(a), th), em = cell_mask(normalize_image(b), th);
      const SectionComparison sec = compare(pm, em, cmp_sections, cmp_threshold);
      const SectionComparison pix = pixel_level_p(pm, em);
      ComparisonRow row{fs::path(cmp_pred).stem().string(), sec.N, sec.K, sec.n, sec.k, sec.p, pix.p};
      ensure_dir(cmp_out);
      write_png_rgb(fs::path(cmp_out) / "composite.png", sec.composite);
      write_comparison_csv(fs::path(cmp_out) / "comparison.csv", {row});
      const std::string report = comparison_report({row});
      write_text_file(fs::path(cmp_out) / "report.txt", report);
      write_text_file(fs::path(cmp_out) / "effective_config.txt", effective_config(compare_cmd, seed, deterministic));
      out << report << "section P " << fmt_p(sec.p) << " (log10 " << sec.log10_p << "), pixel P " << fmt_p(pix.p)
          << "\n";
    } else if (sweep_cmd->parsed()) {
      if (sweep_oracle == !sweep_ckpt.empty()) throw UsageError("give exactly one of --checkpoint and --oracle");
      sweep_cfg.alignment = sweep_align.cfg;
      sweep_cfg.seed = seed;
      sweep_rules.rules.validate();
      Checkpoint ck;
      Predictor predictor;
      if (sweep_oracle) {
        check_resolution(sweep_resolution);
        sweep_cfg.frame = FrameConfig::with_resolution(sweep_resolution);
        predictor = oracle_predictor(sweep_rules.rules);
      } else {
        ck = load_checkpoint(sweep_ckpt);
        sweep_cfg.frame = FrameConfig::with_resolution(ck.net.resolution);
        predictor = model_predictor(ck.generator);
      }
      sweep_cfg.validate();
      ensure_dir(sweep_out);
      const SweepResult r = run_sweep(predictor, sweep_cfg);
      const fs::path dir(sweep_out);
      write_sweep_csv(dir / "sweep.csv", r.records);
      write_fit_csv(dir / "fit.csv", r);
      const std::string report = fit_report(r);
      write_text_file(dir / "fit_report.txt", report);
      write_png_rgb(dir / "fit.png", render_fit_plot(r));
      write_text_file(dir / "effective_config.txt", effective_config(sweep_cmd, seed, deterministic));
      out << report;
    } else {
      bool all = true;
      for (const CheckResult& c : run_selftest(seed)) {
        out << (c.pass ? "PASS " : "FAIL ") << c.name << " (" << c.detail << ")\n";
        all = all && c.pass;
      }
      return all ? kExitOk : kExitFailure;
    }
  } catch (const std::invalid_argument& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "celltopo: error[usage]: " << msg << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "celltopo: error[runtime]: " << msg << "\n";
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace celltopo
