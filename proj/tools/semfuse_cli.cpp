// Command-line front end: synth, train, fuse, eval, ablate.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "semfuse/semfuse.hpp"

namespace fs = std::filesystem;
using namespace semfuse;

namespace {

constexpr int kOk = 0;
constexpr int kContract = 1;
constexpr int kUsage = 2;

struct UsageError : Error {
  using Error::Error;
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

/// Config file (flag, else $SEMFUSE_CONFIG, else defaults) plus --set overrides, finalized.
RunConfig resolve_config(const std::string& path, const std::vector<std::string>& overrides) {
  std::string file = path;
  if (file.empty())
    if (const char* env = std::getenv("SEMFUSE_CONFIG")) file = env;
  RunConfig cfg = file.empty() ? RunConfig{} : load_config_file(file);
  for (const auto& o : overrides) apply_override(cfg, o);
  cfg.finalize();
  return cfg;
}

void print_splits(const Splits& s) {
  std::cout << "train_pairs=" << s.train.size() << " val_pairs=" << s.val.size() << "\n";
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::size_t images = 32;
  std::size_t size = 64;
  std::uint64_t seed = 7;
  double glare = 0.5;
  int blob_min = 1, blob_max = 4;
  std::string split = "train";
  std::string out;
};

int cmd_synth(const SynthArgs& a) {
  SynthSpec spec;
  spec.images = a.images;
  spec.size = a.size;
  spec.seed = a.seed;
  spec.glare_probability = a.glare;
  spec.blob_min = a.blob_min;
  spec.blob_max = a.blob_max;
  try {
    spec.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  const auto pairs = generate_synthetic(spec);
  save_dataset(pairs, a.out, a.split);
  std::size_t glare = 0;
  for (std::size_t i = 0; i < spec.images; ++i) glare += describe_scene(spec, i).glare.has_value();
  std::cout << "pairs=" << pairs.size() << " size=" << spec.size << " seed=" << spec.seed << " glare_scenes=" << glare
            << " classes=" << spec.class_count << " dir=" << (fs::path(a.out) / a.split).string() << "\n";
  for (const auto& p : pairs) std::cout << "pair " << p.id << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string phase = "both";
  std::string init_from;
  std::string out;
};

int cmd_train(const TrainArgs& a) {
  const RunConfig cfg = resolve_config(a.config, a.overrides);
  const bool run_warm = a.phase != "semantic" && !cfg.train.skip_warm_start;
  const bool run_sem = a.phase != "warm";
  if (a.phase == "semantic" && a.init_from.empty() && !cfg.train.skip_warm_start)
    throw UsageError("--phase semantic needs --init-from <warm checkpoint> or train.skip_warm_start=true");
  if (a.phase == "warm" && cfg.train.skip_warm_start)
    throw UsageError("--phase warm conflicts with train.skip_warm_start=true");

  const Splits data = load_splits(cfg);
  print_splits(data);
  const fs::path out(a.out);
  fs::create_directories(out);
  std::ofstream log(out / "train.log");
  if (!log) throw IoError("cannot write " + (out / "train.log").string());
  TrainHooks hooks;
  hooks.on_step = [&log](const StepRecord& r) { log << r.to_line() << "\n"; };
  hooks.on_epoch = [&log](const EpochSummary& e) {
    log << e.to_line() << "\n";
    std::cerr << e.to_line() << "\n";
  };

  FusionModel<float> fusion(cfg.train);
  bool have_warm = false;
  bool trend_ok = true;
  if (!a.init_from.empty()) {
    import_parameters(fusion.parameters(), load_checkpoint(a.init_from));
    have_warm = true;
  }
  if (run_warm) {
    const auto ws = warm_start(fusion, data.train, cfg, hooks);
    save_checkpoint(out / "warm.ckpt", ws.theta_prime);
    std::cout << "warm_start epochs=" << ws.state.epoch << " steps=" << ws.state.step
              << " first_epoch_loss=" << StepRecord::fmt(ws.epoch_means().empty() ? 0 : ws.epoch_means().front())
              << " final_epoch_loss=" << StepRecord::fmt(ws.epoch_means().empty() ? 0 : ws.epoch_means().back())
              << " trend_ok=" << ws.state.trend_ok()
              << " checksum=" << std::hex << fnv1a(encode_checkpoint(ws.theta_prime)) << std::dec << "\n";
    trend_ok = trend_ok && ws.state.trend_ok();
    have_warm = true;
  }
  if (run_sem) {
    SegModel<float> seg(cfg.train);
    const auto sem = semantic_train(fusion, seg, data.train, data.val, cfg, have_warm, hooks);
    save_checkpoint(out / "semantic_last.ckpt", sem.last);
    save_checkpoint(out / "semantic_best.ckpt", sem.best);
    const auto& fin = sem.final_validation();
    std::cout << "semantic epochs=" << sem.state.epoch << " steps=" << sem.state.step
              << " initial_val_sem=" << StepRecord::fmt(sem.initial.sem_loss)
              << " final_val_sem=" << StepRecord::fmt(fin.sem_loss) << " final_val_miou=" << StepRecord::fmt(fin.miou)
              << " best_epoch=" << sem.best_epoch << " min_corr_sum=" << StepRecord::fmt(sem.min_corr_sum())
              << " trend_ok=" << sem.state.trend_ok()
              << " checksum=" << std::hex << fnv1a(encode_checkpoint(sem.last)) << std::dec << "\n";
    trend_ok = trend_ok && sem.state.trend_ok();
  }
  if (!trend_ok) {
    std::cerr << "error: epoch-mean loss did not decrease over the phase\n";
    return kContract;
  }
  return kOk;
}

// ---------------------------------------------------------------------------

/// Pairs of a directory laid out as {ir,vis[,labels]}/<id>.png.
DatasetManifest scan_dir(const std::string& dir, const RunConfig& cfg) {
  return scan_dataset(fs::path(dir), ".", cfg.palette(), cfg.train);
}

struct FuseArgs {
  std::string model;
  std::string input_dir;
  std::string out_dir;
  bool color = false;
};

int cmd_fuse(const FuseArgs& a) {
  const Checkpoint ckpt = load_checkpoint(a.model);
  const RunConfig cfg = checkpoint_config(ckpt);
  const auto fusion = load_fusion_model<float>(ckpt);
  const auto manifest = scan_dir(a.input_dir, cfg);
  int failures = 0;
  for (const auto& r : manifest.rejected) {
    std::cerr << "failed " << r.id << ": " << r.reason << "\n";
    ++failures;
  }
  fs::create_directories(a.out_dir);
  std::size_t written = 0;
  for (const auto& e : manifest.entries) {
    try {
      const ImagePair pair = load_pair(e);
      const Image fused = fusion.forward(pair);
      const fs::path dest = fs::path(a.out_dir) / (e.id + ".png");
      if (a.color) io::write_rgb(dest, io::reattach_chroma(fused, pair.vis_rgb));
      else io::write_gray(dest, fused);
      ++written;
      std::cout << "fused " << e.id << "\n";
    } catch (const Error& err) {
      std::cerr << "failed " << e.id << ": " << err.what() << "\n";
      ++failures;
    }
  }
  std::cout << "written=" << written << " failed=" << failures << "\n";
  return failures ? kContract : kOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string fused_dir;
  std::string dataset;
  std::string seg_model;
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
};

int cmd_eval(const EvalArgs& a) {
  std::optional<Checkpoint> seg_ckpt;
  if (!a.seg_model.empty()) seg_ckpt = load_checkpoint(a.seg_model);
  RunConfig cfg = seg_ckpt ? checkpoint_config(*seg_ckpt) : resolve_config(a.config, a.overrides);
  if (seg_ckpt && !a.overrides.empty()) {
    for (const auto& o : a.overrides) apply_override(cfg, o);
    cfg.finalize();
  }
  std::optional<SegModel<float>> seg;
  if (seg_ckpt) seg.emplace(load_seg_model<float>(*seg_ckpt));

  const auto manifest = scan_dir(a.dataset, cfg);
  int failures = 0;
  for (const auto& r : manifest.rejected) {
    std::cerr << "failed " << r.id << ": " << r.reason << "\n";
    ++failures;
  }
  std::vector<ImagePair> pairs;
  std::vector<Image> fused;
  for (const auto& e : manifest.entries) {
    const fs::path f = fs::path(a.fused_dir) / (e.id + ".png");
    if (!fs::exists(f)) {
      std::cerr << "failed " << e.id << ": missing fused image " << f.string() << "\n";
      ++failures;
      continue;
    }
    pairs.push_back(load_pair(e));
    fused.push_back(io::read_gray(f));
  }
  const auto ev = evaluate_fused<float>(fused, pairs, seg ? &*seg : nullptr, cfg.palette(), cfg.scored_classes());
  const fs::path out(a.out);
  write_text(out / "report.txt", ev.report.to_text());
  write_text(out / "sf_curve.csv", EvalReport::curve_csv(ev.report.sf_curve()));
  write_text(out / "ag_curve.csv", EvalReport::curve_csv(ev.report.ag_curve()));
  if (ev.report.segmentation) write_text(out / "classes.tsv", ev.report.class_table());
  std::cout << ev.report.to_text();
  if (ev.report.segmentation) std::cout << ev.report.class_table();
  return failures ? kContract : kOk;
}

// ---------------------------------------------------------------------------

struct AblateArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string plan = "default";
  std::string out;
};

int cmd_ablate(const AblateArgs& a) {
  const RunConfig cfg = resolve_config(a.config, a.overrides);
  const AblationPlan plan = a.plan == "default" ? AblationPlan::default_plan(cfg.palette())
                                                : AblationPlan::parse(read_file_bytes(a.plan));
  for (const auto& s : plan.skipped) std::cout << "skipped " << s << "\n";
  const Splits data = load_splits(cfg);
  print_splits(data);
  const fs::path out(a.out);
  fs::create_directories(out);
  std::ofstream log(out / "ablation.log");
  TrainHooks hooks;
  hooks.on_epoch = [&log](const EpochSummary& e) { log << e.to_line() << "\n"; };
  const auto rows = run_ablation(plan, cfg, data, hooks, [&log](const AblationOutcome& o) {
    const std::string line = "row " + o.row.name + " " +
                             (o.ok ? "miou=" + StepRecord::fmt(o.report.segmentation->miou) : "failed: " + o.error);
    log << line << "\n";
    std::cerr << line << "\n";
  });
  const std::string table = ablation_table(rows, cfg.palette(), cfg.scored_classes());
  write_text(out / "ablation.tsv", table);
  std::cout << table;
  for (const auto& r : rows)
    if (!r.ok) return kContract;
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semantic-driven infrared/visible image fusion"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Write a seeded synthetic dataset");
  c_synth->add_option("--images", synth.images, "number of scenes")->check(CLI::PositiveNumber);
  c_synth->add_option("--size", synth.size, "side length (multiple of 8)");
  c_synth->add_option("--seed", synth.seed, "scene seed");
  c_synth->add_option("--glare-probability", synth.glare, "probability of a glare disc per scene");
  c_synth->add_option("--blob-min", synth.blob_min, "minimum hot targets per scene");
  c_synth->add_option("--blob-max", synth.blob_max, "maximum hot targets per scene");
  c_synth->add_option("--split", synth.split, "split directory under --out");
  c_synth->add_option("--out", synth.out, "dataset root")->required();

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Run the warm-start and/or semantic phase");
  c_train->add_option("--config", train.config, "run config file (default: $SEMFUSE_CONFIG)");
  c_train->add_option("--set", train.overrides, "override section.key=value (repeatable)");
  c_train->add_option("--phase", train.phase, "phase to run")->check(CLI::IsMember({"warm", "semantic", "both"}));
  c_train->add_option("--init-from", train.init_from, "warm-start checkpoint for --phase semantic")
      ->check(CLI::ExistingFile);
  c_train->add_option("--out", train.out, "output directory for checkpoints and train.log")->required();

  FuseArgs fuse;
  auto* c_fuse = app.add_subcommand("fuse", "Fuse image pairs with a trained model");
  c_fuse->add_option("--model", fuse.model, "checkpoint")->required()->check(CLI::ExistingFile);
  c_fuse->add_option("--input-dir", fuse.input_dir, "directory with ir/ and vis/")->required()->check(
      CLI::ExistingDirectory);
  c_fuse->add_option("--out-dir", fuse.out_dir, "output directory")->required();
  c_fuse->add_flag("--color", fuse.color, "reattach visible chrominance");

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval", "Score fused images, and segmentation when a model is given");
  c_eval->add_option("--fused-dir", eval.fused_dir, "fused images named <id>.png")->required()->check(
      CLI::ExistingDirectory);
  c_eval->add_option("--dataset", eval.dataset, "directory with ir/, vis/ and optional labels/")->required()->check(
      CLI::ExistingDirectory);
  c_eval->add_option("--seg-model", eval.seg_model, "checkpoint holding a segmentation network")
      ->check(CLI::ExistingFile);
  c_eval->add_option("--config", eval.config, "run config (palette, scored classes); ignored with --seg-model");
  c_eval->add_option("--set", eval.overrides, "override section.key=value (repeatable)");
  c_eval->add_option("--out", eval.out, "output directory for report.txt, classes.tsv, curves")->required();

  AblateArgs ablate;
  auto* c_ablate = app.add_subcommand("ablate", "Run an ablation sweep");
  c_ablate->add_option("--config", ablate.config, "run config file (default: $SEMFUSE_CONFIG)");
  c_ablate->add_option("--set", ablate.overrides, "override section.key=value (repeatable)");
  c_ablate->add_option("--plan", ablate.plan, "'default' or a plan file");
  c_ablate->add_option("--out", ablate.out, "output directory for ablation.tsv")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*c_synth) return cmd_synth(synth);
    if (*c_train) return cmd_train(train);
    if (*c_fuse) return cmd_fuse(fuse);
    if (*c_eval) return cmd_eval(eval);
    if (*c_ablate) return cmd_ablate(ablate);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kContract;
  }
  return kUsage;
}
