// Command-line front end: render, train, eval, predict, visualize, cv, synth.
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <numeric>

#include "CLI11.hpp"
#include "pcqa/cloudio.hpp"
#include "pcqa/config.hpp"
#include "pcqa/datapack.hpp"
#include "pcqa/evalkit.hpp"
#include "pcqa/imageio.hpp"
#include "pcqa/synth.hpp"
#include "pcqa/train.hpp"

namespace fs = std::filesystem;
using namespace pcqa;

namespace {

struct ConfigArgs {
  std::string file;
  std::vector<std::string> overrides;
  bool tiny = false;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", file, "key = value config file")->check(CLI::ExistingFile);
    app->add_option("-s,--set", overrides, "override, key=value (repeatable)");
    app->add_flag("--tiny", tiny, "start from the desk-scale tiny configuration");
  }

  TrainConfig load() const {
    TrainConfig cfg = tiny ? TrainConfig::tiny() : TrainConfig{};
    if (!file.empty()) cfg.merge_file(file);
    cfg.apply(overrides);
    cfg.validate();
    return cfg;
  }
};

struct FoldArgs {
  int folds = 5;
  int fold = 0;
  std::uint64_t split_seed = 0;

  void attach(CLI::App* app, bool single) {
    app->add_option("-k,--folds", folds, "number of content-disjoint folds")->check(CLI::PositiveNumber);
    if (single) app->add_option("-f,--fold", fold, "fold index (0-based)")->check(CLI::NonNegativeNumber);
    app->add_option("--split-seed", split_seed, "seed of the fold assignment");
  }
};

fs::path cache_dir(const std::string& flag) { return flag.empty() ? cache_dir_from_env() : fs::path(flag); }

std::vector<LabeledViews> fold_samples(const Manifest& m, const FoldPlan& plan, int fold, bool test,
                                       const TrainConfig& cfg, const fs::path& cache) {
  if (fold < 0 || fold >= plan.k) throw std::invalid_argument("fold index out of range");
  const auto idx = test ? plan.test_indices(m, fold) : plan.train_indices(m, fold);
  return load_samples(m, idx, cfg.render, cache);
}

void print_report(const MetricReport& r, const std::string& label) {
  std::cout << label << " plcc=" << r.plcc << " srocc=" << r.srocc << " rmse=" << r.rmse
            << (r.identity_mapping ? " (identity mapping)" : "") << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"No-reference point cloud quality assessment"};
  app.require_subcommand(1);
  std::string log_level = "info";
  std::string cache_flag;
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error, off");
  app.add_option("--cache", cache_flag, "render cache directory (default: $PCQA_CACHE_DIR)");

  // render
  auto* render = app.add_subcommand("render", "render a PLY to a .vset file, or fill the cache for a manifest");
  std::string render_ply, render_out, render_manifest, render_png;
  ConfigArgs render_cfg;
  render->add_option("--ply", render_ply, "input point cloud")->check(CLI::ExistingFile);
  render->add_option("-o,--out", render_out, "output .vset (with --ply)");
  render->add_option("-m,--manifest", render_manifest, "manifest CSV to pre-render")->check(CLI::ExistingFile);
  render->add_option("--png", render_png, "also write view PNGs to this directory (with --ply)");
  render_cfg.attach(render);

  // train
  auto* train_cmd = app.add_subcommand("train", "train on one fold");
  std::string train_manifest, train_out;
  bool train_resume = false;
  ConfigArgs train_cfg;
  FoldArgs train_folds;
  train_cmd->add_option("-m,--manifest", train_manifest, "manifest CSV")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("-o,--out", train_out, "checkpoint path")->required();
  train_cmd->add_flag("--resume", train_resume, "continue from --out if it exists");
  train_cfg.attach(train_cmd);
  train_folds.attach(train_cmd, true);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a fold's test contents");
  std::string eval_manifest, eval_ckpt, eval_report;
  FoldArgs eval_folds;
  std::uint64_t eval_seed = 0;
  eval_cmd->add_option("-m,--manifest", eval_manifest, "manifest CSV")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--report", eval_report, "CSV report path");
  eval_cmd->add_option("--seed", eval_seed, "crop seed");
  eval_folds.attach(eval_cmd, true);

  // predict
  auto* predict = app.add_subcommand("predict", "score one point cloud");
  std::string predict_ply, predict_ckpt;
  std::uint64_t predict_seed = 0;
  predict->add_option("ply", predict_ply, "point cloud")->required()->check(CLI::ExistingFile);
  predict->add_option("--checkpoint", predict_ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  predict->add_option("--seed", predict_seed, "crop seed");

  // visualize
  auto* vis = app.add_subcommand("visualize", "write views, attention maps and the guided mask as PNG");
  std::string vis_ply, vis_ckpt, vis_out;
  ConfigArgs vis_cfg;
  vis->add_option("ply", vis_ply, "point cloud")->required()->check(CLI::ExistingFile);
  vis->add_option("--checkpoint", vis_ckpt, "checkpoint (adds model maps)")->check(CLI::ExistingFile);
  vis->add_option("-o,--out", vis_out, "output directory")->required();
  vis_cfg.attach(vis);

  // cv
  auto* cv = app.add_subcommand("cv", "k-fold cross validation");
  std::string cv_manifest, cv_report;
  ConfigArgs cv_cfg;
  FoldArgs cv_folds;
  cv->add_option("-m,--manifest", cv_manifest, "manifest CSV")->required()->check(CLI::ExistingFile);
  cv->add_option("--report", cv_report, "CSV report path");
  cv_cfg.attach(cv);
  cv_folds.attach(cv, false);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic distorted dataset");
  SynthOptions synth_opt;
  std::string synth_out;
  synth->add_option("-o,--out", synth_out, "output directory")->required();
  synth->add_option("--contents", synth_opt.contents, "reference contents")->check(CLI::PositiveNumber);
  synth->add_option("--levels", synth_opt.levels, "distortion levels per content")->check(CLI::PositiveNumber);
  synth->add_option("--points", synth_opt.points, "points per cloud")->check(CLI::PositiveNumber);
  synth->add_option("--seed", synth_opt.seed, "seed");

  CLI11_PARSE(app, argc, argv);

  try {
    spdlog::set_level(spdlog::level::from_str(log_level));
    const fs::path cache = cache_dir(cache_flag);

    if (render->parsed()) {
      const TrainConfig cfg = render_cfg.load();
      if (!render_ply.empty()) {
        if (render_out.empty() && render_png.empty()) throw std::invalid_argument("render --ply needs --out or --png");
        const ViewSet vs = project_views(canonicalize(load_ply(render_ply)), cfg.render);
        if (!render_out.empty()) save_view_set(vs, render_out);
        if (!render_png.empty()) visualize(vs, nullptr, render_png);
        std::cout << "rendered " << render_ply << " at " << cfg.render.resolution << "x" << cfg.render.resolution
                  << '\n';
      } else if (!render_manifest.empty()) {
        if (cache.empty()) throw std::invalid_argument("render --manifest needs --cache or PCQA_CACHE_DIR");
        const Manifest m = read_manifest(render_manifest);
        for (const auto& e : m.entries) load_or_render(e, cfg.render, cache);
        std::cout << "rendered " << m.entries.size() << " entries into " << cache.string() << '\n';
      } else {
        throw std::invalid_argument("render needs --ply or --manifest");
      }
    } else if (train_cmd->parsed()) {
      const TrainConfig cfg = train_cfg.load();
      const Manifest m = read_manifest(train_manifest);
      const FoldPlan plan = kfold_split(m, train_folds.folds, train_folds.split_seed);
      const auto samples = fold_samples(m, plan, train_folds.fold, false, cfg, cache);
      TrainOptions opt;
      opt.checkpoint = train_out;
      opt.resume = train_resume;
      const TrainResult r = train(cfg, samples, opt);
      std::cout << "best epoch " << r.best_epoch << " loss " << r.best_loss << "; checkpoint " << train_out << '\n';
    } else if (eval_cmd->parsed()) {
      TrainConfig cfg;
      const QualityNet net = model_from_checkpoint(load_checkpoint(eval_ckpt), &cfg);
      const Manifest m = read_manifest(eval_manifest);
      const FoldPlan plan = kfold_split(m, eval_folds.folds, eval_folds.split_seed);
      const auto samples = fold_samples(m, plan, eval_folds.fold, true, cfg, cache);
      const MetricReport r =
          evaluate(model_scorer(net), samples, cfg.crop_size, cfg.eval_crops, eval_seed, eval_folds.fold);
      print_report(r, "fold " + std::to_string(eval_folds.fold));
      if (!eval_report.empty()) {
        std::ofstream out(eval_report);
        write_reports_csv(out, {r}, nullptr);
      }
    } else if (predict->parsed()) {
      TrainConfig cfg;
      const QualityNet net = model_from_checkpoint(load_checkpoint(predict_ckpt), &cfg);
      LabeledViews s{"input", "input", 0.0, project_views(canonicalize(load_ply(predict_ply)), cfg.render)};
      const auto scores = crop_averaged_scores(model_scorer(net), {s}, cfg.crop_size, cfg.eval_crops, predict_seed);
      std::cout << scores[0] << '\n';
    } else if (vis->parsed()) {
      TrainConfig cfg = vis_cfg.load();
      std::unique_ptr<QualityNet> net;
      if (!vis_ckpt.empty()) net = std::make_unique<QualityNet>(model_from_checkpoint(load_checkpoint(vis_ckpt), &cfg));
      ViewSet vs = project_views(canonicalize(load_ply(vis_ply)), cfg.render);
      if (net && cfg.crop_size < vs.height()) {
        const int off = (vs.height() - cfg.crop_size) / 2;
        vs = crop_at(vs, cfg.crop_size, off, off);
      }
      const auto files = visualize(vs, net.get(), vis_out);
      std::cout << "wrote " << files.size() << " images to " << vis_out << '\n';
    } else if (cv->parsed()) {
      const TrainConfig cfg = cv_cfg.load();
      const Manifest m = read_manifest(cv_manifest);
      const FoldPlan plan = kfold_split(m, cv_folds.folds, cv_folds.split_seed);
      std::vector<std::size_t> all(m.entries.size());
      std::iota(all.begin(), all.end(), 0);
      const auto samples = load_samples(m, all, cfg.render, cache);
      const CvResult r = run_cv(m, samples, plan, default_trainer(cfg), cfg.crop_size, cfg.eval_crops, cfg.seed);
      for (const auto& f : r.folds) print_report(f, "fold " + std::to_string(f.fold));
      print_report(r.average, "mean");
      if (!cv_report.empty()) {
        std::ofstream out(cv_report);
        write_reports_csv(out, r.folds, &r.average);
      }
    } else if (synth->parsed()) {
      const Manifest m = generate_synthetic(synth_out, synth_opt);
      std::cout << "wrote " << m.entries.size() << " samples and " << (fs::path(synth_out) / "manifest.csv").string()
                << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
