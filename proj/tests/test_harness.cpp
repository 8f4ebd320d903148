#include <cmath>
#include <fstream>
#include <set>

#include "doctest.h"
#include "pcqa/config.hpp"
#include "pcqa/optim.hpp"
#include "pcqa/synth.hpp"
#include "pcqa/train.hpp"
#include "test_util.hpp"

using namespace pcqa;
using pcqa::testing::TempDir;

namespace {

TrainConfig micro() {
  TrainConfig c = TrainConfig::tiny();
  c.apply({"epochs=3", "batch_size=2", "crop_size=48", "d_out=8", "regions=2"});
  return c;
}

struct MicroData {
  TempDir dir{"harness"};
  Manifest manifest;
  std::vector<LabeledViews> samples;

  MicroData(int contents = 2, int levels = 2) {
    SynthOptions o;
    o.contents = contents;
    o.levels = levels;
    o.points = 1500;
    o.seed = 5;
    manifest = generate_synthetic(dir.path(), o);
    std::vector<std::size_t> all(manifest.entries.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    samples = load_samples(manifest, all, micro().render, {});
  }
};

}  // namespace

TEST_CASE("config defaults, overrides and hashing") {
  TrainConfig c;
  CHECK(c.epochs == 50);
  CHECK(c.batch_size == 8);
  CHECK(c.crop_size == 224);
  CHECK(c.eval_crops == 10);
  CHECK(c.model.encoder.embed_dim == 768);
  CHECK(c.model.feedback.regions == 8);
  const auto h0 = c.hash();
  CHECK(TrainConfig::from_text(c.to_text()).hash() == h0);
  c.apply({"lr_rest=1e-3", "interpolation=nearest"});
  CHECK(c.lr_rest == 1e-3);
  CHECK(c.model.feedback.interpolation == Interpolation::kNearest);
  CHECK(c.hash() != h0);
  c.set("crop_size", "112");
  CHECK(c.model.encoder.image_size == 112);
  CHECK_THROWS_AS(c.set("no_such_key", "1"), std::invalid_argument);
  CHECK_THROWS_AS(c.set("epochs", "many"), std::invalid_argument);
  CHECK_THROWS_AS(c.apply({"epochs"}), std::invalid_argument);
}

TEST_CASE("config text parsing") {
  auto c = TrainConfig::from_text("# comment\nepochs = 7\n\nheads = 4 # trailing\nembed_dim = 32\n");
  c.model.sync();
  CHECK(c.epochs == 7);
  CHECK(c.model.encoder.heads == 4);
  CHECK(c.model.feedback.heads == 4);
  CHECK_THROWS_AS(TrainConfig::from_text("epochs 7\n"), std::invalid_argument);
  TempDir dir("cfg");
  std::ofstream(dir / "c.cfg") << "seed = 12\n";
  TrainConfig d;
  d.merge_file(dir / "c.cfg");
  CHECK(d.seed == 12);
}

TEST_CASE("step learning-rate schedule") {
  TrainConfig c;
  QualityNet net = QualityNet::init([] {
    ModelConfig m = TrainConfig::tiny().model;
    m.sync();
    return m;
  }(), 1);
  AdamConfig ac;
  Adam adam(net.params(), ac);
  CHECK(adam.lr(false, 0) == doctest::Approx(2e-4));
  CHECK(adam.lr(false, 4) == doctest::Approx(2e-4));
  CHECK(adam.lr(false, 5) == doctest::Approx(1.8e-4));
  CHECK(adam.lr(true, 10) == doctest::Approx(2e-5 * 0.81));
}

TEST_CASE("parameter groups partition the model") {
  ModelConfig m = TrainConfig::tiny().model;
  m.sync();
  const auto net = QualityNet::init(m, 2);
  std::set<std::string> names;
  int pretrained = 0;
  for (const auto& p : net.params()) {
    CHECK(names.insert(p.name).second);
    CHECK(p.pretrained == (p.name.rfind("encoder.", 0) == 0));
    pretrained += p.pretrained;
  }
  CHECK(pretrained > 0);
  CHECK(pretrained < static_cast<int>(names.size()));
}

TEST_CASE("adam moves against the gradient") {
  Tensor w({2}, std::vector<double>{1.0, -1.0}, true);
  AdamConfig ac;
  ac.lr_rest = 0.1;
  ac.weight_decay = 0.0;
  Adam adam({{"w", w, false}}, ac);
  w.grad()[0] = 2.0;
  w.grad()[1] = -3.0;
  adam.step(0);
  // First bias-corrected step has magnitude lr.
  CHECK(w.data()[0] == doctest::Approx(0.9));
  CHECK(w.data()[1] == doctest::Approx(-0.9));
  CHECK(adam.steps() == 1);
}

TEST_CASE("synthetic data has distinct, decreasing scores") {
  CHECK(pseudo_mos(0.0) == 5.0);
  CHECK(pseudo_mos(1.0) == 1.0);
  TempDir dir("synth");
  SynthOptions o;
  o.contents = 3;
  o.levels = 3;
  o.points = 500;
  const auto m = generate_synthetic(dir.path(), o);
  CHECK(m.entries.size() == 9);
  std::set<double> mos;
  for (const auto& e : m.entries) {
    CHECK(mos.insert(e.mos).second);
    CHECK(std::filesystem::exists(e.path));
  }
  CHECK(m.contents().size() == 3);
  CHECK(read_manifest(dir / "manifest.csv").entries.size() == 9);
}

TEST_CASE("checkpoint round trip is bit exact") {
  MicroData data;
  TempDir dir("ckpt");
  TrainConfig cfg = micro();
  cfg.epochs = 1;
  TrainOptions opt;
  opt.checkpoint = dir / "run.ckpt";
  const auto r = train(cfg, data.samples, opt);
  const auto ck = load_checkpoint(opt.checkpoint);
  CHECK(ck.epochs_done == 1);
  CHECK(ck.config_hash == cfg.hash());
  TrainConfig back;
  const auto net = model_from_checkpoint(ck, &back);
  CHECK(back.hash() == cfg.hash());
  std::mt19937_64 rng(1);
  const auto crop = crop_sample(data.samples[0].views, 48, rng);
  CHECK(predict_fine(net, crop) == predict_fine(r.model, crop));

  std::ofstream(dir / "junk.ckpt") << "PCQACKPX";
  CHECK_THROWS_AS(load_checkpoint(dir / "junk.ckpt"), ParseError);
}

TEST_CASE("resumed training reproduces the uninterrupted log") {
  MicroData data;
  TempDir dir("resume");
  const TrainConfig cfg = micro();
  const auto full = train(cfg, data.samples);

  TrainOptions opt;
  opt.checkpoint = dir / "run.ckpt";
  opt.stop_after = 1;
  train(cfg, data.samples, opt);
  opt.stop_after = -1;
  opt.resume = true;
  const auto resumed = train(cfg, data.samples, opt);
  CHECK(resumed.log == full.log);
  CHECK(resumed.best_epoch == full.best_epoch);

  TrainConfig other = cfg;
  other.seed = 99;
  CHECK_THROWS(train(other, data.samples, opt));
}

TEST_CASE("non-finite loss aborts with the sample ids") {
  MicroData data;
  auto bad = data.samples;
  bad[1].mos = std::nan("");
  TrainConfig cfg = micro();
  cfg.epochs = 1;
  CHECK_THROWS_WITH_AS(train(cfg, bad, {}), doctest::Contains(bad[1].id.c_str()), NonFiniteLoss);
}

TEST_CASE("cross validation with an injected oracle") {
  MicroData data(5, 2);
  const auto plan = kfold_split(data.manifest, 5, 3);
  int calls = 0;
  const FoldTrainer oracle = [&](int fold, const std::vector<LabeledViews>& train_set) -> CropScorer {
    ++calls;
    CHECK(train_set.size() == 8);
    const auto idx = plan.test_indices(data.manifest, fold);
    return [&data, idx](std::size_t i, const ViewSet&) { return data.manifest.entries[idx[i]].mos; };
  };
  const auto r = run_cv(data.manifest, data.samples, plan, oracle, 48, 2, 1);
  CHECK(calls == 5);
  CHECK(r.folds.size() == 5);
  CHECK(r.average.fold == -1);
  CHECK(r.average.srocc == doctest::Approx(1.0));
  CHECK(r.average.rmse == doctest::Approx(0.0));
}

TEST_CASE("fold averages") {
  const auto avg = average_reports({{0, 0.8, 0.7, 1.0, false}, {1, 0.9, 0.9, 2.0, false}});
  CHECK(avg.plcc == doctest::Approx(0.85));
  CHECK(avg.srocc == doctest::Approx(0.8));
  CHECK(avg.rmse == doctest::Approx(1.5));
}
