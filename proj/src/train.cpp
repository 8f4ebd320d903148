#include "pcqa/train.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"
#include "pcqa/cloudio.hpp"
#include "pcqa/ops.hpp"
#include "pcqa/optim.hpp"

namespace pcqa {

namespace {

constexpr char kCheckpointMagic[8] = {'P', 'C', 'Q', 'A', 'C', 'K', 'P', 'T'};

AdamConfig adam_config(const TrainConfig& cfg) {
  AdamConfig a;
  a.lr_pretrained = cfg.lr_pretrained;
  a.lr_rest = cfg.lr_rest;
  a.beta1 = cfg.adam_beta1;
  a.beta2 = cfg.adam_beta2;
  a.eps = cfg.adam_eps;
  a.weight_decay = cfg.weight_decay;
  a.decay = cfg.lr_decay;
  a.decay_every = cfg.decay_every;
  return a;
}

void store(TensorArchive& dst, const std::string& prefix, const ParamList& params) {
  for (const auto& p : params) dst[prefix + p.name] = p.tensor.detach().clone();
}

TensorArchive with_prefix(const TensorArchive& src, const std::string& prefix) {
  TensorArchive out;
  for (const auto& [name, t] : src)
    if (name.starts_with(prefix)) out[name.substr(prefix.size())] = t;
  return out;
}

nlohmann::json log_json(const std::vector<EpochLog>& log) {
  auto arr = nlohmann::json::array();
  for (const auto& e : log)
    arr.push_back({{"epoch", e.epoch},
                   {"loss", e.loss},
                   {"reg", e.reg},
                   {"dis", e.dis},
                   {"rank", e.rank},
                   {"lr_pretrained", e.lr_pretrained},
                   {"lr_rest", e.lr_rest}});
  return arr;
}

std::vector<EpochLog> log_from_json(const nlohmann::json& arr) {
  std::vector<EpochLog> log;
  for (const auto& j : arr) {
    EpochLog e;
    e.epoch = j.at("epoch");
    e.loss = j.at("loss");
    e.reg = j.at("reg");
    e.dis = j.at("dis");
    e.rank = j.at("rank");
    e.lr_pretrained = j.at("lr_pretrained");
    e.lr_rest = j.at("lr_rest");
    log.push_back(e);
  }
  return log;
}

ViewSet training_crop(const ViewSet& vs, int size, std::mt19937_64& rng) {
  if (size >= vs.height() && size >= vs.width()) return vs;
  return crop_sample(vs, size, rng);
}

}  // namespace

QualityNet build_model(const TrainConfig& cfg) {
  cfg.validate();
  QualityNet net = QualityNet::init(cfg.model, cfg.seed);
  if (!cfg.pretrained.empty()) {
    const int n = load_pretrained(net.encoder, load_archive(cfg.pretrained));
    spdlog::info("loaded {} pretrained tensors from {}", n, cfg.pretrained);
  }
  return net;
}

TrainResult train(const TrainConfig& cfg, const std::vector<LabeledViews>& train_set, const TrainOptions& options) {
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  QualityNet net = build_model(cfg);
  Adam adam(net.params(), adam_config(cfg));
  std::mt19937_64 rng(cfg.seed ^ 0x5eedULL);

  TrainResult result;
  result.best_loss = std::numeric_limits<double>::infinity();
  TensorArchive best = to_archive(net.params());
  int start = 0;

  if (options.resume && !options.checkpoint.empty() && std::filesystem::exists(options.checkpoint)) {
    const Checkpoint ck = load_checkpoint(options.checkpoint);
    if (ck.config_hash != cfg.hash())
      throw std::runtime_error("checkpoint " + options.checkpoint.string() +
                               " was written with a different configuration");
    load_params(net.params(), with_prefix(ck.tensors, "param."));
    adam.load_state(ck.tensors);
    best = with_prefix(ck.tensors, "best.");
    std::istringstream(ck.rng_state) >> rng;
    start = ck.epochs_done;
    result.log = ck.log;
    result.best_epoch = ck.best_epoch;
    result.best_loss = ck.best_loss;
    spdlog::info("resumed from {} after epoch {}", options.checkpoint.string(), start);
  }

  std::vector<std::size_t> order(train_set.size());
  for (int epoch = start; epoch < cfg.epochs; ++epoch) {
    if (options.stop_after >= 0 && epoch >= options.stop_after) break;
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    EpochLog log;
    log.epoch = epoch;
    log.lr_pretrained = adam.lr(true, epoch);
    log.lr_rest = adam.lr(false, epoch);
    int batches = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t b1 = std::min(order.size(), b0 + static_cast<std::size_t>(cfg.batch_size));
      std::vector<QualityPrediction> preds;
      std::vector<Tensor> fg, fl;
      std::vector<double> mos;
      for (std::size_t i = b0; i < b1; ++i) {
        const auto& s = train_set[order[i]];
        ForwardTrace t = forward(net, training_crop(s.views, cfg.crop_size, rng));
        preds.push_back(t.prediction);
        fg.push_back(t.global);
        fl.push_back(t.local.feature);
        mos.push_back(s.mos);
      }
      const LossReport loss = batch_objective(preds, fg, fl, mos, cfg.objective);
      if (!std::isfinite(loss.total)) {
        std::string ids;
        for (std::size_t i = b0; i < b1; ++i) ids += (i > b0 ? "," : "") + train_set[order[i]].id;
        throw NonFiniteLoss(fmt::format("non-finite loss at epoch {} batch {} (reg={} dis={} rank={}; samples {})",
                                        epoch, batches, loss.reg, loss.dis, loss.rank, ids));
      }
      adam.zero_grad();
      loss.loss.backward();
      adam.step(epoch);
      log.loss += loss.total;
      log.reg += loss.reg;
      log.dis += loss.dis;
      log.rank += loss.rank;
      ++batches;
    }
    log.loss /= batches;
    log.reg /= batches;
    log.dis /= batches;
    log.rank /= batches;
    result.log.push_back(log);
    if (log.loss < result.best_loss) {
      result.best_loss = log.loss;
      result.best_epoch = epoch;
      best = to_archive(net.params());
    }
    spdlog::info("epoch {:3d} loss {:.5f} (reg {:.5f} dis {:.4f} rank {:.4f}) lr {:.3g}/{:.3g}", epoch, log.loss,
                 log.reg, log.dis, log.rank, log.lr_pretrained, log.lr_rest);
    if (options.on_epoch) options.on_epoch(log);

    if (!options.checkpoint.empty()) {
      Checkpoint ck;
      ck.config_text = cfg.to_text();
      ck.config_hash = cfg.hash();
      ck.epochs_done = epoch + 1;
      ck.best_epoch = result.best_epoch;
      ck.best_loss = result.best_loss;
      std::ostringstream rs;
      rs << rng;
      ck.rng_state = rs.str();
      ck.log = result.log;
      store(ck.tensors, "param.", net.params());
      for (const auto& [name, t] : best) ck.tensors["best." + name] = t;
      for (const auto& [name, t] : adam.state()) ck.tensors[name] = t;
      save_checkpoint(ck, options.checkpoint);
    }
  }

  load_params(net.params(), best);
  result.model = std::move(net);
  return result;
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  nlohmann::json meta = {{"config", ck.config_text},
                         {"config_hash", std::to_string(ck.config_hash)},
                         {"epochs_done", ck.epochs_done},
                         {"best_epoch", ck.best_epoch},
                         {"best_loss", ck.best_loss},
                         {"rng", ck.rng_state},
                         {"log", log_json(ck.log)}};
  const std::string text = meta.dump();
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    const std::uint32_t version = Checkpoint::kVersion;
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(len));
    write_archive(ck.tensors, out);
    if (!out) throw std::runtime_error("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw ParseError(path.string() + ": not a checkpoint");
  if (!in.read(reinterpret_cast<char*>(&version), sizeof version) || version != Checkpoint::kVersion)
    throw ParseError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  if (!in.read(reinterpret_cast<char*>(&len), sizeof len) || len > (1ull << 30))
    throw ParseError(path.string() + ": bad metadata length");
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw ParseError(path.string() + ": truncated metadata");
  Checkpoint ck;
  try {
    const auto meta = nlohmann::json::parse(text);
    ck.config_text = meta.at("config");
    ck.config_hash = std::stoull(meta.at("config_hash").get<std::string>());
    ck.epochs_done = meta.at("epochs_done");
    ck.best_epoch = meta.at("best_epoch");
    ck.best_loss = meta.at("best_loss");
    ck.rng_state = meta.at("rng");
    ck.log = log_from_json(meta.at("log"));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": bad metadata: " + e.what());
  }
  ck.tensors = read_archive(in, path.string());
  return ck;
}

QualityNet model_from_checkpoint(const Checkpoint& ck, TrainConfig* cfg_out) {
  TrainConfig cfg = TrainConfig::from_text(ck.config_text, "checkpoint config");
  cfg.pretrained.clear();
  QualityNet net = QualityNet::init(cfg.model, cfg.seed);
  load_params(net.params(), with_prefix(ck.tensors, "best."));
  if (cfg_out) *cfg_out = cfg;
  return net;
}

CropScorer model_scorer(const QualityNet& net) {
  auto shared = std::make_shared<QualityNet>(net);
  return [shared](std::size_t, const ViewSet& crop) { return predict_fine(*shared, crop); };
}

CvResult run_cv(const Manifest& manifest, const std::vector<LabeledViews>& samples, const FoldPlan& plan,
                const FoldTrainer& trainer, int crop_size, int crops, std::uint64_t seed) {
  if (samples.size() != manifest.entries.size())
    throw std::invalid_argument("run_cv: samples are not aligned with the manifest");
  CvResult r;
  for (int f = 0; f < plan.k; ++f) {
    std::vector<LabeledViews> train_set, test_set;
    for (auto i : plan.train_indices(manifest, f)) train_set.push_back(samples[i]);
    for (auto i : plan.test_indices(manifest, f)) test_set.push_back(samples[i]);
    spdlog::info("fold {}/{}: {} train, {} test samples", f + 1, plan.k, train_set.size(), test_set.size());
    const CropScorer scorer = trainer(f, train_set);
    r.folds.push_back(evaluate(scorer, test_set, crop_size, crops, seed + static_cast<std::uint64_t>(f), f));
    spdlog::info("fold {}: plcc {:.4f} srocc {:.4f} rmse {:.4f}", f, r.folds.back().plcc, r.folds.back().srocc,
                 r.folds.back().rmse);
  }
  r.average = average_reports(r.folds);
  return r;
}

FoldTrainer default_trainer(const TrainConfig& cfg) {
  return [cfg](int, const std::vector<LabeledViews>& train_set) {
    return model_scorer(train(cfg, train_set).model);
  };
}

}  // namespace pcqa
