#include "nuta/train.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>

#include "nuta/error.hpp"
#include "nuta/nn_ops.hpp"

namespace nuta {

namespace {
int64_t argmax_row(const double* row, int64_t k) {
  int64_t best = 0;
  for (int64_t i = 1; i < k; ++i)
    if (row[i] > row[best]) best = i;
  return best;
}

void check_step_finite(TwoBranchNet& net, double loss, int64_t epoch, int64_t step) {
  if (std::isfinite(loss)) return;
  // Loss diverged: name the first offending tensor to make the report useful.
  for (auto& [name, t] : net.parameters()) {
    for (double v : t.data())
      if (!std::isfinite(v))
        throw ValueError(cat("training diverged at epoch ", epoch, " step ", step,
                             ": parameter '", name, "' is non-finite"));
    if (t.has_grad())
      for (double v : t.grad())
        if (!std::isfinite(v))
          throw ValueError(cat("training diverged at epoch ", epoch, " step ", step,
                               ": gradient of '", name, "' is non-finite"));
  }
  throw ValueError(cat("training diverged at epoch ", epoch, " step ", step,
                       ": loss is non-finite"));
}
}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

SgdOptimizer::SgdOptimizer(std::vector<std::pair<std::string, Tensor>>& params,
                           double momentum, double weight_decay)
    : params_(params), momentum_(momentum), weight_decay_(weight_decay) {
  velocity_.reserve(params_.size());
  for (auto& [name, t] : params_)
    velocity_.emplace_back(static_cast<size_t>(t.numel()), 0.0);
}

void SgdOptimizer::step(double lr) {
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    Tensor& t = params_[pi].second;
    if (!t.has_grad()) continue;  // parameter not touched by this loss
    auto g = t.grad();
    auto w = t.data();
    std::vector<double>& v = velocity_[pi];
    std::vector<double> out(w.begin(), w.end());
    for (size_t i = 0; i < out.size(); ++i) {
      v[i] = momentum_ * v[i] + g[i] + weight_decay_ * out[i];
      out[i] -= lr * v[i];
    }
    t.overwrite_data(out);
  }
}

void SgdOptimizer::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

double clip_gradient_norm(std::vector<std::pair<std::string, Tensor>>& params,
                          double max_norm) {
  require<ValueError>(max_norm > 0.0, "clip_gradient_norm: max_norm must be > 0");
  double sq = 0.0;
  for (auto& [name, t] : params) {
    if (!t.has_grad()) continue;
    for (double g : t.grad()) sq += g * g;
  }
  double norm = std::sqrt(sq);
  if (norm > max_norm) {
    double scale = max_norm / norm;
    for (auto& [name, t] : params) {
      if (!t.has_grad()) continue;
      for (double& g : t.raw()->grad) g *= scale;
    }
  }
  return norm;
}

EvalResult evaluate(TwoBranchNet& net, const Dataset& ds, int64_t batch_size) {
  require<ValueError>(batch_size >= 1, "evaluate: batch_size must be >= 1");
  NoGradGuard guard;
  Rng unused_rng(0);  // eval-mode dropout is the identity and draws nothing

  EvalResult res;
  int64_t n = ds.meta.num_clips;
  int64_t k = ds.meta.classes;
  res.predictions.resize(static_cast<size_t>(n));
  std::vector<int64_t> correct_per_class(static_cast<size_t>(k), 0);
  std::vector<int64_t> total_per_class(static_cast<size_t>(k), 0);
  int64_t correct = 0;
  double loss_sum = 0.0;

  for (int64_t start = 0; start < n; start += batch_size) {
    int64_t stop = std::min(n, start + batch_size);
    std::vector<int64_t> indices;
    for (int64_t i = start; i < stop; ++i) indices.push_back(i);
    Batch batch = make_batch(ds, indices);
    ForwardResult fw = net.forward(batch.clips, /*train_mode=*/false, unused_rng);
    Tensor loss = cross_entropy(fw.logits, batch.labels);
    loss_sum += loss.item() * static_cast<double>(stop - start);
    const double* logits = fw.logits.data().data();
    for (int64_t bi = 0; bi < stop - start; ++bi) {
      int64_t pred = argmax_row(logits + bi * k, k);
      int64_t label = batch.labels[static_cast<size_t>(bi)];
      res.predictions[static_cast<size_t>(start + bi)] = pred;
      ++total_per_class[static_cast<size_t>(label)];
      if (pred == label) {
        ++correct;
        ++correct_per_class[static_cast<size_t>(label)];
      }
    }
  }
  res.accuracy = n > 0 ? static_cast<double>(correct) / static_cast<double>(n) : 0.0;
  res.mean_loss = n > 0 ? loss_sum / static_cast<double>(n) : 0.0;
  res.per_class_accuracy.resize(static_cast<size_t>(k), 0.0);
  for (int64_t c = 0; c < k; ++c)
    if (total_per_class[static_cast<size_t>(c)] > 0)
      res.per_class_accuracy[static_cast<size_t>(c)] =
          static_cast<double>(correct_per_class[static_cast<size_t>(c)]) /
          static_cast<double>(total_per_class[static_cast<size_t>(c)]);
  return res;
}

double attention_mass(const ProjectionMap& m,
                      const std::vector<std::vector<int64_t>>& informative_sets) {
  require<ValueError>(m.values.defined(), "attention_mass: undefined map");
  int64_t batch = m.batch(), heads = m.heads(), targets = m.target_steps(),
          sources = m.source_steps();
  require<ValueError>(static_cast<int64_t>(informative_sets.size()) == batch,
                      "attention_mass: ", informative_sets.size(), " frame sets for batch ",
                      batch);
  const double* v = m.values.data().data();
  double total = 0.0;
  for (int64_t b = 0; b < batch; ++b) {
    const std::vector<int64_t>& frames = informative_sets[static_cast<size_t>(b)];
    for (int64_t t : frames)
      require<ValueError>(t >= 0 && t < sources, "attention_mass: frame ", t,
                          " outside source axis of length ", sources);
    const double* mb = v + b * heads * targets * sources;
    for (int64_t h = 0; h < heads; ++h)
      for (int64_t s = 0; s < targets; ++s) {
        const double* row = mb + (h * targets + s) * sources;
        for (int64_t t : frames) total += row[t];
      }
  }
  return total / static_cast<double>(batch * heads * targets);
}

double mean_attention_mass(TwoBranchNet& net, const Dataset& ds, int64_t batch_size,
                           double* uniform_baseline) {
  require<ValueError>(!net.config().nuta_stages.empty(),
                      "attention_mass: the network has no aggregation modules");
  NoGradGuard guard;
  Rng unused_rng(0);
  if (uniform_baseline)
    *uniform_baseline =
        static_cast<double>(ds.meta.informative) / static_cast<double>(ds.meta.frames);

  double total = 0.0;
  int64_t n = ds.meta.num_clips;
  for (int64_t start = 0; start < n; start += batch_size) {
    int64_t stop = std::min(n, start + batch_size);
    std::vector<int64_t> indices;
    for (int64_t i = start; i < stop; ++i) indices.push_back(i);
    Batch batch = make_batch(ds, indices);
    ForwardResult fw = net.forward(batch.clips, /*train_mode=*/false, unused_rng);
    // The first module's map is the one whose source axis is in one-to-one
    // correspondence with input frames (each later map mixes mixed steps).
    std::vector<std::vector<int64_t>> sets;
    for (int64_t i = start; i < stop; ++i) sets.push_back(ds.informative_frames(i));
    total += attention_mass(fw.maps.front(), sets) * static_cast<double>(stop - start);
  }
  return n > 0 ? total / static_cast<double>(n) : 0.0;
}

TrainResult train(TwoBranchNet& net, const Dataset& train_ds, const Dataset& val_ds,
                  const TrainConfig& cfg, const std::string& out_dir,
                  std::ostream* progress) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  TrainResult result;
  result.metrics_path = (fs::path(out_dir) / "metrics.csv").string();
  result.best_ckpt_path = (fs::path(out_dir) / "best.ckpt").string();
  result.last_ckpt_path = (fs::path(out_dir) / "last.ckpt").string();

  std::ofstream metrics(result.metrics_path);
  require<IoError>(metrics.good(), "train: cannot write ", result.metrics_path);
  metrics << "epoch,lr,train_loss,train_acc,val_acc\n";

  SgdOptimizer opt(net.parameters(), cfg.momentum, cfg.weight_decay);
  int64_t n = train_ds.meta.num_clips;
  require<ValueError>(n >= 1, "train: empty training set");
  int64_t k = train_ds.meta.classes;

  using clock = std::chrono::steady_clock;
  auto run_start = clock::now();

  for (int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto epoch_start = clock::now();
    double lr = cfg.lr_at_epoch(epoch);
    Rng erng(mix_seed(cfg.seed, 0xE70C4ULL, static_cast<uint64_t>(epoch)));

    std::vector<int64_t> order(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    erng.shuffle(order);

    double loss_sum = 0.0;
    int64_t seen = 0, correct = 0, step = 0;
    for (int64_t start = 0; start < n; start += cfg.batch_size) {
      int64_t stop = std::min(n, start + cfg.batch_size);
      std::vector<int64_t> indices(order.begin() + start, order.begin() + stop);
      std::vector<uint8_t> flip(indices.size(), 0);
      std::vector<int64_t> shift(indices.size(), 0);
      for (size_t i = 0; i < indices.size(); ++i) {
        if (cfg.augment_flip) flip[i] = erng.uniform() < 0.5 ? 1 : 0;
        if (cfg.augment_time_shift) shift[i] = erng.uniform_int(train_ds.meta.frames);
      }
      Batch batch = make_batch(train_ds, indices, flip, shift);

      ForwardResult fw = net.forward(batch.clips, /*train_mode=*/true, erng);
      Tensor loss = cross_entropy(fw.logits, batch.labels);
      double loss_value = loss.item();
      check_step_finite(net, loss_value, epoch, step);

      Tape::active().backward(loss);
      Tape::active().clear();
      if (cfg.clip_grad_norm > 0.0) clip_gradient_norm(net.parameters(), cfg.clip_grad_norm);
      opt.step(lr);
      opt.zero_grad();

      int64_t bs = stop - start;
      loss_sum += loss_value * static_cast<double>(bs);
      seen += bs;
      const double* logits = fw.logits.data().data();
      for (int64_t bi = 0; bi < bs; ++bi)
        if (argmax_row(logits + bi * k, k) == batch.labels[static_cast<size_t>(bi)])
          ++correct;
      ++step;
    }

    EvalResult val = evaluate(net, val_ds, cfg.eval_batch_size);
    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = lr;
    stats.train_loss = loss_sum / static_cast<double>(seen);
    stats.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
    stats.val_acc = val.accuracy;
    result.history.push_back(stats);

    metrics << stats.epoch << ',' << format_double(stats.lr) << ','
            << format_double(stats.train_loss) << ',' << format_double(stats.train_acc)
            << ',' << format_double(stats.val_acc) << '\n';
    metrics.flush();

    if (val.accuracy > result.best_val_acc ||
        (result.best_epoch == 0 && result.history.size() == 1)) {
      result.best_val_acc = val.accuracy;
      result.best_epoch = epoch;
      net.save(result.best_ckpt_path);
    }

    if (progress) {
      auto now = clock::now();
      double epoch_s = std::chrono::duration<double>(now - epoch_start).count();
      double total_s = std::chrono::duration<double>(now - run_start).count();
      *progress << "epoch " << epoch << "/" << cfg.epochs << " lr=" << format_double(lr)
                << " train_loss=" << format_double(stats.train_loss)
                << " train_acc=" << format_double(stats.train_acc)
                << " val_acc=" << format_double(stats.val_acc) << " ["
                << format_double(epoch_s) << "s, total " << format_double(total_s)
                << "s]" << std::endl;
    }
  }
  net.save(result.last_ckpt_path);

  // Post-run attention diagnostic on the best checkpoint (when applicable).
  std::string summary_path = (fs::path(out_dir) / "summary.txt").string();
  std::ofstream summary(summary_path);
  summary << "best_val_acc=" << format_double(result.best_val_acc) << "\n"
          << "best_epoch=" << result.best_epoch << "\n";
  if (!net.config().nuta_stages.empty()) {
    net.load(result.best_ckpt_path);
    double baseline = 0.0;
    result.final_attention_mass =
        mean_attention_mass(net, val_ds, cfg.eval_batch_size, &baseline);
    double threshold = 1.5 * baseline;
    summary << "attention_mass=" << format_double(result.final_attention_mass) << "\n"
            << "attention_baseline=" << format_double(baseline) << "\n"
            << "attention_threshold=" << format_double(threshold) << "\n"
            << "attention_status="
            << (result.final_attention_mass >= threshold ? "OK" : "BELOW_MARGIN") << "\n";
    if (progress) {
      *progress << "attention_mass=" << format_double(result.final_attention_mass)
                << " (baseline " << format_double(baseline) << ", threshold "
                << format_double(threshold) << ")"
                << (result.final_attention_mass >= threshold
                        ? ""
                        : "  WARNING: below selectivity margin")
                << std::endl;
    }
  }
  return result;
}

}  // namespace nuta
