#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "nuta/config.hpp"
#include "nuta/dataset.hpp"
#include "nuta/network.hpp"

namespace nuta {

struct EpochStats {
  int64_t epoch = 0;  // 1-based
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> history;
  double best_val_acc = 0.0;
  int64_t best_epoch = 0;
  double final_attention_mass = 0.0;  // on the first module's map, val set
  std::string metrics_path;
  std::string best_ckpt_path;
  std::string last_ckpt_path;
};

struct EvalResult {
  double accuracy = 0.0;
  double mean_loss = 0.0;
  std::vector<double> per_class_accuracy;
  std::vector<int64_t> predictions;
};

// SGD with momentum and decoupled-from-nothing classic weight decay:
//   v = momentum * v + grad + weight_decay * w ;  w -= lr * v
class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<std::pair<std::string, Tensor>>& params, double momentum,
               double weight_decay);
  void step(double lr);
  void zero_grad();

 private:
  std::vector<std::pair<std::string, Tensor>>& params_;
  std::vector<std::vector<double>> velocity_;
  double momentum_, weight_decay_;
};

// Rescales every accumulated gradient in place so their global L2 norm is at
// most max_norm (no-op when already below). Returns the pre-clip norm.
double clip_gradient_norm(std::vector<std::pair<std::string, Tensor>>& params,
                          double max_norm);

// Full training run. Writes metrics.csv (one row per epoch, no timestamps so
// identical-seed runs produce byte-identical files), best.ckpt and last.ckpt
// into out_dir, plus summary.txt with the final diagnostics. progress (when
// non-null) receives human-oriented status lines including wall-clock timing.
// On return the network holds the best checkpoint whenever it carries
// aggregation modules (the attention diagnostic reloads it); otherwise it
// holds the final parameters.
TrainResult train(TwoBranchNet& net, const Dataset& train_ds, const Dataset& val_ds,
                  const TrainConfig& cfg, const std::string& out_dir,
                  std::ostream* progress);

// Eval-mode accuracy over a dataset. Per-sample results are independent of
// batching (batch norm uses running statistics in eval mode).
EvalResult evaluate(TwoBranchNet& net, const Dataset& ds, int64_t batch_size);

// Fraction of projection-map mass landing on informative source frames,
// averaged over batch entries, heads and target steps. informative_sets
// holds, per batch entry, the source-frame indices counted as informative.
double attention_mass(const ProjectionMap& m,
                      const std::vector<std::vector<int64_t>>& informative_sets);

// attention_mass of the first module's map over a whole dataset. Also
// returns the uniform baseline (informative / frames) through the pointer.
double mean_attention_mass(TwoBranchNet& net, const Dataset& ds, int64_t batch_size,
                           double* uniform_baseline = nullptr);

// Shortest round-trip decimal formatting (std::to_chars); used everywhere a
// double lands in a text file so identical values serialise identically.
std::string format_double(double v);

}  // namespace nuta
