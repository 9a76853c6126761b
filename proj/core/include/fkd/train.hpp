#ifndef FKD_TRAIN_HPP_
#define FKD_TRAIN_HPP_

#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "fkd/data.hpp"
#include "fkd/model.hpp"

namespace fkd {

/// Momentum buffers, keyed by parameter name; created lazily as zeros.
struct SgdState {
  std::map<std::string, std::vector<double>> velocity;
};

/// Multistep schedule: x0.1 at 60% and again at 85% of total iterations.
double scheduled_lr(double base_lr, int iteration, int total_iters);

/// v <- momentum*v - lr*grad; p <- p + v, over `names` in order. Parameters
/// without an accumulated gradient are treated as zero-gradient.
void sgd_step(ParamStore& store, const std::vector<std::string>& names,
              SgdState& state, double lr, double momentum);

struct LossRecord {
  double l0 = 0, l1 = 0, l2 = 0, l3 = 0, total = 0;
};

/// One optimization step. Batch membership and the negative mask derive
/// from (base_seed, iteration) only, so a classification step and a
/// multitask step at the same iteration consume identical randomness.
/// classification_only trains the encoder/branch subgraph on L0 alone.
LossRecord train_step(Model& model, const std::vector<Sample>& data,
                      SgdState& opt, const MeanShape& mean, int iteration,
                      int total_iters, std::uint64_t base_seed,
                      bool classification_only);

/// Runs `iters` steps starting at `start_iter`; when `csv` is non-null,
/// appends `iteration,L0,L1,L2,L3,total` lines.
void run_training(Model& model, const std::vector<Sample>& data, SgdState& opt,
                  const MeanShape& mean, bool classification_only,
                  int start_iter, int iters, int total_iters,
                  std::uint64_t base_seed, std::ostream* csv);

/// The full two-phase recipe: classification pretraining for
/// config.pretrain_iters steps, then multitask training for
/// config.multitask_iters steps, each with a fresh learning-rate schedule.
/// Optimizer state carries across the phases, matching a checkpoint handoff.
void train_full(Model& model, const std::vector<Sample>& data, SgdState& opt,
                const MeanShape& mean, std::uint64_t base_seed,
                std::ostream* pretrain_csv, std::ostream* multitask_csv);

/// Single-file format: text header (format tag, iteration, seed, config,
/// tree, flags) followed by named little-endian float32 tensors with shape
/// prefixes: all parameters, batchnorm running stats, optimizer velocities,
/// and the mean shape. Loading then saving is bit-identical.
void save_checkpoint(const std::string& path, const Model& model,
                     const SgdState& opt, const MeanShape& mean,
                     int iteration, std::uint64_t base_seed);

struct LoadedCheckpoint {
  Model model;
  SgdState opt;
  MeanShape mean_shape;
  int iteration = 0;
  std::uint64_t base_seed = 0;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace fkd

#endif  // FKD_TRAIN_HPP_
