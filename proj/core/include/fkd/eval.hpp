#ifndef FKD_EVAL_HPP_
#define FKD_EVAL_HPP_

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fkd/data.hpp"
#include "fkd/model.hpp"

namespace fkd {

enum class DecodeMode { kRegression, kHeatmap };

std::string to_string(DecodeMode m);
DecodeMode decode_mode_from_string(const std::string& s);

struct Prediction {
  std::vector<double> coords_px;   // 2L interleaved crop pixels
  std::vector<double> visibility;  // L confidences in [0,1]
  std::array<double, 3> pose = {0, 0, 0};
};

/// Regression mode adds the mean shape back to the coordinate-head output;
/// heatmap mode takes the per-channel argmax of the response maps
/// (background excluded). Unbatched outputs only.
Prediction decode_keypoints(const ModelOutput& out, const MeanShape& mean,
                            DecodeMode mode, int input_size);

/// Mean over visible landmarks of euclidean error / face_size (a fraction;
/// multiply by 100 for percent). Throws when no landmark is visible.
double nme(const std::vector<double>& pred_px, const std::vector<double>& gt_px,
           const std::vector<double>& visibility, double face_size);

/// fraction(t) = |{e <= t}| / N per threshold.
std::vector<std::pair<double, double>> ced_curve(
    const std::vector<double>& errors, const std::vector<double>& thresholds);

struct PoseMetrics {
  std::array<double, 3> mae = {0, 0, 0};       // degrees, yaw/pitch/roll
  std::array<double, 3> accuracy = {0, 0, 0};  // |round15(pred) - gt| <= 15 deg
};

PoseMetrics pose_metrics(const std::vector<std::array<double, 3>>& pred,
                         const std::vector<std::array<double, 3>>& gt);

enum class Protocol { kPifa, kFull, kAfw };

std::string to_string(Protocol p);
Protocol protocol_from_string(const std::string& s);

struct EvalReport {
  std::string protocol;
  std::vector<double> per_sample_nme;  // fractions
  double mean_nme = 0;                 // fraction
  std::vector<std::pair<double, double>> ced;
  PoseMetrics pose;
  // absolute-yaw bins [0,30], (30,60], (60,90] (PIFA protocol only)
  std::array<double, 3> bin_nme = {0, 0, 0};
  std::array<int, 3> bin_count = {0, 0, 0};
  int evaluated = 0;
  int skipped = 0;

  std::string text() const;
  /// `threshold,fraction` lines.
  void write_ced_csv(const std::string& path) const;
};

/// Evaluates every (protocol-admitted) sample with the model in inference
/// mode. PIFA bins NME by absolute ground-truth yaw and requires finite
/// pose annotations; AFW admits only faces with box height and width both
/// above 150 px. Samples without a visible landmark are skipped.
EvalReport run_protocol(Model& model, const std::vector<Sample>& samples,
                        Protocol protocol, DecodeMode mode,
                        const MeanShape& mean);

/// Deterministic train/test split of [0,n): second part has round(n*test_fraction)
/// elements. Same (n, fraction, seed) always gives identical membership.
std::pair<std::vector<int>, std::vector<int>> split_indices(
    int n, double test_fraction, std::uint64_t seed);

}  // namespace fkd

#endif  // FKD_EVAL_HPP_
