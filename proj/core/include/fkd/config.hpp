#ifndef FKD_CONFIG_HPP_
#define FKD_CONFIG_HPP_

#include <array>
#include <string>

namespace fkd {

enum class MessageSchedule { kRootToLeaves, kBidirectional };

std::string to_string(MessageSchedule s);
MessageSchedule schedule_from_string(const std::string& s);

/// Full architecture + training hyperparameters. Serialized as key=value
/// text; unknown keys are rejected.
struct ModelConfig {
  int input_size = 224;
  int num_keypoints = 21;
  double width_factor = 1.0;
  int branch_stages = 5;
  std::array<double, 4> loss_weights = {1.0, 1.0, 1.0, 1.0};
  double negative_keep_rate = 0.00025;
  bool routing_enabled = true;
  MessageSchedule message_schedule = MessageSchedule::kRootToLeaves;
  /// Ablation switch: false keeps all message kernels at zero and frozen.
  bool message_passing = true;
  /// Mean-over-kept-pixels classification loss; false gives the raw sum.
  bool classification_mean = true;

  double learning_rate = 1e-3;
  double momentum = 0.9;
  int batch_size = 16;
  int pretrain_iters = 5000;
  int multitask_iters = 5000;

  int code_size() const { return input_size >> branch_stages; }
  /// Encoder width after stage s (1-based); the last stage equals
  /// code_channels().
  int stage_channels(int stage) const;
  int code_channels() const;
  int branch_channels() const;
  int pose_channels() const;

  /// Throws std::invalid_argument when an invariant is violated.
  void validate() const;

  std::string serialize() const;
  static ModelConfig parse(const std::string& text);
  static ModelConfig load(const std::string& path);
  void save(const std::string& path) const;

  /// 64-px, 5-keypoint, narrow-width preset sized for CPU training.
  static ModelConfig desk_preset();
};

}  // namespace fkd

#endif  // FKD_CONFIG_HPP_
