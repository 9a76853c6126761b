#ifndef FKD_DATA_HPP_
#define FKD_DATA_HPP_

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fkd/config.hpp"
#include "fkd/tensor.hpp"

namespace fkd {

struct Keypoint {
  double x = 0.0;
  double y = 0.0;
  bool visible = false;
};

/// One annotated face. Coordinates are pixels in the source image;
/// invisible keypoints carry no coordinates.
struct Annotation {
  std::string image_path;
  double box_x = 0, box_y = 0, box_w = 0, box_h = 0;
  double yaw = 0, pitch = 0, roll = 0;
  std::vector<Keypoint> points;
};

/// Tab-separated, one record per line:
/// image_path x y w h yaw pitch roll (px py vis) * L, invisible = "nan nan 0".
std::vector<Annotation> load_annotations(const std::string& path, int num_keypoints);
void save_annotations(const std::string& path,
                      const std::vector<Annotation>& annotations);

/// 8-bit binary PPM (P6). Tensors are [3,H,W] with values in [0,1].
Tensor read_ppm(const std::string& path);
void write_ppm(const std::string& path, const Tensor& image);

/// A face crop ready for the network: image resized to input_size from the
/// 10%-expanded face box, keypoints mapped into crop pixels.
struct Sample {
  int size = 0;                        // crop side in pixels
  std::vector<std::uint8_t> image;     // [3,size,size], 0..255
  std::vector<double> coords_px;       // 2L interleaved crop pixels (0 if invisible)
  std::vector<double> visibility;      // L, {0,1}
  std::array<double, 3> pose = {0, 0, 0};
  double face_size = 0;                // sqrt(box_w*box_h) mapped into crop pixels
  double box_w = 0, box_h = 0;         // face box in source-image pixels
};

Tensor image_tensor(const Sample& sample);
/// One-hot [L+1,size,size] with background last; visible keypoints land on
/// their nearest pixel, everything else is background.
Tensor label_map(const Sample& sample, int num_keypoints);

/// Crops/resizes per the annotation's face box. Keypoints that fall outside
/// the crop are demoted to invisible; `warnings` (optional) counts them.
Sample prepare_sample(const Tensor& image, const Annotation& annotation,
                      const ModelConfig& config, int* warnings = nullptr);

/// Per-keypoint mean of visible crop-fraction coordinates.
struct MeanShape {
  std::vector<double> coords;  // 2L, fractions of crop size

  std::string serialize() const;
  static MeanShape parse(const std::string& text);
};

MeanShape compute_mean_shape(const std::vector<Sample>& samples, int num_keypoints);
std::vector<double> normalize_shape(const std::vector<double>& coords_frac,
                                    const MeanShape& mean);
std::vector<double> denormalize_shape(const std::vector<double>& offsets,
                                      const MeanShape& mean);

struct SynthResult {
  Tensor image;  // [3,S,S]
  Annotation annotation;
};

/// Renders a rotated, shaded sphere head with a distinct local pattern at
/// each keypoint; pose sampled with yaw in +-90 deg, pitch/roll in +-30 deg.
/// Bit-identical for a fixed seed.
SynthResult synthesize_sample(std::uint64_t seed, const ModelConfig& config);

/// Canonical unit-sphere keypoint template (L=5 face layout; other L are
/// spread over the front hemisphere).
std::vector<std::array<double, 3>> synth_template(int num_keypoints);

/// yaw/pitch/roll (degrees) to a rotation matrix, row-major 3x3.
std::array<double, 9> rotation_matrix(double yaw_deg, double pitch_deg,
                                      double roll_deg);

/// Writes images/NNNNN.ppm plus annotations.tsv under `dir`.
void write_synth_dataset(const std::string& dir, int count,
                         std::uint64_t base_seed, const ModelConfig& config);

/// Loads an annotation file and prepares all samples.
std::vector<Sample> load_dataset(const std::string& annotation_file,
                                 const ModelConfig& config,
                                 int* warnings = nullptr);

}  // namespace fkd

#endif  // FKD_DATA_HPP_
