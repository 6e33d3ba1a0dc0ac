#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "matis/annotation.hpp"
#include "matis/proposal.hpp"

namespace matis {

/// H x W x 3 image, channel-last, values in [0,1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> data;

  Image() = default;
  Image(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h) * w * 3, 0.0f) {}
  float& at(int r, int c, int ch) { return data[(static_cast<std::size_t>(r) * width + c) * 3 + ch]; }
  float at(int r, int c, int ch) const {
    return data[(static_cast<std::size_t>(r) * width + c) * 3 + ch];
  }
  friend bool operator==(const Image&, const Image&) = default;
};

struct NoiseConfig {
  int num_queries = 100;
  /// Max translation of jittered copies, pixels.
  int max_shift = 2;
  /// Probability that an extra copy carries a wrong class.
  double wrong_class_rate = 0.25;
  /// Low-score proposals scattered over the frame.
  int clutter = 10;
  /// Std-dev of per-proposal score noise.
  double score_noise = 0.05;
  /// Scales all jitter; 0 gives exact copies of the gt masks.
  double noise = 1.0;
};

struct SynthConfig {
  std::uint64_t seed = 7;
  int height = 64;
  int width = 64;
  int num_classes = 7;
  int min_instances = 1;
  int max_instances = 4;
  std::vector<std::string> class_names{"BF", "PF", "LND", "VS/SI", "GR/CA", "MCS", "UP"};
  std::vector<bool> multi_instance{true, true, false, false, false, false, false};
  /// Target instance-level class frequencies; sum to 1.
  std::vector<double> class_weights{0.30, 0.18, 0.14, 0.12, 0.06, 0.15, 0.05};
  int video_length = 32;
  double motion_step = 1.0;
  /// Class pairs that share one appearance on ambiguous frames.
  std::vector<std::pair<int, int>> ambiguous_pairs{{2, 3}};
  double ambiguity_fraction = 0.75;
  /// Ambiguous frames come in runs within a repeating period of this length.
  int ambiguity_period = 8;
  NoiseConfig noise;

  void validate() const;
};

void to_json(nlohmann::json& j, const SynthConfig& cfg);
void from_json(const nlohmann::json& j, SynthConfig& cfg);

struct Frame {
  FrameAnnotation annotation;
  Image image;
};

/// 1..max non-overlapping class-shaped instances; pure in (cfg, frame_seed).
/// Throws PlacementFailure when instances cannot be placed.
Frame gen_frame(const SynthConfig& cfg, std::uint64_t frame_seed);

struct Video {
  std::string video_id;
  std::vector<Frame> frames;
  /// ambiguous[t] is true when paired classes share their appearance at t.
  std::vector<bool> ambiguous;
};

/// Smoothly moving instances. Members of an ambiguous pair never co-occur in
/// one video; they share shape family always and colour on ambiguous frames,
/// and differ in motion direction (first of pair horizontal, second vertical).
Video gen_video(const SynthConfig& cfg, std::uint64_t video_seed);

/// Renders a video frame from instance state; exposed so tests can swap
/// labels and re-render.
struct VideoInstance {
  ClassId cls = 0;
  int shape_params_seed = 0;
  double x0 = 0, y0 = 0;       // centre at t = 0
  double dir_x = 1, dir_y = 0;  // oscillation direction
  double amplitude = 0;
  double phase = 0;
  double angle = 0;
  double size_a = 0, size_b = 0;
  std::uint64_t texture_seed = 0;
};
Frame render_video_frame(const SynthConfig& cfg, const std::vector<VideoInstance>& instances, int t,
                         bool ambiguous, std::uint64_t noise_seed, const std::string& frame_id);
std::vector<VideoInstance> sample_video_instances(const SynthConfig& cfg, std::uint64_t video_seed);
bool is_ambiguous_frame(const SynthConfig& cfg, int t, int phase);

/// Class-weighted noisy proposal set built around gt instances.
ProposalSet gen_noisy_proposals(const FrameAnnotation& gt, const SynthConfig& cfg,
                                std::uint64_t seed);

/// Sampling weights that make instance-level class marginals match
/// cfg.class_weights under the per-frame multi-instance caps.
std::vector<double> calibrated_sampling_weights(const SynthConfig& cfg);

/// Exact instance-level class marginals of the sequential capped sampler.
std::vector<double> instance_class_marginals(const SynthConfig& cfg,
                                             const std::vector<double>& sampling_weights);

/// Per-class cap on instances per frame (2 for multi-instance, else 1).
int class_cap(const SynthConfig& cfg, ClassId cls);

/// Mean score level of proposals for class cls; rarer classes score lower.
double class_confidence(const SynthConfig& cfg, ClassId cls);

}  // namespace matis
