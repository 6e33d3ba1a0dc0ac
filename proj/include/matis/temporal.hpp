#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "matis/annotation.hpp"
#include "matis/autograd.hpp"
#include "matis/inference.hpp"
#include "matis/model.hpp"
#include "matis/proposal.hpp"
#include "matis/synth.hpp"

namespace matis {

enum class Pooling { Mean, Max };

struct TemporalConfig {
  int window = 8;
  int stride = 1;
  int time_dim = 32;     // d_t
  int segment_dim = 32;  // d_s, must match the baseline embedding width
  int hidden_dim = 0;    // 0 selects max(d_t, d_s)
  int num_classes = 7;
  double presence_weight = 1.0;
  bool time_mlp = true;
  bool presence = true;
  Pooling pooling = Pooling::Mean;

  // frame encoder
  int height = 64;
  int width = 64;
  int patch = 8;
  int encoder_layers = 2;

  /// Weight of the baseline class probabilities when relabeling; 0 replaces.
  double blend = 0.0;
  /// IoU a selected region needs with a gt instance to take its class.
  double match_iou = 0.5;
  std::uint64_t seed = 11;
  /// Std of position embeddings; weight matrices use 1/sqrt(fan_in).
  double init_std = 0.02;

  int hidden() const { return hidden_dim > 0 ? hidden_dim : std::max(time_dim, segment_dim); }
  double effective_presence_weight() const { return presence ? presence_weight : 0.0; }
  void validate() const;
};

void to_json(nlohmann::json& j, const TemporalConfig& cfg);
void from_json(const nlohmann::json& j, TemporalConfig& cfg);

/// Frame indices t + s*(i - W/2) for i in [0, W), clamped to the video.
std::vector<int> window_indices(int t, int window, int stride, int video_len);

/// 1 x d_t pooled row over the W rows of features.
ag::Mat pool_time(const ag::Mat& features, Pooling pooling = Pooling::Mean);

/// Index C (0-based) is the no-object class.
std::vector<int> region_targets(const std::vector<Region>& regions, const FrameAnnotation& gt,
                                int num_classes, double match_iou);
/// Bit c-1 set when class c is present.
std::vector<double> presence_target(const FrameAnnotation& gt, int num_classes);

/// Region cross entropy plus weighted mean BCE of presence probabilities.
/// Throws NonFiniteLoss.
double temporal_loss(const ag::Mat& logits, const std::vector<int>& targets,
                     const std::vector<double>& presence_probs,
                     const std::vector<double>& presence_target, double presence_weight);

class TemporalHead {
 public:
  explicit TemporalHead(const TemporalConfig& cfg);

  const TemporalConfig& config() const { return cfg_; }
  ag::ParameterStore& params() { return store_; }
  const ag::ParameterStore& params() const { return store_; }

  /// Per-frame encoder output before temporal mixing, one row per frame.
  ag::Var frame_features(ag::Tape& tape, const std::vector<const Image*>& frames) const;
  /// Adds time positions to W x d_t frame rows and applies temporal self-attention.
  ag::Var temporal_mix(ag::Tape& tape, ag::Var window_rows) const;
  /// frame_features followed by temporal_mix.
  ag::Var encode_window(ag::Tape& tape, const std::vector<const Image*>& frames) const;
  ag::Var pool(ag::Tape& tape, ag::Var features) const;
  /// N x (C+1) region logits; the time feature is shared by every region.
  ag::Var fuse_classify(ag::Tape& tape, ag::Var pooled, ag::Var seg) const;
  /// 1 x C presence logits.
  ag::Var presence_logits(ag::Tape& tape, ag::Var pooled) const;
  /// Region CE plus presence BCE (if enabled) for one keyframe.
  ag::Var loss(ag::Tape& tape, ag::Var pooled, ag::Var seg, const std::vector<int>& targets,
               const std::vector<double>& presence) const;

  // value-level conveniences
  ag::Mat fuse_classify(const ag::Mat& pooled, const ag::Mat& seg) const;
  std::vector<double> presence_head(const ag::Mat& pooled) const;

 private:
  /// std <= 0 selects 1/sqrt(rows).
  ag::Parameter& weight(const std::string& name, int rows, int cols, std::mt19937_64& rng,
                        double std = 0.0);
  ag::Parameter& fill(const std::string& name, int rows, int cols, double value);

  struct Layer {
    ag::Parameter *wq, *wk, *wv, *wo, *ln1_g, *ln1_b, *ff1_w, *ff1_b, *ff2_w, *ff2_b, *ln2_g, *ln2_b;
  };

  TemporalConfig cfg_;
  ag::ParameterStore store_;
  ag::Parameter *enc_w_, *enc_b_, *enc_pos_, *time_pos_;
  std::vector<Layer> layers_;
  ag::Parameter *tm1_w_ = nullptr, *tm1_b_ = nullptr, *tm2_w_ = nullptr, *tm2_b_ = nullptr;
  ag::Parameter *seg_w_, *seg_b_, *cls_w_, *cls_b_;
  ag::Parameter *pr1_w_ = nullptr, *pr1_b_ = nullptr, *pr2_w_ = nullptr, *pr2_b_ = nullptr;
};

/// Frozen baseline output for one frame: the selected regions and the
/// embeddings of their queries (row i belongs to regions[i]).
struct BaselineFrame {
  std::vector<Region> regions;
  ag::Mat segments;
  std::vector<std::vector<double>> class_probs;  // C+1 per region
};

struct BaselineVideo {
  const Video* video = nullptr;
  std::vector<BaselineFrame> frames;
};

/// Runs the frozen baseline on every frame and applies the selection.
BaselineVideo run_baseline(const ToyModel& model, const Video& video, const InferenceConfig& select_cfg);

struct TemporalTrainConfig {
  int epochs = 15;
  AdamWConfig optim;
  std::uint64_t shuffle_seed = 5;
  /// Fraction of epochs after which the learning rate drops tenfold.
  double lr_drop_at = 0.7;
  /// Consecutive keyframes of one video averaged into one optimizer step.
  int keyframes_per_step = 8;
  std::function<void(int epoch, double loss)> on_epoch;
};

/// Trains the head on every keyframe. A step averages the loss over a run of
/// consecutive keyframes of one video so their frames are encoded once. The
/// baseline stays frozen.
/// Throws DivergenceDetected on a non-finite loss.
std::vector<double> train_temporal(TemporalHead& head, const std::vector<BaselineVideo>& videos,
                                   const TemporalTrainConfig& cfg);

/// Replaces the class of each selected region by the temporal decision.
/// Regions decided as no-object are dropped; masks are never changed.
std::vector<FrameRegions> relabel(const TemporalHead& head, const BaselineVideo& video);

/// Per-frame encoder features of a video, d_t values per frame.
std::vector<std::vector<float>> video_features(const TemporalHead& head, const Video& video);

}  // namespace matis
