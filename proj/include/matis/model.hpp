#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "matis/annotation.hpp"
#include "matis/attention.hpp"
#include "matis/autograd.hpp"
#include "matis/matching.hpp"
#include "matis/proposal.hpp"
#include "matis/synth.hpp"

namespace matis {

struct ToyModelConfig {
  int num_queries = 100;
  int dim = 32;
  int layers = 2;
  int num_classes = 7;
  int height = 64;
  int width = 64;
  int patch = 4;
  int pixel_layers = 2;
  std::uint64_t seed = 1;
  double init_std = 0.02;
  double mask_threshold = 0.5;
  bool deep_supervision = true;
  MatchWeights weights;

  int grid_rows() const { return height / patch; }
  int grid_cols() const { return width / patch; }
  void validate() const;
};

void to_json(nlohmann::json& j, const ToyModelConfig& cfg);
void from_json(const nlohmann::json& j, ToyModelConfig& cfg);

/// Attention masks and matchings captured during one forward pass. When
/// replayed, thresholding and matching are taken from the recording, which
/// makes the loss a smooth function of the parameters for finite differences.
struct ForwardTrace {
  enum class Mode { Off, Record, Replay };
  Mode mode = Mode::Off;
  std::vector<Mat> attention_masks;
  std::vector<Assignment> assignments;
};

/// One prediction head output on the tape.
struct Prediction {
  ag::Var class_logits;  // N x (C+1)
  ag::Var mask_logits;   // N x (H*W)
};

struct ForwardGraph {
  std::vector<Prediction> predictions;  // one per decoder stage, last is final
  ag::Var segment_embeddings;           // N x d
};

struct FrameOutput {
  ProposalSet proposals;
  Mat segment_embeddings;
};

/// Desk-scale masked-attention set-prediction segmenter.
class ToyModel {
 public:
  explicit ToyModel(const ToyModelConfig& cfg);

  const ToyModelConfig& config() const noexcept { return cfg_; }
  ag::ParameterStore& params() noexcept { return store_; }
  const ag::ParameterStore& params() const noexcept { return store_; }

  ForwardGraph forward(ag::Tape& tape, const Image& image, ForwardTrace* trace = nullptr) const;

  /// Sum of the set criterion over supervised predictions.
  ag::Var loss(ag::Tape& tape, const Image& image, const FrameAnnotation& gt,
               ForwardTrace* trace = nullptr) const;

  FrameOutput infer(const Image& image, const std::string& frame_id = "") const;

  /// Permutes learned query rows: new query i is old query perm[i].
  void permute_queries(const std::vector<int>& perm);

 private:
  struct Block {
    ag::Parameter *wq, *wk, *wv, *wo;
    ag::Parameter *ln1_g, *ln1_b;
    ag::Parameter *self_wq, *self_wk, *self_wv, *self_wo;
    ag::Parameter *ln2_g, *ln2_b;
    ag::Parameter *ff1_w, *ff1_b, *ff2_w, *ff2_b;
    ag::Parameter *ln3_g, *ln3_b;
  };
  struct PixelBlock {
    ag::Parameter *wq, *wk, *wv, *wo, *ln1_g, *ln1_b;
    ag::Parameter *ff1_w, *ff1_b, *ff2_w, *ff2_b, *ln2_g, *ln2_b;
  };

  ag::Parameter& weight(const std::string& name, int rows, int cols, std::mt19937_64& rng);
  ag::Parameter& constant(const std::string& name, int rows, int cols, double value);

  ToyModelConfig cfg_;
  ag::ParameterStore store_;
  ag::Parameter *patch_w_, *patch_b_, *pos_;
  std::vector<PixelBlock> pixel_blocks_;
  ag::Parameter *up_w_, *up_b_, *col1_w_, *col1_b_, *col2_w_, *col2_b_;
  ag::Parameter *queries_;
  std::vector<Block> blocks_;
  ag::Parameter *dec_ln_g_, *dec_ln_b_;
  ag::Parameter *cls_w_, *cls_b_;
  ag::Parameter *me1_w_, *me1_b_, *me2_w_, *me2_b_;
  std::vector<int> pixel_to_patch_;
};

/// Image as (H*W) x 3 rows and as non-overlapping patch rows.
Mat image_pixels(const Image& image);
Mat image_patches(const Image& image, int patch);

/// Differentiable set criterion on logits: Hungarian matching on the
/// pair_cost terms, then weighted class cross entropy plus mask BCE and Dice
/// over matched pairs. Matching comes from *replay when given, and is written
/// to *record when given.
ag::Var set_criterion_loss(ag::Var class_logits, ag::Var mask_logits, const FrameAnnotation& gt,
                           const MatchWeights& w, const Assignment* replay = nullptr,
                           Assignment* record = nullptr);

/// ProposalSet from class logits and mask logits.
ProposalSet proposals_from_logits(const Mat& class_logits, const Mat& mask_logits, int height,
                                  int width, const std::string& frame_id);

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  double max_grad_norm = 1.0;  // 0 disables clipping
};

class AdamW {
 public:
  AdamW(ag::ParameterStore& store, AdamWConfig cfg);
  void step();
  void set_lr(double lr) { cfg_.lr = lr; }

 private:
  ag::ParameterStore& store_;
  AdamWConfig cfg_;
  std::vector<Mat> m_, v_;
  long t_ = 0;
};

struct TrainConfig {
  int epochs = 30;
  int batch_size = 1;
  AdamWConfig optim;
  std::uint64_t shuffle_seed = 1;
  /// Step decay of the learning rate by 10x at this fraction of training.
  double lr_drop_at = 0.8;
  std::function<void(int epoch, double mean_loss)> on_epoch;
};

struct TrainResult {
  std::vector<double> loss_curve;  // mean loss per epoch
};

/// Deterministic given model seed and shuffle seed. Throws
/// DivergenceDetected when a loss turns non-finite.
TrainResult train_toy(ToyModel& model, const std::vector<Frame>& frames, const TrainConfig& cfg);

/// Maximum relative error |g_a - g_fd| / max(1e-8, |g_a| + |g_fd|) over a
/// seeded sample of at least `samples` scalar parameters, with central
/// differences of step eps.
struct GradCheckResult {
  double max_rel_error = 0.0;
  int checked = 0;
};
GradCheckResult grad_check(ag::ParameterStore& store,
                           const std::function<ag::Var(ag::Tape&)>& loss_fn, double eps,
                           int samples, std::uint64_t seed);

}  // namespace matis
