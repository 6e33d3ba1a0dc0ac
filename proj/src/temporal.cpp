#include "matis/temporal.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "matis/attention.hpp"
#include "matis/error.hpp"
#include "matis/kernels.hpp"

namespace matis {

using ag::Mat;
using ag::Var;

void TemporalConfig::validate() const {
  auto fail = [](const std::string& w) { throw Error(ErrorKind::ConfigInvalid, w); };
  if (window < 1) fail("window must be >= 1");
  if (stride < 1) fail("stride must be >= 1");
  if (time_dim < 1 || segment_dim < 1 || hidden_dim < 0) fail("widths must be >= 1");
  if (num_classes < 1) fail("num_classes must be >= 1");
  if (!(presence_weight >= 0)) fail("presence_weight must be >= 0");
  if (patch < 1 || height % patch || width % patch) fail("image dims must be multiples of patch");
  if (encoder_layers < 0) fail("encoder_layers must be >= 0");
  if (!(blend >= 0 && blend <= 1)) fail("blend must be in [0, 1]");
  if (!(match_iou > 0 && match_iou <= 1)) fail("match_iou must be in (0, 1]");
}

void to_json(nlohmann::json& j, const TemporalConfig& cfg) {
  j = nlohmann::json{{"window", cfg.window},
                     {"stride", cfg.stride},
                     {"time_dim", cfg.time_dim},
                     {"segment_dim", cfg.segment_dim},
                     {"hidden_dim", cfg.hidden_dim},
                     {"num_classes", cfg.num_classes},
                     {"presence_weight", cfg.presence_weight},
                     {"time_mlp", cfg.time_mlp},
                     {"presence", cfg.presence},
                     {"pooling", cfg.pooling == Pooling::Mean ? "mean" : "max"},
                     {"height", cfg.height},
                     {"width", cfg.width},
                     {"patch", cfg.patch},
                     {"encoder_layers", cfg.encoder_layers},
                     {"blend", cfg.blend},
                     {"match_iou", cfg.match_iou},
                     {"seed", cfg.seed},
                     {"init_std", cfg.init_std}};
}

void from_json(const nlohmann::json& j, TemporalConfig& cfg) {
  cfg = TemporalConfig{};
  cfg.window = j.value("window", cfg.window);
  cfg.stride = j.value("stride", cfg.stride);
  cfg.time_dim = j.value("time_dim", cfg.time_dim);
  cfg.segment_dim = j.value("segment_dim", cfg.segment_dim);
  cfg.hidden_dim = j.value("hidden_dim", cfg.hidden_dim);
  cfg.num_classes = j.value("num_classes", cfg.num_classes);
  cfg.presence_weight = j.value("presence_weight", cfg.presence_weight);
  cfg.time_mlp = j.value("time_mlp", cfg.time_mlp);
  cfg.presence = j.value("presence", cfg.presence);
  const std::string pooling = j.value("pooling", std::string("mean"));
  if (pooling != "mean" && pooling != "max") {
    throw Error(ErrorKind::ConfigInvalid, "pooling must be mean or max");
  }
  cfg.pooling = pooling == "mean" ? Pooling::Mean : Pooling::Max;
  cfg.height = j.value("height", cfg.height);
  cfg.width = j.value("width", cfg.width);
  cfg.patch = j.value("patch", cfg.patch);
  cfg.encoder_layers = j.value("encoder_layers", cfg.encoder_layers);
  cfg.blend = j.value("blend", cfg.blend);
  cfg.match_iou = j.value("match_iou", cfg.match_iou);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.init_std = j.value("init_std", cfg.init_std);
  cfg.validate();
}

std::vector<int> window_indices(int t, int window, int stride, int video_len) {
  std::vector<int> out(static_cast<std::size_t>(window));
  for (int i = 0; i < window; ++i) {
    out[static_cast<std::size_t>(i)] = std::clamp(t + stride * (i - window / 2), 0, video_len - 1);
  }
  return out;
}

Mat pool_time(const Mat& features, Pooling pooling) {
  if (pooling == Pooling::Max) return features.colwise().maxCoeff();
  return features.colwise().sum() / static_cast<double>(features.rows());
}

std::vector<int> region_targets(const std::vector<Region>& regions, const FrameAnnotation& gt,
                                int num_classes, double match_iou) {
  std::vector<int> out;
  out.reserve(regions.size());
  for (const auto& r : regions) {
    double best = 0.0;
    int cls = num_classes;
    for (const auto& inst : gt.instances) {
      const double iou = mask_iou(r.mask, inst.mask).value_or(0.0);
      if (iou > best) {
        best = iou;
        cls = inst.cls - 1;
      }
    }
    out.push_back(best >= match_iou ? cls : num_classes);
  }
  return out;
}

std::vector<double> presence_target(const FrameAnnotation& gt, int num_classes) {
  std::vector<double> out(static_cast<std::size_t>(num_classes), 0.0);
  for (const auto& inst : gt.instances) out.at(static_cast<std::size_t>(inst.cls - 1)) = 1.0;
  return out;
}

double temporal_loss(const Mat& logits, const std::vector<int>& targets,
                     const std::vector<double>& presence_probs,
                     const std::vector<double>& presence_target, double presence_weight) {
  if (static_cast<Eigen::Index>(targets.size()) != logits.rows() ||
      presence_probs.size() != presence_target.size()) {
    throw Error(ErrorKind::ShapeMismatch, "temporal_loss: size mismatch");
  }
  double ce = 0.0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    const double lse = mx + std::log((logits.row(r).array() - mx).exp().sum());
    ce += lse - logits(r, targets[static_cast<std::size_t>(r)]);
  }
  if (logits.rows() > 0) ce /= static_cast<double>(logits.rows());
  double bce = 0.0;
  for (std::size_t c = 0; c < presence_probs.size(); ++c) {
    const double p = std::clamp(presence_probs[c], 1e-12, 1.0 - 1e-12);
    const double y = presence_target[c];
    bce -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  if (!presence_probs.empty()) bce /= static_cast<double>(presence_probs.size());
  const double loss = ce + presence_weight * bce;
  if (!std::isfinite(loss)) throw Error(ErrorKind::NonFiniteLoss, "temporal loss is not finite");
  return loss;
}

ag::Parameter& TemporalHead::weight(const std::string& name, int rows, int cols,
                                    std::mt19937_64& rng, double std) {
  std::normal_distribution<double> normal(0.0, std > 0 ? std : 1.0 / std::sqrt(static_cast<double>(rows)));
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return store_.add(name, std::move(m));
}

ag::Parameter& TemporalHead::fill(const std::string& name, int rows, int cols, double value) {
  return store_.add(name, Mat::Constant(rows, cols, value));
}

TemporalHead::TemporalHead(const TemporalConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(cfg_.seed);
  const int dt = cfg_.time_dim, dh = cfg_.hidden(), c = cfg_.num_classes;
  const int patches = (cfg_.height / cfg_.patch) * (cfg_.width / cfg_.patch);
  enc_w_ = &weight("encoder.w", cfg_.patch * cfg_.patch * 3, dt, rng);
  enc_b_ = &fill("encoder.b", 1, dt, 0.0);
  enc_pos_ = &weight("encoder.pos", patches, dt, rng, cfg_.init_std);
  time_pos_ = &weight("encoder.time_pos", cfg_.window, dt, rng, cfg_.init_std);
  for (int l = 0; l < cfg_.encoder_layers; ++l) {
    const std::string p = "temporal" + std::to_string(l) + ".";
    Layer b{};
    b.wq = &weight(p + "wq", dt, dt, rng);
    b.wk = &weight(p + "wk", dt, dt, rng);
    b.wv = &weight(p + "wv", dt, dt, rng);
    b.wo = &weight(p + "wo", dt, dt, rng);
    b.ln1_g = &fill(p + "ln1.g", 1, dt, 1.0);
    b.ln1_b = &fill(p + "ln1.b", 1, dt, 0.0);
    b.ff1_w = &weight(p + "ff1.w", dt, 2 * dt, rng);
    b.ff1_b = &fill(p + "ff1.b", 1, 2 * dt, 0.0);
    b.ff2_w = &weight(p + "ff2.w", 2 * dt, dt, rng);
    b.ff2_b = &fill(p + "ff2.b", 1, dt, 0.0);
    b.ln2_g = &fill(p + "ln2.g", 1, dt, 1.0);
    b.ln2_b = &fill(p + "ln2.b", 1, dt, 0.0);
    layers_.push_back(b);
  }
  if (cfg_.time_mlp) {
    tm1_w_ = &weight("time_mlp1.w", dt, dh, rng);
    tm1_b_ = &fill("time_mlp1.b", 1, dh, 0.0);
    tm2_w_ = &weight("time_mlp2.w", dh, dt, rng);
    tm2_b_ = &fill("time_mlp2.b", 1, dt, 0.0);
  }
  seg_w_ = &weight("segment.w", cfg_.segment_dim, dh, rng);
  seg_b_ = &fill("segment.b", 1, dh, 0.0);
  cls_w_ = &weight("classifier.w", dt + dh, c + 1, rng);
  cls_b_ = &fill("classifier.b", 1, c + 1, 0.0);
  if (cfg_.presence) {
    pr1_w_ = &weight("presence1.w", dt, dh, rng);
    pr1_b_ = &fill("presence1.b", 1, dh, 0.0);
    pr2_w_ = &weight("presence2.w", dh, c, rng);
    pr2_b_ = &fill("presence2.b", 1, c, 0.0);
  }
}

Var TemporalHead::frame_features(ag::Tape& t, const std::vector<const Image*>& frames) const {
  const int n = static_cast<int>(frames.size());
  const int patches = (cfg_.height / cfg_.patch) * (cfg_.width / cfg_.patch);
  const int pdim = cfg_.patch * cfg_.patch * 3;
  Mat stacked(static_cast<Eigen::Index>(n) * patches, pdim);
  for (int f = 0; f < n; ++f) {
    const Image& img = *frames[static_cast<std::size_t>(f)];
    if (img.height != cfg_.height || img.width != cfg_.width) {
      throw Error(ErrorKind::ShapeMismatch, "frame dims do not match the temporal config");
    }
    stacked.middleRows(static_cast<Eigen::Index>(f) * patches, patches) = image_patches(img, cfg_.patch);
  }
  std::vector<int> tile(static_cast<std::size_t>(n) * patches);
  for (std::size_t i = 0; i < tile.size(); ++i) tile[i] = static_cast<int>(i % patches);
  Var h = ag::linear(t.constant(std::move(stacked)), t.param(*enc_w_), t.param(*enc_b_));
  h = ag::gelu(ag::add(h, ag::gather_rows(t.param(*enc_pos_), std::move(tile))));
  return ag::group_max_rows(h, patches);
}

Var TemporalHead::temporal_mix(ag::Tape& t, Var window_rows) const {
  if (window_rows.rows() != cfg_.window || window_rows.cols() != cfg_.time_dim) {
    throw Error(ErrorKind::ShapeMismatch, "window length mismatch");
  }
  Var x = ag::add(window_rows, t.param(*time_pos_));
  for (const auto& b : layers_) {
    Var att = masked_attention(ag::matmul(x, t.param(*b.wq)), ag::matmul(x, t.param(*b.wk)),
                               ag::matmul(x, t.param(*b.wv)), nullptr);
    x = ag::layer_norm(ag::add(x, ag::matmul(att, t.param(*b.wo))), t.param(*b.ln1_g), t.param(*b.ln1_b));
    Var ff = ag::linear(ag::gelu(ag::linear(x, t.param(*b.ff1_w), t.param(*b.ff1_b))),
                        t.param(*b.ff2_w), t.param(*b.ff2_b));
    x = ag::layer_norm(ag::add(x, ff), t.param(*b.ln2_g), t.param(*b.ln2_b));
  }
  return x;
}

Var TemporalHead::encode_window(ag::Tape& t, const std::vector<const Image*>& frames) const {
  return temporal_mix(t, frame_features(t, frames));
}

Var TemporalHead::pool(ag::Tape&, Var features) const {
  return cfg_.pooling == Pooling::Mean ? ag::mean_rows(features) : ag::max_rows(features);
}

Var TemporalHead::fuse_classify(ag::Tape& t, Var pooled, Var seg) const {
  if (pooled.rows() != 1 || pooled.cols() != cfg_.time_dim || seg.cols() != cfg_.segment_dim) {
    throw Error(ErrorKind::ShapeMismatch, "fuse_classify: input widths");
  }
  Var u = pooled;
  if (cfg_.time_mlp) {
    u = ag::linear(ag::gelu(ag::linear(pooled, t.param(*tm1_w_), t.param(*tm1_b_))),
                   t.param(*tm2_w_), t.param(*tm2_b_));
  }
  Var r = ag::linear(seg, t.param(*seg_w_), t.param(*seg_b_));
  Var joint = ag::concat_cols(ag::repeat_rows(u, static_cast<int>(seg.rows())), r);
  return ag::linear(joint, t.param(*cls_w_), t.param(*cls_b_));
}

Var TemporalHead::presence_logits(ag::Tape& t, Var pooled) const {
  if (!cfg_.presence) throw Error(ErrorKind::ConfigInvalid, "presence head is disabled");
  return ag::linear(ag::gelu(ag::linear(pooled, t.param(*pr1_w_), t.param(*pr1_b_))),
                    t.param(*pr2_w_), t.param(*pr2_b_));
}

Var TemporalHead::loss(ag::Tape& t, Var pooled, Var seg, const std::vector<int>& targets,
                       const std::vector<double>& presence) const {
  std::optional<Var> total;
  if (seg.rows() > 0) {
    total = ag::cross_entropy(fuse_classify(t, pooled, seg), targets,
                              std::vector<double>(targets.size(), 1.0));
  }
  if (cfg_.presence && cfg_.presence_weight > 0) {
    Mat target(1, cfg_.num_classes);
    for (int c = 0; c < cfg_.num_classes; ++c) target(0, c) = presence.at(static_cast<std::size_t>(c));
    Var term = ag::scale(ag::bce_with_logits(presence_logits(t, pooled), target), cfg_.presence_weight);
    total = total ? ag::add(*total, term) : term;
  }
  return total ? *total : t.constant(Mat::Zero(1, 1));
}

Mat TemporalHead::fuse_classify(const Mat& pooled, const Mat& seg) const {
  ag::Tape t(false);
  return fuse_classify(t, t.constant(pooled), t.constant(seg)).value();
}

std::vector<double> TemporalHead::presence_head(const Mat& pooled) const {
  ag::Tape t(false);
  const Mat logits = ag::sigmoid(presence_logits(t, t.constant(pooled))).value();
  return {logits.data(), logits.data() + logits.size()};
}

BaselineVideo run_baseline(const ToyModel& model, const Video& video, const InferenceConfig& select_cfg) {
  BaselineVideo out;
  out.video = &video;
  out.frames.resize(video.frames.size());
  const int n = static_cast<int>(video.frames.size());
#pragma omp parallel for schedule(dynamic) num_threads(parallel_threads())
  for (int i = 0; i < n; ++i) {
    const Frame& f = video.frames[static_cast<std::size_t>(i)];
    const FrameOutput fo = model.infer(f.image, f.annotation.frame_id);
    BaselineFrame& bf = out.frames[static_cast<std::size_t>(i)];
    bf.regions = select(fo.proposals, select_cfg);
    bf.segments.resize(static_cast<Eigen::Index>(bf.regions.size()), fo.segment_embeddings.cols());
    for (std::size_t r = 0; r < bf.regions.size(); ++r) {
      const int q = bf.regions[r].query;
      bf.segments.row(static_cast<Eigen::Index>(r)) = fo.segment_embeddings.row(q);
      bf.class_probs.push_back(fo.proposals.proposals[static_cast<std::size_t>(q)].class_probs());
    }
  }
  return out;
}

namespace {

std::vector<const Image*> all_frames(const Video& video) {
  std::vector<const Image*> out;
  for (const auto& f : video.frames) out.push_back(&f.image);
  return out;
}

Var keyframe_pooled(const TemporalHead& head, ag::Tape& tape, Var features, int t) {
  const TemporalConfig& tc = head.config();
  auto idx = window_indices(t, tc.window, tc.stride, static_cast<int>(features.rows()));
  return head.pool(tape, head.temporal_mix(tape, ag::gather_rows(features, std::move(idx))));
}

}  // namespace

std::vector<double> train_temporal(TemporalHead& head, const std::vector<BaselineVideo>& videos,
                                   const TemporalTrainConfig& cfg) {
  const TemporalConfig& tc = head.config();
  const bool presence_on = tc.presence && tc.presence_weight > 0;
  std::vector<std::vector<std::vector<int>>> targets(videos.size());
  std::vector<std::vector<std::vector<double>>> presence(videos.size());
  std::size_t usable = 0;
  for (std::size_t v = 0; v < videos.size(); ++v) {
    const Video& video = *videos[v].video;
    if (videos[v].frames.size() != video.frames.size()) {
      throw Error(ErrorKind::DimensionMismatch, "baseline output does not cover the video");
    }
    for (std::size_t t = 0; t < video.frames.size(); ++t) {
      const auto& gt = video.frames[t].annotation;
      targets[v].push_back(region_targets(videos[v].frames[t].regions, gt, tc.num_classes, tc.match_iou));
      presence[v].push_back(presence_target(gt, tc.num_classes));
      if (presence_on || !targets[v].back().empty()) ++usable;
    }
  }
  if (usable == 0) throw Error(ErrorKind::MissingInput, "no temporal training samples");

  if (cfg.keyframes_per_step < 1) throw Error(ErrorKind::ConfigInvalid, "keyframes_per_step must be >= 1");
  struct Chunk {
    std::size_t video;
    int first, last;  // keyframe range [first, last)
  };
  std::vector<Chunk> chunks;
  for (std::size_t v = 0; v < videos.size(); ++v) {
    const int n = static_cast<int>(videos[v].frames.size());
    for (int first = 0; first < n; first += cfg.keyframes_per_step) {
      chunks.push_back({v, first, std::min(n, first + cfg.keyframes_per_step)});
    }
  }

  AdamW opt(head.params(), cfg.optim);
  std::mt19937_64 rng(cfg.shuffle_seed);
  std::vector<double> curve;
  const int drop_epoch = static_cast<int>(std::lround(cfg.lr_drop_at * cfg.epochs));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (epoch == drop_epoch && cfg.lr_drop_at < 1.0) opt.set_lr(cfg.optim.lr * 0.1);
    std::shuffle(chunks.begin(), chunks.end(), rng);
    double total = 0.0;
    int used = 0;
    for (const Chunk& c : chunks) {
      const BaselineVideo& bv = videos[c.video];
      const int n = static_cast<int>(bv.frames.size());
      // frames touched by any window of the chunk
      const int lo = window_indices(c.first, tc.window, tc.stride, n).front();
      const int hi = window_indices(c.last - 1, tc.window, tc.stride, n).back();
      std::vector<const Image*> span;
      for (int f = lo; f <= hi; ++f) span.push_back(&bv.video->frames[static_cast<std::size_t>(f)].image);
      ag::Tape tape;
      Var features = head.frame_features(tape, span);
      std::optional<Var> sum;
      int count = 0;
      for (int t = c.first; t < c.last; ++t) {
        const auto& tg = targets[c.video][static_cast<std::size_t>(t)];
        if (!presence_on && tg.empty()) continue;
        auto idx = window_indices(t, tc.window, tc.stride, n);
        for (int& i : idx) i -= lo;
        Var pooled = head.pool(tape, head.temporal_mix(tape, ag::gather_rows(features, std::move(idx))));
        Var loss = head.loss(tape, pooled, tape.constant(bv.frames[static_cast<std::size_t>(t)].segments), tg,
                             presence[c.video][static_cast<std::size_t>(t)]);
        sum = sum ? ag::add(*sum, loss) : loss;
        ++count;
      }
      if (!sum) continue;
      Var loss = ag::scale(*sum, 1.0 / count);
      const double value = loss.value()(0, 0);
      if (!std::isfinite(value)) throw Error(ErrorKind::DivergenceDetected, "temporal loss became non-finite");
      head.params().zero_grad();
      tape.backward(loss);
      opt.step();
      total += value;
      ++used;
    }
    curve.push_back(used ? total / used : 0.0);
    if (cfg.on_epoch) cfg.on_epoch(epoch, curve.back());
  }
  head.params().zero_grad();
  return curve;
}

std::vector<FrameRegions> relabel(const TemporalHead& head, const BaselineVideo& video) {
  const TemporalConfig& tc = head.config();
  const int n = static_cast<int>(video.frames.size());
  std::vector<FrameRegions> out(static_cast<std::size_t>(n));
  ag::Tape tape(false);
  Var features = head.frame_features(tape, all_frames(*video.video));
  for (int t = 0; t < n; ++t) {
    const BaselineFrame& bf = video.frames[static_cast<std::size_t>(t)];
    FrameRegions& fr = out[static_cast<std::size_t>(t)];
    fr.frame_id = video.video->frames[static_cast<std::size_t>(t)].annotation.frame_id;
    if (bf.regions.empty()) continue;
    Var pooled = keyframe_pooled(head, tape, features, t);
    const Mat logits = head.fuse_classify(tape, pooled, tape.constant(bf.segments)).value();
    for (std::size_t r = 0; r < bf.regions.size(); ++r) {
      const auto row = logits.row(static_cast<Eigen::Index>(r));
      Eigen::RowVectorXd p = (row.array() - row.maxCoeff()).exp();
      p /= p.sum();
      if (tc.blend > 0) {
        for (Eigen::Index c = 0; c < p.size(); ++c) {
          p(c) = (1.0 - tc.blend) * p(c) + tc.blend * bf.class_probs[r][static_cast<std::size_t>(c)];
        }
      }
      Eigen::Index best = 0;
      for (Eigen::Index c = 1; c < p.size(); ++c) {
        if (p(c) > p(best)) best = c;
      }
      if (best == tc.num_classes) continue;
      Region region = bf.regions[r];
      region.cls = static_cast<ClassId>(best + 1);
      region.score = p(best);
      fr.regions.push_back(std::move(region));
    }
  }
  return out;
}

std::vector<std::vector<float>> video_features(const TemporalHead& head, const Video& video) {
  ag::Tape tape(false);
  const Mat v = head.frame_features(tape, all_frames(video)).value();
  std::vector<std::vector<float>> out;
  for (Eigen::Index r = 0; r < v.rows(); ++r) out.emplace_back(v.row(r).data(), v.row(r).data() + v.cols());
  return out;
}

}  // namespace matis
