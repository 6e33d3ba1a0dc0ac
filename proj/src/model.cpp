#include "matis/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "matis/error.hpp"

namespace matis {

using ag::Mat;
using ag::Var;

void ToyModelConfig::validate() const {
  auto fail = [](const std::string& w) { throw Error(ErrorKind::ConfigInvalid, w); };
  if (num_queries < 1) fail("num_queries must be >= 1");
  if (dim < 4) fail("dim must be >= 4");
  if (layers < 1) fail("layers must be >= 1");
  if (num_classes < 1) fail("num_classes must be >= 1");
  if (patch < 1 || height < patch || width < patch || height % patch || width % patch) {
    fail("image dims must be positive multiples of the patch size");
  }
  if (pixel_layers < 0) fail("pixel_layers must be >= 0");
  weights.validate();
}

void to_json(nlohmann::json& j, const ToyModelConfig& cfg) {
  j = nlohmann::json{{"num_queries", cfg.num_queries},
                     {"dim", cfg.dim},
                     {"layers", cfg.layers},
                     {"num_classes", cfg.num_classes},
                     {"height", cfg.height},
                     {"width", cfg.width},
                     {"patch", cfg.patch},
                     {"pixel_layers", cfg.pixel_layers},
                     {"seed", cfg.seed},
                     {"init_std", cfg.init_std},
                     {"mask_threshold", cfg.mask_threshold},
                     {"deep_supervision", cfg.deep_supervision},
                     {"w_cls", cfg.weights.w_cls},
                     {"w_bce", cfg.weights.w_bce},
                     {"w_dice", cfg.weights.w_dice},
                     {"no_object_weight", cfg.weights.no_object_weight}};
}

void from_json(const nlohmann::json& j, ToyModelConfig& cfg) {
  cfg = ToyModelConfig{};
  cfg.num_queries = j.value("num_queries", cfg.num_queries);
  cfg.dim = j.value("dim", cfg.dim);
  cfg.layers = j.value("layers", cfg.layers);
  cfg.num_classes = j.value("num_classes", cfg.num_classes);
  cfg.height = j.value("height", cfg.height);
  cfg.width = j.value("width", cfg.width);
  cfg.patch = j.value("patch", cfg.patch);
  cfg.pixel_layers = j.value("pixel_layers", cfg.pixel_layers);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.init_std = j.value("init_std", cfg.init_std);
  cfg.mask_threshold = j.value("mask_threshold", cfg.mask_threshold);
  cfg.deep_supervision = j.value("deep_supervision", cfg.deep_supervision);
  cfg.weights.w_cls = j.value("w_cls", cfg.weights.w_cls);
  cfg.weights.w_bce = j.value("w_bce", cfg.weights.w_bce);
  cfg.weights.w_dice = j.value("w_dice", cfg.weights.w_dice);
  cfg.weights.no_object_weight = j.value("no_object_weight", cfg.weights.no_object_weight);
  cfg.validate();
}

Mat image_pixels(const Image& image) {
  Mat out(static_cast<Eigen::Index>(image.height) * image.width, 3);
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    for (int ch = 0; ch < 3; ++ch) out(i, ch) = image.data[static_cast<std::size_t>(i) * 3 + ch];
  }
  return out;
}

Mat image_patches(const Image& image, int patch) {
  const int gr = image.height / patch, gc = image.width / patch;
  Mat out(gr * gc, patch * patch * 3);
  for (int pr = 0; pr < gr; ++pr) {
    for (int pc = 0; pc < gc; ++pc) {
      int k = 0;
      for (int dr = 0; dr < patch; ++dr) {
        for (int dc = 0; dc < patch; ++dc) {
          for (int ch = 0; ch < 3; ++ch) {
            out(pr * gc + pc, k++) = image.at(pr * patch + dr, pc * patch + dc, ch);
          }
        }
      }
    }
  }
  return out;
}

ag::Parameter& ToyModel::weight(const std::string& name, int rows, int cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, cfg_.init_std);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return store_.add(name, std::move(m));
}

ag::Parameter& ToyModel::constant(const std::string& name, int rows, int cols, double value) {
  return store_.add(name, Mat::Constant(rows, cols, value));
}

ToyModel::ToyModel(const ToyModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(cfg_.seed);
  const int d = cfg_.dim;
  const int grid = cfg_.grid_rows() * cfg_.grid_cols();
  patch_w_ = &weight("patch.w", cfg_.patch * cfg_.patch * 3, d, rng);
  patch_b_ = &constant("patch.b", 1, d, 0.0);
  pos_ = &weight("pixel.pos", grid, d, rng);
  for (int l = 0; l < cfg_.pixel_layers; ++l) {
    const std::string p = "pixel" + std::to_string(l) + ".";
    PixelBlock b{};
    b.wq = &weight(p + "wq", d, d, rng);
    b.wk = &weight(p + "wk", d, d, rng);
    b.wv = &weight(p + "wv", d, d, rng);
    b.wo = &weight(p + "wo", d, d, rng);
    b.ln1_g = &constant(p + "ln1.g", 1, d, 1.0);
    b.ln1_b = &constant(p + "ln1.b", 1, d, 0.0);
    b.ff1_w = &weight(p + "ff1.w", d, 2 * d, rng);
    b.ff1_b = &constant(p + "ff1.b", 1, 2 * d, 0.0);
    b.ff2_w = &weight(p + "ff2.w", 2 * d, d, rng);
    b.ff2_b = &constant(p + "ff2.b", 1, d, 0.0);
    b.ln2_g = &constant(p + "ln2.g", 1, d, 1.0);
    b.ln2_b = &constant(p + "ln2.b", 1, d, 0.0);
    pixel_blocks_.push_back(b);
  }
  up_w_ = &weight("pixel.up.w", d, d, rng);
  up_b_ = &constant("pixel.up.b", 1, d, 0.0);
  col1_w_ = &weight("pixel.colour1.w", 3, d, rng);
  col1_b_ = &constant("pixel.colour1.b", 1, d, 0.0);
  col2_w_ = &weight("pixel.colour2.w", d, d, rng);
  col2_b_ = &constant("pixel.colour2.b", 1, d, 0.0);
  queries_ = &weight("queries", cfg_.num_queries, d, rng);
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string p = "decoder" + std::to_string(l) + ".";
    Block b{};
    b.wq = &weight(p + "cross.wq", d, d, rng);
    b.wk = &weight(p + "cross.wk", d, d, rng);
    b.wv = &weight(p + "cross.wv", d, d, rng);
    b.wo = &weight(p + "cross.wo", d, d, rng);
    b.ln1_g = &constant(p + "ln1.g", 1, d, 1.0);
    b.ln1_b = &constant(p + "ln1.b", 1, d, 0.0);
    b.self_wq = &weight(p + "self.wq", d, d, rng);
    b.self_wk = &weight(p + "self.wk", d, d, rng);
    b.self_wv = &weight(p + "self.wv", d, d, rng);
    b.self_wo = &weight(p + "self.wo", d, d, rng);
    b.ln2_g = &constant(p + "ln2.g", 1, d, 1.0);
    b.ln2_b = &constant(p + "ln2.b", 1, d, 0.0);
    b.ff1_w = &weight(p + "ff1.w", d, 2 * d, rng);
    b.ff1_b = &constant(p + "ff1.b", 1, 2 * d, 0.0);
    b.ff2_w = &weight(p + "ff2.w", 2 * d, d, rng);
    b.ff2_b = &constant(p + "ff2.b", 1, d, 0.0);
    b.ln3_g = &constant(p + "ln3.g", 1, d, 1.0);
    b.ln3_b = &constant(p + "ln3.b", 1, d, 0.0);
    blocks_.push_back(b);
  }
  dec_ln_g_ = &constant("decoder.norm.g", 1, d, 1.0);
  dec_ln_b_ = &constant("decoder.norm.b", 1, d, 0.0);
  cls_w_ = &weight("class.w", d, cfg_.num_classes + 1, rng);
  cls_b_ = &constant("class.b", 1, cfg_.num_classes + 1, 0.0);
  me1_w_ = &weight("mask_embed1.w", d, d, rng);
  me1_b_ = &constant("mask_embed1.b", 1, d, 0.0);
  me2_w_ = &weight("mask_embed2.w", d, d, rng);
  me2_b_ = &constant("mask_embed2.b", 1, d, 0.0);

  const int gc = cfg_.grid_cols();
  pixel_to_patch_.resize(static_cast<std::size_t>(cfg_.height) * cfg_.width);
  for (int r = 0; r < cfg_.height; ++r) {
    for (int c = 0; c < cfg_.width; ++c) {
      pixel_to_patch_[static_cast<std::size_t>(r) * cfg_.width + c] =
          (r / cfg_.patch) * gc + c / cfg_.patch;
    }
  }
}

void ToyModel::permute_queries(const std::vector<int>& perm) {
  Mat old = queries_->value;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    queries_->value.row(static_cast<Eigen::Index>(i)) = old.row(perm[i]);
  }
}

namespace {

Var ln(ag::Tape& t, Var x, ag::Parameter* g, ag::Parameter* b) {
  return ag::layer_norm(x, t.param(*g), t.param(*b));
}

Var proj(ag::Tape& t, Var x, ag::Parameter* w) { return ag::matmul(x, t.param(*w)); }

Var ffn(ag::Tape& t, Var x, ag::Parameter* w1, ag::Parameter* b1, ag::Parameter* w2,
        ag::Parameter* b2) {
  return ag::linear(ag::gelu(ag::linear(x, t.param(*w1), t.param(*b1))), t.param(*w2),
                    t.param(*b2));
}

}  // namespace

ForwardGraph ToyModel::forward(ag::Tape& t, const Image& image, ForwardTrace* trace) const {
  if (image.height != cfg_.height || image.width != cfg_.width) {
    throw Error(ErrorKind::ShapeMismatch, "image dims do not match the model config");
  }
  const int grid = cfg_.grid_rows() * cfg_.grid_cols();
  const int patch_pixels = cfg_.patch * cfg_.patch;

  // pixel encoder
  Var x = ag::add(ag::linear(t.constant(image_patches(image, cfg_.patch)), t.param(*patch_w_),
                             t.param(*patch_b_)),
                  t.param(*pos_));
  for (const auto& b : pixel_blocks_) {
    Var att = masked_attention(proj(t, x, b.wq), proj(t, x, b.wk), proj(t, x, b.wv), nullptr);
    x = ln(t, ag::add(x, proj(t, att, b.wo)), b.ln1_g, b.ln1_b);
    x = ln(t, ag::add(x, ffn(t, x, b.ff1_w, b.ff1_b, b.ff2_w, b.ff2_b)), b.ln2_g, b.ln2_b);
  }
  const Var memory = x;
  Var upsampled =
      ag::gather_rows(ag::linear(memory, t.param(*up_w_), t.param(*up_b_)), pixel_to_patch_);
  Var colour = ffn(t, t.constant(image_pixels(image)), col1_w_, col1_b_, col2_w_, col2_b_);
  const Var pixel_features = ag::add(upsampled, colour);

  ForwardGraph graph;
  int mask_index = 0;
  Mat attn_mask;
  auto predict = [&](Var q) {
    Var qn = ln(t, q, dec_ln_g_, dec_ln_b_);
    Var cls = ag::linear(qn, t.param(*cls_w_), t.param(*cls_b_));
    Var embed = ffn(t, qn, me1_w_, me1_b_, me2_w_, me2_b_);
    Var masks = ag::matmul_nt(embed, pixel_features);
    graph.predictions.push_back({cls, masks});
    graph.segment_embeddings = qn;

    if (trace && trace->mode == ForwardTrace::Mode::Replay) {
      attn_mask = trace->attention_masks.at(mask_index++);
      return;
    }
    // detached: pool probabilities to the patch grid, then threshold
    const Mat probs = logistic(masks.value());
    Mat pooled = Mat::Zero(probs.rows(), grid);
    for (std::size_t p = 0; p < pixel_to_patch_.size(); ++p) {
      pooled.col(pixel_to_patch_[p]) += probs.col(static_cast<Eigen::Index>(p));
    }
    pooled /= static_cast<double>(patch_pixels);
    attn_mask = attention_mask_from_probs(pooled, cfg_.mask_threshold);
    if (trace && trace->mode == ForwardTrace::Mode::Record) trace->attention_masks.push_back(attn_mask);
  };

  Var q = t.param(*queries_);
  predict(q);
  for (const auto& b : blocks_) {
    const Mat mask = attn_mask;
    Var cross = masked_attention(proj(t, q, b.wq), proj(t, memory, b.wk), proj(t, memory, b.wv), &mask);
    q = ln(t, ag::add(q, proj(t, cross, b.wo)), b.ln1_g, b.ln1_b);
    Var self = masked_attention(proj(t, q, b.self_wq), proj(t, q, b.self_wk), proj(t, q, b.self_wv), nullptr);
    q = ln(t, ag::add(q, proj(t, self, b.self_wo)), b.ln2_g, b.ln2_b);
    q = ln(t, ag::add(q, ffn(t, q, b.ff1_w, b.ff1_b, b.ff2_w, b.ff2_b)), b.ln3_g, b.ln3_b);
    predict(q);
  }
  return graph;
}

Var ToyModel::loss(ag::Tape& tape, const Image& image, const FrameAnnotation& gt,
                   ForwardTrace* trace) const {
  const ForwardGraph graph = forward(tape, image, trace);
  const std::size_t first = cfg_.deep_supervision ? 0 : graph.predictions.size() - 1;
  std::optional<Var> total;
  for (std::size_t i = first; i < graph.predictions.size(); ++i) {
    const auto& p = graph.predictions[i];
    const Assignment* replay = nullptr;
    Assignment* record = nullptr;
    if (trace && trace->mode == ForwardTrace::Mode::Replay) {
      replay = &trace->assignments.at(i - first);
    } else if (trace && trace->mode == ForwardTrace::Mode::Record) {
      trace->assignments.emplace_back();
      record = &trace->assignments.back();
    }
    Var term = set_criterion_loss(p.class_logits, p.mask_logits, gt, cfg_.weights, replay, record);
    total = total ? ag::add(*total, term) : term;
  }
  return *total;
}

FrameOutput ToyModel::infer(const Image& image, const std::string& frame_id) const {
  ag::Tape tape(false);
  const ForwardGraph graph = forward(tape, image);
  const auto& last = graph.predictions.back();
  return FrameOutput{proposals_from_logits(last.class_logits.value(), last.mask_logits.value(),
                                           cfg_.height, cfg_.width, frame_id),
                     graph.segment_embeddings.value()};
}

namespace {

Mat softmax_rows_value(const Mat& x) {
  Mat p(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mx = x.row(r).maxCoeff();
    p.row(r) = (x.row(r).array() - mx).exp();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

}  // namespace

ProposalSet proposals_from_logits(const Mat& class_logits, const Mat& mask_logits, int height,
                                  int width, const std::string& frame_id) {
  ProposalSet set;
  set.frame_id = frame_id;
  const Mat probs = softmax_rows_value(class_logits);
  const Mat soft = logistic(mask_logits);
  for (Eigen::Index q = 0; q < probs.rows(); ++q) {
    std::vector<double> p(probs.row(q).data(), probs.row(q).data() + probs.cols());
    SoftMask m(height, width);
    for (Eigen::Index i = 0; i < soft.cols(); ++i) m.probs[static_cast<std::size_t>(i)] = soft(q, i);
    set.proposals.emplace_back(std::move(p), std::move(m));
  }
  return set;
}

Var set_criterion_loss(Var class_logits, Var mask_logits, const FrameAnnotation& gt,
                       const MatchWeights& w, const Assignment* replay, Assignment* record) {
  const Mat& xl = class_logits.value();
  const Mat& xm = mask_logits.value();
  const auto n = xl.rows();
  const auto k = xl.cols();
  const auto pixels = xm.cols();
  const int g = static_cast<int>(gt.instances.size());
  if (xm.rows() != n || pixels != static_cast<Eigen::Index>(gt.height) * gt.width) {
    throw Error(ErrorKind::DimensionMismatch, "criterion: mask logits do not match the frame");
  }
  const int no_object = static_cast<int>(k) - 1;

  const Mat probs = softmax_rows_value(xl);
  const Mat soft = logistic(xm);
  Mat targets(g, pixels);
  for (int j = 0; j < g; ++j) {
    const auto bits = gt.instances[j].mask.bits();
    for (Eigen::Index p = 0; p < pixels; ++p) targets(j, p) = bits[static_cast<std::size_t>(p)];
  }
  const Mat inter = soft * targets.transpose();       // n x g
  const Mat logit_dot = xm * targets.transpose();     // n x g
  const Eigen::VectorXd soft_sum = soft.rowwise().sum();
  const Eigen::VectorXd target_sum = targets.rowwise().sum();
  Eigen::VectorXd sp_sum(n);
  for (Eigen::Index q = 0; q < n; ++q) {
    double s = 0.0;
    for (Eigen::Index p = 0; p < pixels; ++p) s += softplus(xm(q, p));
    sp_sum(q) = s;
  }
  auto bce = [&](Eigen::Index q, int j) { return (sp_sum(q) - logit_dot(q, j)) / pixels; };
  auto dice = [&](Eigen::Index q, int j) {
    return 1.0 - (2.0 * inter(q, j) + 1.0) / (soft_sum(q) + target_sum(j) + 1.0);
  };

  Assignment assignment;
  if (replay) {
    assignment = *replay;
  } else if (g > 0) {
    CostMatrix cost(static_cast<int>(n), g);
    for (Eigen::Index q = 0; q < n; ++q) {
      for (int j = 0; j < g; ++j) {
        cost(static_cast<int>(q), j) = w.w_cls * -probs(q, gt.instances[j].cls - 1) +
                                       w.w_bce * bce(q, j) + w.w_dice * dice(q, j);
      }
    }
    assignment = hungarian(cost);
  }
  if (record) *record = assignment;

  std::vector<int> target_class(static_cast<std::size_t>(n), no_object);
  std::vector<double> weight(static_cast<std::size_t>(n), w.no_object_weight);
  for (const auto& m : assignment) {
    target_class[m.row] = gt.instances[m.col].cls - 1;
    weight[m.row] = 1.0;
  }
  double weight_sum = 0.0, class_loss = 0.0;
  for (Eigen::Index q = 0; q < n; ++q) {
    weight_sum += weight[q];
    class_loss -= weight[q] * std::log(std::max(probs(q, target_class[q]), 1e-300));
  }
  class_loss = weight_sum > 0 ? class_loss / weight_sum : 0.0;
  double bce_loss = 0.0, dice_loss = 0.0;
  const double matched = static_cast<double>(assignment.size());
  for (const auto& m : assignment) {
    bce_loss += bce(m.row, m.col);
    dice_loss += dice(m.row, m.col);
  }
  if (matched > 0) {
    bce_loss /= matched;
    dice_loss /= matched;
  }
  Mat out(1, 1);
  out(0, 0) = w.w_cls * class_loss + w.w_bce * bce_loss + w.w_dice * dice_loss;

  ag::Tape& tape = *class_logits.tape;
  return tape.record(
      std::move(out), {class_logits, mask_logits},
      [class_logits, mask_logits, w, probs, soft, targets, inter, soft_sum, target_sum, assignment,
       target_class, weight, weight_sum, matched, pixels](ag::Tape& t, int self) {
        const double g0 = t.grad(self)(0, 0);
        if (t.needs_grad(class_logits.id) && weight_sum > 0) {
          Mat d = probs;
          for (Eigen::Index q = 0; q < d.rows(); ++q) {
            d(q, target_class[q]) -= 1.0;
            d.row(q) *= g0 * w.w_cls * weight[q] / weight_sum;
          }
          t.accumulate(class_logits.id, d);
        }
        if (t.needs_grad(mask_logits.id) && matched > 0) {
          Mat& dm = t.grad(mask_logits.id);
          for (const auto& m : assignment) {
            const double denom = soft_sum(m.row) + target_sum(m.col) + 1.0;
            const double numer = 2.0 * inter(m.row, m.col) + 1.0;
            for (Eigen::Index p = 0; p < pixels; ++p) {
              const double s = soft(m.row, p);
              const double tp = targets(m.col, p);
              const double d_bce = (s - tp) / static_cast<double>(pixels);
              const double d_dice_ds = -(2.0 * tp * denom - numer) / (denom * denom);
              dm(m.row, p) +=
                  g0 / matched * (w.w_bce * d_bce + w.w_dice * d_dice_ds * s * (1.0 - s));
            }
          }
        }
      });
}

AdamW::AdamW(ag::ParameterStore& store, AdamWConfig cfg) : store_(store), cfg_(cfg) {
  for (const auto& p : store_.params()) {
    m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
  }
}

void AdamW::step() {
  ++t_;
  double scale = 1.0;
  if (cfg_.max_grad_norm > 0) {
    double sq = 0.0;
    for (const auto& p : store_.params()) sq += p->grad.squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm > cfg_.max_grad_norm) scale = cfg_.max_grad_norm / norm;
  }
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  auto& params = store_.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    const Mat g = p.grad * scale;
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    p.value *= 1.0 - cfg_.lr * cfg_.weight_decay;
    p.value.array() -= cfg_.lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.eps);
  }
}

TrainResult train_toy(ToyModel& model, const std::vector<Frame>& frames, const TrainConfig& cfg) {
  if (frames.empty()) throw Error(ErrorKind::MissingInput, "training set is empty");
  AdamW opt(model.params(), cfg.optim);
  std::mt19937_64 rng(cfg.shuffle_seed);
  std::vector<std::size_t> order(frames.size());
  std::iota(order.begin(), order.end(), 0);
  TrainResult result;
  const int drop_epoch = static_cast<int>(std::lround(cfg.lr_drop_at * cfg.epochs));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (epoch == drop_epoch && cfg.lr_drop_at < 1.0) opt.set_lr(cfg.optim.lr * 0.1);
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    model.params().zero_grad();
    int in_batch = 0;
    for (std::size_t i = 0; i < order.size(); ++i) {
      const Frame& f = frames[order[i]];
      ag::Tape tape;
      Var loss = model.loss(tape, f.image, f.annotation);
      const double value = loss.value()(0, 0);
      if (!std::isfinite(value)) {
        throw Error(ErrorKind::DivergenceDetected, "training loss became non-finite");
      }
      total += value;
      tape.backward(loss);
      if (++in_batch == cfg.batch_size || i + 1 == order.size()) {
        if (in_batch > 1) {
          for (auto& p : model.params().params()) p->grad /= static_cast<double>(in_batch);
        }
        opt.step();
        model.params().zero_grad();
        in_batch = 0;
      }
    }
    result.loss_curve.push_back(total / static_cast<double>(frames.size()));
    if (cfg.on_epoch) cfg.on_epoch(epoch, result.loss_curve.back());
  }
  return result;
}

GradCheckResult grad_check(ag::ParameterStore& store,
                           const std::function<ag::Var(ag::Tape&)>& loss_fn, double eps,
                           int samples, std::uint64_t seed) {
  if (eps <= 0) throw Error(ErrorKind::ConfigInvalid, "grad_check step must be positive");
  store.zero_grad();
  {
    ag::Tape tape;
    Var loss = loss_fn(tape);
    tape.backward(loss);
  }
  std::vector<std::pair<std::size_t, Eigen::Index>> all;
  auto& params = store.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (Eigen::Index j = 0; j < params[i]->value.size(); ++j) all.emplace_back(i, j);
  }
  std::mt19937_64 rng(seed);
  std::shuffle(all.begin(), all.end(), rng);
  if (static_cast<int>(all.size()) > samples) all.resize(static_cast<std::size_t>(samples));

  auto eval = [&] {
    ag::Tape tape(false);
    return loss_fn(tape).value()(0, 0);
  };
  GradCheckResult result;
  for (const auto& [i, j] : all) {
    double& x = params[i]->value.data()[j];
    const double analytic = params[i]->grad.data()[j];
    const double saved = x;
    x = saved + eps;
    const double up = eval();
    x = saved - eps;
    const double down = eval();
    x = saved;
    const double numeric = (up - down) / (2.0 * eps);
    if (!std::isfinite(analytic) || !std::isfinite(numeric)) {
      throw Error(ErrorKind::NonFiniteGradient, "non-finite gradient in grad_check");
    }
    const double rel = std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
    result.max_rel_error = std::max(result.max_rel_error, rel);
    ++result.checked;
  }
  store.zero_grad();
  return result;
}

}  // namespace matis
