#include "matis/synth.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <string>

#include "matis/error.hpp"

namespace matis {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return splitmix64(a ^ splitmix64(b)); }

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(gen_); }
  int randint(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(gen_); }
  double normal(double mean, double sd) { return std::normal_distribution<double>(mean, sd)(gen_); }
  std::uint64_t next() { return gen_(); }
  int categorical(const std::vector<double>& w) {
    double total = 0.0;
    for (double x : w) total += x;
    double u = uniform(0.0, total);
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (w[i] <= 0) continue;
      if (u < w[i]) return static_cast<int>(i);
      u -= w[i];
    }
    for (std::size_t i = w.size(); i-- > 0;) {
      if (w[i] > 0) return static_cast<int>(i);
    }
    return -1;
  }

 private:
  std::mt19937_64 gen_;
};

enum class Family { Ellipse, Rectangle, Disk, Diamond, Bar, Square };

struct Appearance {
  float r, g, b;
};

constexpr Appearance kAmbiguousColour{0.62f, 0.62f, 0.66f};

// pair members share the family of the first member
ClassId family_class(const SynthConfig& cfg, ClassId cls) {
  for (const auto& [a, b] : cfg.ambiguous_pairs) {
    if (cls == b) return a;
  }
  return cls;
}

Family family_of(const SynthConfig& cfg, ClassId cls) {
  static constexpr Family kFamilies[] = {Family::Ellipse, Family::Rectangle, Family::Bar,
                                         Family::Disk,    Family::Diamond,   Family::Bar,
                                         Family::Square};
  const ClassId base = family_class(cfg, cls);
  return kFamilies[(base - 1) % 7];
}

Appearance class_colour(ClassId cls) {
  static constexpr Appearance kPalette[] = {
      {0.90f, 0.20f, 0.20f}, {0.20f, 0.80f, 0.25f}, {0.25f, 0.35f, 0.95f}, {0.92f, 0.85f, 0.15f},
      {0.85f, 0.25f, 0.85f}, {0.15f, 0.85f, 0.85f}, {0.95f, 0.55f, 0.10f},
  };
  if (cls >= 1 && cls <= 7) return kPalette[cls - 1];
  // beyond the palette: spread hues
  const double h = std::fmod(0.13 * cls, 1.0) * 6.0;
  const double x = 1.0 - std::abs(std::fmod(h, 2.0) - 1.0);
  const int sector = static_cast<int>(h);
  double r = 0, g = 0, b = 0;
  switch (sector) {
    case 0: r = 1, g = x; break;
    case 1: r = x, g = 1; break;
    case 2: g = 1, b = x; break;
    case 3: g = x, b = 1; break;
    case 4: r = x, b = 1; break;
    default: r = 1, b = x; break;
  }
  return {static_cast<float>(0.2 + 0.7 * r), static_cast<float>(0.2 + 0.7 * g),
          static_cast<float>(0.2 + 0.7 * b)};
}

bool is_pair_member(const SynthConfig& cfg, ClassId cls) {
  return std::any_of(cfg.ambiguous_pairs.begin(), cfg.ambiguous_pairs.end(),
                     [&](const auto& p) { return p.first == cls || p.second == cls; });
}

ClassId pair_partner(const SynthConfig& cfg, ClassId cls) {
  for (const auto& [a, b] : cfg.ambiguous_pairs) {
    if (a == cls) return b;
    if (b == cls) return a;
  }
  return 0;
}

struct ShapeGeometry {
  Family family;
  double cx, cy, angle, a, b;
};

void sample_size_64(Family f, Rng& rng, double& a, double& b) {
  switch (f) {
    case Family::Ellipse: a = rng.uniform(7, 10); b = rng.uniform(4, 6); break;
    case Family::Rectangle: a = rng.uniform(7, 9); b = rng.uniform(3.5, 5); break;
    case Family::Disk: a = b = rng.uniform(5, 7); break;
    case Family::Diamond: a = rng.uniform(7, 9); b = rng.uniform(5, 7); break;
    case Family::Bar: a = rng.uniform(10, 13); b = rng.uniform(2.5, 3.5); break;
    case Family::Square: a = b = rng.uniform(4.5, 6); break;
  }
}

// Sizes are in pixels of a 64x64 frame; smaller frames shrink them.
double size_scale(const SynthConfig& cfg) {
  return std::max(0.5, std::min(cfg.height, cfg.width) / 64.0);
}

void sample_size(const SynthConfig& cfg, Family f, Rng& rng, double& a, double& b) {
  sample_size_64(f, rng, a, b);
  const double k = size_scale(cfg);
  a *= k;
  b *= k;
}

bool inside(const ShapeGeometry& s, double x, double y) {
  const double dx = x - s.cx, dy = y - s.cy;
  const double c = std::cos(s.angle), sn = std::sin(s.angle);
  const double u = dx * c + dy * sn;
  const double v = -dx * sn + dy * c;
  switch (s.family) {
    case Family::Ellipse: return (u * u) / (s.a * s.a) + (v * v) / (s.b * s.b) <= 1.0;
    case Family::Disk: return u * u + v * v <= s.a * s.a;
    case Family::Diamond: return std::abs(u) / s.a + std::abs(v) / s.b <= 1.0;
    case Family::Rectangle:
    case Family::Bar:
    case Family::Square: return std::abs(u) <= s.a && std::abs(v) <= s.b;
  }
  return false;
}

BinaryMask rasterize(const ShapeGeometry& s, int h, int w) {
  BinaryMask m(h, w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (inside(s, c + 0.5, r + 0.5)) m.set(r, c);
    }
  }
  return m;
}

// true when mask touches occupied pixels or their 4-neighbourhood
bool collides(const BinaryMask& mask, const BinaryMask& occupied) {
  const int h = mask.height(), w = mask.width();
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (!mask.at(r, c)) continue;
      if (occupied.at(r, c)) return true;
      if (r > 0 && occupied.at(r - 1, c)) return true;
      if (r + 1 < h && occupied.at(r + 1, c)) return true;
      if (c > 0 && occupied.at(r, c - 1)) return true;
      if (c + 1 < w && occupied.at(r, c + 1)) return true;
    }
  }
  return false;
}

void render_background(Image& img, Rng& rng) {
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      const double base = 0.10 + 0.05 * std::sin(0.15 * r + 0.1 * c);
      for (int ch = 0; ch < 3; ++ch) {
        img.at(r, c, ch) = static_cast<float>(std::clamp(base + rng.uniform(-0.04, 0.04), 0.0, 1.0));
      }
    }
  }
}

void render_instance(Image& img, const BinaryMask& mask, const ShapeGeometry& g, Appearance col,
                     std::uint64_t texture_seed) {
  Rng rng(texture_seed);
  const double c = std::cos(g.angle), s = std::sin(g.angle);
  for (int r = 0; r < img.height; ++r) {
    for (int x = 0; x < img.width; ++x) {
      if (!mask.at(r, x)) continue;
      const double u = (x + 0.5 - g.cx) * c + (r + 0.5 - g.cy) * s;
      const double stripe = 0.85 + 0.15 * std::sin(1.3 * u);
      const double jitter = rng.uniform(-0.03, 0.03);
      const float rgb[3] = {col.r, col.g, col.b};
      for (int ch = 0; ch < 3; ++ch) {
        img.at(r, x, ch) = static_cast<float>(std::clamp(rgb[ch] * stripe + jitter, 0.0, 1.0));
      }
    }
  }
}

// Sequential class draw with per-frame caps; excluded classes get zero mass.
std::vector<ClassId> draw_classes(const SynthConfig& cfg, const std::vector<double>& weights,
                                  Rng& rng, bool exclusive_pairs) {
  const int n = rng.randint(cfg.min_instances, cfg.max_instances);
  std::vector<int> counts(cfg.num_classes, 0);
  std::vector<ClassId> out;
  for (int i = 0; i < n; ++i) {
    std::vector<double> w(weights);
    for (int c = 1; c <= cfg.num_classes; ++c) {
      if (counts[c - 1] >= class_cap(cfg, c)) w[c - 1] = 0.0;
      if (exclusive_pairs) {
        const ClassId partner = pair_partner(cfg, c);
        if (partner && counts[partner - 1] > 0) w[c - 1] = 0.0;
      }
    }
    const int idx = rng.categorical(w);
    if (idx < 0) break;
    ++counts[idx];
    out.push_back(idx + 1);
  }
  return out;
}

}  // namespace

int class_cap(const SynthConfig& cfg, ClassId cls) {
  return cfg.multi_instance.at(static_cast<std::size_t>(cls - 1)) ? 2 : 1;
}

void SynthConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorKind::ConfigInvalid, what); };
  if (height < 16 || width < 16) fail("dims must be at least 16x16");
  if (num_classes < 1 || num_classes > 16) fail("class count must be in [1,16]");
  if (min_instances < 1 || max_instances < min_instances || max_instances > 8) {
    fail("instances per frame must satisfy 1 <= min <= max <= 8");
  }
  if (static_cast<int>(multi_instance.size()) != num_classes ||
      static_cast<int>(class_weights.size()) != num_classes ||
      static_cast<int>(class_names.size()) != num_classes) {
    fail("class tables must have num_classes entries");
  }
  double sum = 0.0;
  for (double w : class_weights) {
    if (w < 0) fail("class weights must be non-negative");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-6) fail("class weights must sum to 1");
  for (const auto& [a, b] : ambiguous_pairs) {
    if (a < 1 || b < 1 || a > num_classes || b > num_classes || a == b) fail("invalid ambiguous pair");
  }
  if (ambiguity_fraction < 0 || ambiguity_fraction > 1) fail("ambiguity fraction must be in [0,1]");
  if (ambiguity_period < 1 || video_length < 1) fail("video length and period must be positive");
  if (noise.num_queries < 1) fail("proposal count must be positive");
}

void to_json(nlohmann::json& j, const SynthConfig& cfg) {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& [a, b] : cfg.ambiguous_pairs) pairs.push_back({a, b});
  j = nlohmann::json{
      {"seed", cfg.seed},
      {"height", cfg.height},
      {"width", cfg.width},
      {"num_classes", cfg.num_classes},
      {"min_instances", cfg.min_instances},
      {"max_instances", cfg.max_instances},
      {"class_names", cfg.class_names},
      {"multi_instance", cfg.multi_instance},
      {"class_weights", cfg.class_weights},
      {"video_length", cfg.video_length},
      {"motion_step", cfg.motion_step},
      {"ambiguous_pairs", pairs},
      {"ambiguity_fraction", cfg.ambiguity_fraction},
      {"ambiguity_period", cfg.ambiguity_period},
      {"noise",
       {{"num_queries", cfg.noise.num_queries},
        {"max_shift", cfg.noise.max_shift},
        {"wrong_class_rate", cfg.noise.wrong_class_rate},
        {"clutter", cfg.noise.clutter},
        {"score_noise", cfg.noise.score_noise},
        {"noise", cfg.noise.noise}}},
  };
}

void from_json(const nlohmann::json& j, SynthConfig& cfg) {
  cfg = SynthConfig{};
  try {
    cfg.seed = j.value("seed", cfg.seed);
    cfg.height = j.value("height", cfg.height);
    cfg.width = j.value("width", cfg.width);
    cfg.num_classes = j.value("num_classes", cfg.num_classes);
    cfg.min_instances = j.value("min_instances", cfg.min_instances);
    cfg.max_instances = j.value("max_instances", cfg.max_instances);
    cfg.class_names = j.value("class_names", cfg.class_names);
    cfg.multi_instance = j.value("multi_instance", cfg.multi_instance);
    cfg.class_weights = j.value("class_weights", cfg.class_weights);
    cfg.video_length = j.value("video_length", cfg.video_length);
    cfg.motion_step = j.value("motion_step", cfg.motion_step);
    if (j.contains("ambiguous_pairs")) {
      cfg.ambiguous_pairs.clear();
      for (const auto& p : j.at("ambiguous_pairs")) cfg.ambiguous_pairs.emplace_back(p.at(0), p.at(1));
    }
    cfg.ambiguity_fraction = j.value("ambiguity_fraction", cfg.ambiguity_fraction);
    cfg.ambiguity_period = j.value("ambiguity_period", cfg.ambiguity_period);
    if (j.contains("noise")) {
      const auto& n = j.at("noise");
      cfg.noise.num_queries = n.value("num_queries", cfg.noise.num_queries);
      cfg.noise.max_shift = n.value("max_shift", cfg.noise.max_shift);
      cfg.noise.wrong_class_rate = n.value("wrong_class_rate", cfg.noise.wrong_class_rate);
      cfg.noise.clutter = n.value("clutter", cfg.noise.clutter);
      cfg.noise.score_noise = n.value("score_noise", cfg.noise.score_noise);
      cfg.noise.noise = n.value("noise", cfg.noise.noise);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ConfigInvalid, std::string("synth config: ") + e.what());
  }
  // num_classes changes resize unspecified tables
  if (!j.contains("class_names") && static_cast<int>(cfg.class_names.size()) != cfg.num_classes) {
    cfg.class_names.clear();
    for (int c = 1; c <= cfg.num_classes; ++c) cfg.class_names.push_back("C" + std::to_string(c));
  }
  if (!j.contains("multi_instance")) cfg.multi_instance.resize(std::max(cfg.num_classes, 0), false);
  if (!j.contains("class_weights") && static_cast<int>(cfg.class_weights.size()) != cfg.num_classes &&
      cfg.num_classes > 0) {
    cfg.class_weights.assign(cfg.num_classes, 1.0 / cfg.num_classes);
  }
  cfg.validate();
}

std::vector<double> instance_class_marginals(const SynthConfig& cfg,
                                             const std::vector<double>& sampling_weights) {
  const int C = cfg.num_classes;
  std::vector<double> expected(C, 0.0);
  double expected_total = 0.0;
  std::vector<int> counts(C, 0);
  // enumerate the capped sequential sampler exactly
  std::function<void(int, double)> walk = [&](int remaining, double prob) {
    if (remaining == 0 || prob == 0.0) return;
    double mass = 0.0;
    for (int c = 0; c < C; ++c) {
      if (counts[c] < class_cap(cfg, c + 1)) mass += sampling_weights[c];
    }
    if (mass <= 0.0) return;
    for (int c = 0; c < C; ++c) {
      if (counts[c] >= class_cap(cfg, c + 1) || sampling_weights[c] <= 0.0) continue;
      const double p = prob * sampling_weights[c] / mass;
      expected[c] += p;
      expected_total += p;
      ++counts[c];
      walk(remaining - 1, p);
      --counts[c];
    }
  };
  const int span = cfg.max_instances - cfg.min_instances + 1;
  for (int n = cfg.min_instances; n <= cfg.max_instances; ++n) walk(n, 1.0 / span);
  for (double& e : expected) e /= expected_total;
  return expected;
}

std::vector<double> calibrated_sampling_weights(const SynthConfig& cfg) {
  std::vector<double> w = cfg.class_weights;
  for (int iter = 0; iter < 200; ++iter) {
    const auto m = instance_class_marginals(cfg, w);
    double total = 0.0;
    for (int c = 0; c < cfg.num_classes; ++c) {
      if (m[c] > 0) w[c] *= cfg.class_weights[c] / m[c];
      total += w[c];
    }
    for (double& x : w) x /= total;
  }
  return w;
}

double class_confidence(const SynthConfig& cfg, ClassId cls) {
  const double wmax = *std::max_element(cfg.class_weights.begin(), cfg.class_weights.end());
  const double ratio = cfg.class_weights.at(static_cast<std::size_t>(cls - 1)) / wmax;
  return 0.35 + 0.55 * ratio;
}

Frame gen_frame(const SynthConfig& cfg, std::uint64_t frame_seed) {
  cfg.validate();
  Rng rng(mix(cfg.seed, frame_seed));
  static thread_local std::pair<std::string, std::vector<double>> cache;
  const std::string key = nlohmann::json(cfg).dump();
  if (cache.first != key) cache = {key, calibrated_sampling_weights(cfg)};
  const auto classes = draw_classes(cfg, cache.second, rng, false);

  Frame frame;
  frame.annotation.frame_id = "f" + std::to_string(frame_seed);
  frame.annotation.height = cfg.height;
  frame.annotation.width = cfg.width;
  // a layout that blocks a later instance is redrawn from scratch
  constexpr int kLayouts = 20;
  for (int layout = 0; layout < kLayouts; ++layout) {
    frame.image = Image(cfg.height, cfg.width);
    frame.annotation.instances.clear();
    render_background(frame.image, rng);
    BinaryMask occupied(cfg.height, cfg.width);
    ClassId failed = 0;
    for (ClassId cls : classes) {
      bool placed = false;
      for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
        ShapeGeometry g{family_of(cfg, cls), 0, 0, rng.uniform(0, std::numbers::pi), 0, 0};
        sample_size(cfg, g.family, rng, g.a, g.b);
        const double margin = std::min(g.a, 0.5 * std::min(cfg.height, cfg.width) - 1.0);
        g.cx = rng.uniform(margin, cfg.width - margin);
        g.cy = rng.uniform(margin, cfg.height - margin);
        BinaryMask m = rasterize(g, cfg.height, cfg.width);
        if (m.area() < 8 || collides(m, occupied)) continue;
        occupied |= m;
        render_instance(frame.image, m, g, class_colour(cls), rng.next());
        frame.annotation.instances.push_back({cls, std::move(m)});
        placed = true;
      }
      if (!placed) {
        failed = cls;
        break;
      }
    }
    if (failed == 0) return frame;
    if (layout + 1 == kLayouts) {
      throw Error(ErrorKind::PlacementFailure,
                  "could not place instance of class " + std::to_string(failed) + " in frame " +
                      frame.annotation.frame_id);
    }
  }
  return frame;
}

bool is_ambiguous_frame(const SynthConfig& cfg, int t, int phase) {
  const int run =
      static_cast<int>(std::lround(cfg.ambiguity_fraction * cfg.ambiguity_period));
  return ((t + phase) % cfg.ambiguity_period) < run;
}

namespace {

ShapeGeometry video_geometry(const SynthConfig& cfg, const VideoInstance& inst, int t) {
  const double period = 16.0;
  const double s = inst.amplitude * std::sin(2.0 * std::numbers::pi * t / period + inst.phase);
  return ShapeGeometry{family_of(cfg, inst.cls), inst.x0 + inst.dir_x * s,
                       inst.y0 + inst.dir_y * s, inst.angle, inst.size_a, inst.size_b};
}

}  // namespace

std::vector<VideoInstance> sample_video_instances(const SynthConfig& cfg,
                                                  std::uint64_t video_seed) {
  Rng rng(mix(cfg.seed ^ 0x5bd1e995ULL, video_seed));
  const auto classes = draw_classes(cfg, cfg.class_weights, rng, true);
  // a layout that blocks a later instance is redrawn from scratch
  constexpr int kLayouts = 20;
  for (int layout = 0; layout < kLayouts; ++layout) {
    std::vector<VideoInstance> out;
    std::vector<BinaryMask> occupied(cfg.video_length, BinaryMask(cfg.height, cfg.width));
    ClassId failed = 0;
    for (ClassId cls : classes) {
      bool placed = false;
      for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
        VideoInstance inst;
        inst.cls = cls;
        inst.angle = rng.uniform(0, std::numbers::pi);
        sample_size(cfg, family_of(cfg, cls), rng, inst.size_a, inst.size_b);
        inst.amplitude = 5.0 * cfg.motion_step * size_scale(cfg);
        inst.phase = rng.uniform(0, 2 * std::numbers::pi);
        bool horizontal = true;
        bool paired = false;
        for (const auto& [a, b] : cfg.ambiguous_pairs) {
          if (cls == a) paired = true, horizontal = true;
          if (cls == b) paired = true, horizontal = false;
        }
        if (paired) {
          inst.dir_x = horizontal ? 1.0 : 0.0;
          inst.dir_y = horizontal ? 0.0 : 1.0;
        } else {
          const double theta = rng.uniform(0, 2 * std::numbers::pi);
          inst.dir_x = std::cos(theta);
          inst.dir_y = std::sin(theta);
          inst.amplitude *= 0.4;
        }
        const double margin = std::min(inst.size_a + inst.amplitude,
                                       0.5 * std::min(cfg.height, cfg.width) - 1.0);
        inst.x0 = rng.uniform(margin, cfg.width - margin);
        inst.y0 = rng.uniform(margin, cfg.height - margin);
        inst.texture_seed = rng.next();

        std::vector<BinaryMask> masks;
        bool ok = true;
        for (int t = 0; t < cfg.video_length && ok; ++t) {
          masks.push_back(rasterize(video_geometry(cfg, inst, t), cfg.height, cfg.width));
          ok = masks.back().area() >= 8 && !collides(masks.back(), occupied[t]);
        }
        if (!ok) continue;
        for (int t = 0; t < cfg.video_length; ++t) occupied[t] |= masks[t];
        out.push_back(inst);
        placed = true;
      }
      if (!placed) {
        failed = cls;
        break;
      }
    }
    if (failed == 0) return out;
    if (layout + 1 == kLayouts) {
      throw Error(ErrorKind::PlacementFailure,
                  "could not place moving instance of class " + std::to_string(failed));
    }
  }
  return {};
}

Frame render_video_frame(const SynthConfig& cfg, const std::vector<VideoInstance>& instances,
                         int t, bool ambiguous, std::uint64_t noise_seed,
                         const std::string& frame_id) {
  Frame frame;
  frame.annotation.frame_id = frame_id;
  frame.annotation.height = cfg.height;
  frame.annotation.width = cfg.width;
  frame.image = Image(cfg.height, cfg.width);
  Rng rng(noise_seed);
  render_background(frame.image, rng);
  for (const auto& inst : instances) {
    const ShapeGeometry g = video_geometry(cfg, inst, t);
    BinaryMask m = rasterize(g, cfg.height, cfg.width);
    const Appearance col =
        ambiguous && is_pair_member(cfg, inst.cls) ? kAmbiguousColour : class_colour(inst.cls);
    render_instance(frame.image, m, g, col, mix(inst.texture_seed, static_cast<std::uint64_t>(t)));
    frame.annotation.instances.push_back({inst.cls, std::move(m)});
  }
  return frame;
}

Video gen_video(const SynthConfig& cfg, std::uint64_t video_seed) {
  cfg.validate();
  Video video;
  video.video_id = "v" + std::to_string(video_seed);
  const auto instances = sample_video_instances(cfg, video_seed);
  Rng rng(mix(cfg.seed ^ 0x2545f491ULL, video_seed));
  const int phase = rng.randint(0, cfg.ambiguity_period - 1);
  for (int t = 0; t < cfg.video_length; ++t) {
    const bool amb = is_ambiguous_frame(cfg, t, phase);
    video.ambiguous.push_back(amb);
    video.frames.push_back(render_video_frame(cfg, instances, t, amb, rng.next(),
                                              video.video_id + "_t" + std::to_string(t)));
  }
  return video;
}

namespace {

BinaryMask shift_mask(const BinaryMask& m, int dy, int dx) {
  BinaryMask out(m.height(), m.width());
  for (int r = 0; r < m.height(); ++r) {
    for (int c = 0; c < m.width(); ++c) {
      const int sr = r - dy, sc = c - dx;
      if (sr >= 0 && sr < m.height() && sc >= 0 && sc < m.width() && m.at(sr, sc)) out.set(r, c);
    }
  }
  return out;
}

// one step of 4-neighbour dilation (grow) or erosion (shrink)
BinaryMask morph(const BinaryMask& m, bool grow) {
  BinaryMask out(m.height(), m.width());
  for (int r = 0; r < m.height(); ++r) {
    for (int c = 0; c < m.width(); ++c) {
      auto get = [&](int rr, int cc) {
        if (rr < 0 || rr >= m.height() || cc < 0 || cc >= m.width()) return false;
        return m.at(rr, cc) != 0;
      };
      const bool n[5] = {get(r, c), get(r - 1, c), get(r + 1, c), get(r, c - 1), get(r, c + 1)};
      const bool v = grow ? (n[0] || n[1] || n[2] || n[3] || n[4])
                          : (n[0] && n[1] && n[2] && n[3] && n[4]);
      if (v) out.set(r, c);
    }
  }
  return out;
}

BinaryMask jitter(const BinaryMask& m, int max_shift, double strength, Rng& rng) {
  if (strength <= 0.0) return m;
  const int s = static_cast<int>(std::lround(max_shift * strength));
  BinaryMask out = shift_mask(m, rng.randint(-s, s), rng.randint(-s, s));
  const double u = rng.uniform(0, 1);
  if (u < 0.3 * strength) {
    BinaryMask eroded = morph(out, false);
    if (!eroded.empty()) out = std::move(eroded);
  } else if (u < 0.6 * strength) {
    out = morph(out, true);
  }
  return out;
}

SoftMask soften(const BinaryMask& m, double strength, Rng& rng) {
  SoftMask s(m.height(), m.width());
  const auto bits = m.bits();
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (strength <= 0.0) {
      s.probs[i] = bits[i];
    } else {
      s.probs[i] = bits[i] ? rng.uniform(0.7, 0.98) : rng.uniform(0.0, 0.25);
    }
  }
  return s;
}

// score s on cls, no-object mass below s, remainder spread under s
std::vector<double> class_vector(int num_classes, ClassId cls, double score, Rng& rng) {
  std::vector<double> p(num_classes + 1, 0.0);
  p[cls - 1] = score;
  const double rest = 1.0 - score;
  const double cap = 0.95 * score;
  double no_obj = std::min(rest * rng.uniform(0.3, 0.7), cap);
  double remaining = rest - no_obj;
  const double per_other_cap = 0.95 * score;
  std::vector<double> share(num_classes, 0.0);
  double share_sum = 0.0;
  for (int c = 0; c < num_classes; ++c) {
    if (c == cls - 1) continue;
    share[c] = rng.uniform(0.5, 1.5);
    share_sum += share[c];
  }
  for (int c = 0; c < num_classes; ++c) {
    if (c == cls - 1 || share_sum == 0.0) continue;
    p[c] = std::min(remaining * share[c] / share_sum, per_other_cap);
  }
  double used = score;
  for (int c = 0; c < num_classes; ++c) {
    if (c != cls - 1) used += p[c];
  }
  p[num_classes] = 1.0 - used;  // absorbs any capped excess
  return p;
}

}  // namespace

ProposalSet gen_noisy_proposals(const FrameAnnotation& gt, const SynthConfig& cfg,
                                std::uint64_t seed) {
  cfg.validate();
  const auto& nc = cfg.noise;
  Rng rng(mix(cfg.seed ^ 0x7f4a7c15ULL, seed));
  const int C = cfg.num_classes;
  ProposalSet set;
  set.frame_id = gt.frame_id;

  auto clamp_score = [](double s) { return std::clamp(s, 0.2, 0.99); };
  auto push = [&](std::vector<double> probs, SoftMask soft) {
    if (set.size() < nc.num_queries) set.proposals.emplace_back(std::move(probs), std::move(soft));
  };

  for (const auto& inst : gt.instances) {
    const double conf = class_confidence(cfg, inst.cls);
    const double s = clamp_score(conf + rng.normal(0.0, nc.score_noise));
    const BinaryMask primary = jitter(inst.mask, 1, 0.5 * nc.noise, rng);
    push(class_vector(C, inst.cls, s, rng), soften(primary, nc.noise, rng));
    const int extra = nc.noise > 0 ? rng.randint(0, 2) : 0;
    for (int e = 0; e < extra; ++e) {
      ClassId cls = inst.cls;
      double score = clamp_score(s * rng.uniform(0.6, 0.95));
      if (C > 1 && rng.uniform(0, 1) < nc.wrong_class_rate) {
        cls = rng.randint(1, C - 1);
        if (cls >= inst.cls) ++cls;
        score = clamp_score(class_confidence(cfg, cls) * rng.uniform(0.5, 0.85));
      }
      const BinaryMask copy = jitter(inst.mask, nc.max_shift, nc.noise, rng);
      push(class_vector(C, cls, score, rng), soften(copy, nc.noise, rng));
    }
  }

  // clutter: small blobs, low scores, random classes
  for (int k = 0; k < nc.clutter && nc.noise > 0; ++k) {
    const ClassId cls = rng.randint(1, C);
    const double score = std::clamp(class_confidence(cfg, cls) * rng.uniform(0.25, 0.6), 0.16, 0.99);
    BinaryMask blob(gt.height, gt.width);
    const int r0 = rng.randint(0, gt.height - 1), c0 = rng.randint(0, gt.width - 1);
    const int rad = rng.randint(2, 5);
    for (int r = std::max(0, r0 - rad); r < std::min(gt.height, r0 + rad + 1); ++r) {
      for (int c = std::max(0, c0 - rad); c < std::min(gt.width, c0 + rad + 1); ++c) {
        if ((r - r0) * (r - r0) + (c - c0) * (c - c0) <= rad * rad) blob.set(r, c);
      }
    }
    push(class_vector(C, cls, score, rng), soften(blob, nc.noise, rng));
  }

  // remaining queries confidently predict no-object
  while (set.size() < nc.num_queries) {
    std::vector<double> p(C + 1, 0.0);
    const double no_obj = rng.uniform(0.75, 0.97);
    double rest = 1.0 - no_obj;
    for (int c = 0; c < C; ++c) p[c] = rest / C;
    p[C] = no_obj;
    SoftMask soft(gt.height, gt.width);
    for (auto& v : soft.probs) v = nc.noise > 0 ? rng.uniform(0.0, 0.3) : 0.0;
    set.proposals.emplace_back(std::move(p), std::move(soft));
  }
  return set;
}

}  // namespace matis
