// matis: batch command-line driver for the two-stage segmentation pipeline.
#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "matis/error.hpp"
#include "matis/inference.hpp"
#include "matis/io.hpp"
#include "matis/kernels.hpp"
#include "matis/metrics.hpp"
#include "matis/model.hpp"
#include "matis/synth.hpp"
#include "matis/temporal.hpp"

using namespace matis;
using nlohmann::json;

namespace {

// Tracks files a command creates. Unless commit() is called they are
// removed on destruction, so a failed command leaves nothing half-written.
class Outputs {
 public:
  ~Outputs() {
    std::error_code ec;
    if (!committed_) {
      for (const auto& p : paths_) fs::remove_all(p, ec);
    }
    for (const auto& l : locks_) fs::remove(l, ec);
  }

  void add(const fs::path& p) {
    const fs::path lock = fs::path(p.string() + ".lock");
    if (lock.has_parent_path()) fs::create_directories(lock.parent_path());
    std::FILE* f = std::fopen(lock.c_str(), "wx");
    if (!f) throw Error(ErrorKind::ConfigInvalid, "output is locked by another run: " + p.string());
    std::fclose(f);
    locks_.push_back(lock);
    paths_.push_back(p);
    paths_.push_back(manifest_path_for(p));
    paths_.push_back(fs::path(p.string() + ".bin"));
    paths_.push_back(fs::path(p.string() + ".txt"));
  }
  void commit() { committed_ = true; }

 private:
  static fs::path manifest_path_for(const fs::path& p) { return fs::path(p.string() + ".manifest.json"); }
  std::vector<fs::path> paths_;
  std::vector<fs::path> locks_;
  bool committed_ = false;
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

struct Globals {
  std::optional<std::uint64_t> seed;
};

void finish(const std::string& command, const json& config, const std::vector<std::string>& inputs,
            const fs::path& output, std::uint64_t seed, const Stopwatch& clock) {
  RunManifest m;
  m.command = command;
  m.config = config;
  m.inputs = inputs;
  m.outputs = {output.string()};
  m.seed = seed;
  m.duration_s = clock.seconds();
  write_manifest(output, m);
}

ToyModel load_toy(const fs::path& path) {
  const auto header = read_checkpoint_header(path);
  if (header.kind != "toy") throw Error(ErrorKind::FormatError, path.string() + " is not a toy model checkpoint");
  ToyModel model(header.config.get<ToyModelConfig>());
  read_checkpoint_params(path, model.params());
  return model;
}

struct LoadedHead {
  TemporalConfig config;
  InferenceConfig select;
};

LoadedHead head_header(const fs::path& path) {
  const auto header = read_checkpoint_header(path);
  if (header.kind != "temporal") throw Error(ErrorKind::FormatError, path.string() + " is not a temporal checkpoint");
  return {header.config.at("temporal").get<TemporalConfig>(), header.config.at("select").get<InferenceConfig>()};
}

std::vector<std::string> class_names(const SynthConfig& cfg) { return cfg.class_names; }

std::vector<ProposalSet> proposal_sets(const std::vector<ProposalRecord>& records) {
  std::vector<ProposalSet> out;
  for (const auto& r : records) out.push_back(r.proposals);
  return out;
}

InferenceConfig selection_config(const std::string& config_path, const std::string& strategy,
                                 const SynthConfig& data_cfg) {
  InferenceConfig cfg = InferenceConfig::defaults(Strategy::Composed, data_cfg.multi_instance);
  if (!config_path.empty()) cfg = read_json(config_path).get<InferenceConfig>();
  if (!strategy.empty()) cfg.strategy = parse_strategy(strategy);
  cfg.validate();
  return cfg;
}

std::vector<FrameAnnotation> load_annotations(const std::string& data, const std::string& annotations) {
  if (!annotations.empty()) return read_annotations(annotations);
  if (data.empty()) throw Error(ErrorKind::MissingInput, "pass --data or --annotations");
  return read_dataset(data).annotations();
}

void write_report(const fs::path& out, const std::vector<std::pair<std::string, EvalReport>>& rows,
                  const std::vector<std::string>& names, const json& extra) {
  json j = extra;
  j["class_names"] = names;
  json jr = json::array();
  for (const auto& [name, r] : rows) {
    json e = r;
    e["name"] = name;
    jr.push_back(e);
  }
  j["rows"] = jr;
  write_text_atomic(out, j.dump(2) + "\n");
  const std::string table = format_table(rows, names);
  write_text_atomic(fs::path(out.string() + ".txt"), table);
  std::cout << table;
}

// --- commands ---------------------------------------------------------------

struct SynthArgs {
  std::string config, out, proposals;
  int frames = 200, videos = 0;
  std::optional<int> height, width, video_length;
  std::optional<double> ambiguity;
};

void cmd_synth(const SynthArgs& a, const Globals& g) {
  Stopwatch clock;
  SynthConfig cfg;
  if (!a.config.empty()) cfg = read_json(a.config).get<SynthConfig>();
  if (g.seed) cfg.seed = *g.seed;
  if (a.height) cfg.height = *a.height;
  if (a.width) cfg.width = *a.width;
  if (a.video_length) cfg.video_length = *a.video_length;
  if (a.ambiguity) cfg.ambiguity_fraction = *a.ambiguity;
  cfg.validate();
  if (a.frames < 0 || a.videos < 0) throw Error(ErrorKind::ConfigInvalid, "counts must be >= 0");

  Outputs outputs;
  outputs.add(a.out);
  if (!a.proposals.empty()) outputs.add(a.proposals);

  Dataset ds;
  ds.config = cfg;
  for (int i = 0; i < a.frames; ++i) ds.frames.push_back({gen_frame(cfg, static_cast<std::uint64_t>(i)), "", -1, false});
  for (int v = 0; v < a.videos; ++v) {
    Video video = gen_video(cfg, static_cast<std::uint64_t>(v));
    for (std::size_t t = 0; t < video.frames.size(); ++t) {
      ds.frames.push_back({std::move(video.frames[t]), video.video_id, static_cast<int>(t), video.ambiguous[t]});
    }
  }
  write_dataset(a.out, ds);
  json config = cfg;
  config["frames"] = a.frames;
  config["videos"] = a.videos;
  if (!a.proposals.empty()) {
    std::vector<ProposalRecord> records;
    for (const auto& r : ds.frames) {
      records.push_back({gen_noisy_proposals(r.frame.annotation, cfg, std::hash<std::string>{}(r.frame.annotation.frame_id)), {}});
    }
    write_proposals(a.proposals, records);
    finish("synth", config, {}, a.proposals, cfg.seed, clock);
  }
  finish("synth", config, {}, a.out, cfg.seed, clock);
  outputs.commit();
  std::cout << "wrote " << ds.frames.size() << " frames to " << a.out << "\n";
}

struct TrainArgs {
  std::string data, out, config;
  std::optional<int> epochs, n_queries;
  std::optional<double> lr;
};

void cmd_train(const TrainArgs& a, const Globals& g) {
  Stopwatch clock;
  const Dataset ds = read_dataset(a.data);
  ToyModelConfig mc;
  if (!a.config.empty()) mc = read_json(a.config).get<ToyModelConfig>();
  mc.num_classes = ds.config.num_classes;
  mc.height = ds.config.height;
  mc.width = ds.config.width;
  if (a.n_queries) mc.num_queries = *a.n_queries;
  if (g.seed) mc.seed = *g.seed;
  mc.validate();
  TrainConfig tc;
  tc.epochs = a.epochs.value_or(12);
  if (tc.epochs < 1) throw Error(ErrorKind::ConfigInvalid, "epochs must be >= 1");
  if (a.lr) tc.optim.lr = *a.lr;
  tc.shuffle_seed = mc.seed;
  tc.on_epoch = [](int e, double loss) { std::printf("epoch %3d  loss %.6f\n", e, loss); std::fflush(stdout); };

  Outputs outputs;
  outputs.add(a.out);
  std::vector<Frame> frames;
  for (const auto& r : ds.frames) frames.push_back(r.frame);
  ToyModel model(mc);
  const TrainResult result = train_toy(model, frames, tc);
  write_checkpoint(a.out, {"toy", mc}, model.params());
  json config{{"model", mc}, {"epochs", tc.epochs}, {"lr", tc.optim.lr}, {"loss_curve", result.loss_curve}};
  finish("train", config, {a.data}, a.out, mc.seed, clock);
  outputs.commit();
}

struct InferArgs {
  std::string model, data, out;
};

void cmd_infer(const InferArgs& a, const Globals&) {
  Stopwatch clock;
  const ToyModel model = load_toy(a.model);
  const Dataset ds = read_dataset(a.data);
  Outputs outputs;
  outputs.add(a.out);
  std::vector<ProposalRecord> records(ds.frames.size());
  const int n = static_cast<int>(ds.frames.size());
#pragma omp parallel for schedule(dynamic) num_threads(parallel_threads())
  for (int i = 0; i < n; ++i) {
    const auto& f = ds.frames[static_cast<std::size_t>(i)].frame;
    FrameOutput fo = model.infer(f.image, f.annotation.frame_id);
    records[static_cast<std::size_t>(i)] = {std::move(fo.proposals), std::move(fo.segment_embeddings)};
  }
  write_proposals(a.out, records);
  finish("infer", json::object(), {a.model, a.data}, a.out, model.config().seed, clock);
  outputs.commit();
}

struct SelectArgs {
  std::string proposals, data, config, strategy, out;
};

void cmd_select(const SelectArgs& a, const Globals&) {
  Stopwatch clock;
  SynthConfig data_cfg;
  if (!a.data.empty()) data_cfg = read_dataset(a.data).config;
  const InferenceConfig cfg = selection_config(a.config, a.strategy, data_cfg);
  const auto records = read_proposals(a.proposals);
  Outputs outputs;
  outputs.add(a.out);
  std::vector<FrameRegions> out;
  for (const auto& r : records) out.push_back({r.proposals.frame_id, select(r.proposals, cfg)});
  write_regions(a.out, out);
  finish("select", cfg, {a.proposals}, a.out, 0, clock);
  outputs.commit();
}

struct EvalArgs {
  std::string regions, data, annotations, out;
};

void cmd_eval(const EvalArgs& a, const Globals&) {
  Stopwatch clock;
  const auto gts = load_annotations(a.data, a.annotations);
  SynthConfig data_cfg;
  if (!a.data.empty()) data_cfg = read_dataset(a.data).config;
  const auto preds = read_regions(a.regions);
  Outputs outputs;
  outputs.add(a.out);
  const EvalReport report = evaluate(preds, gts, data_cfg.num_classes);
  write_report(a.out, {{"eval", report}}, class_names(data_cfg), json::object());
  finish("eval", json::object(), {a.regions}, a.out, 0, clock);
  outputs.commit();
}

struct UpperBoundArgs {
  std::string proposals, data, config, strategy, mode = "inferred", out;
  bool injective = false;
};

void cmd_upperbound(const UpperBoundArgs& a, const Globals&) {
  Stopwatch clock;
  const Dataset ds = read_dataset(a.data);
  const InferenceConfig cfg = selection_config(a.config, a.strategy, ds.config);
  UpperBoundOptions opt;
  opt.injective = a.injective;
  if (a.mode == "inferred") {
    opt.source = UpperBoundSource::Selected;
  } else if (a.mode == "total") {
    opt.source = UpperBoundSource::All;
  } else {
    throw Error(ErrorKind::ConfigInvalid, "mode must be inferred or total");
  }
  const auto sets = proposal_sets(read_proposals(a.proposals));
  Outputs outputs;
  outputs.add(a.out);
  const EvalReport report = upper_bound(sets, ds.annotations(), cfg, opt, ds.config.num_classes);
  write_report(a.out, {{a.mode, report}}, class_names(ds.config), {{"mode", a.mode}});
  finish("upperbound", {{"mode", a.mode}, {"injective", a.injective}, {"select", cfg}}, {a.proposals, a.data},
         a.out, 0, clock);
  outputs.commit();
}

struct CalibrateArgs {
  std::string proposals, data, config, out;
  double step = 0.05;
};

void cmd_calibrate(const CalibrateArgs& a, const Globals&) {
  Stopwatch clock;
  const Dataset ds = read_dataset(a.data);
  InferenceConfig cfg = selection_config(a.config, "", ds.config);
  if (!(a.step > 0 && a.step < 1)) throw Error(ErrorKind::ConfigInvalid, "grid step must be in (0, 1)");
  std::vector<double> grid;
  for (int i = 1; i * a.step < 1.0 - 1e-9; ++i) grid.push_back(i * a.step);
  const auto sets = proposal_sets(read_proposals(a.proposals));
  Outputs outputs;
  outputs.add(a.out);
  cfg.strategy = Strategy::Composed;
  cfg.class_thresholds = calibrate_thresholds(sets, ds.annotations(), cfg, ds.config.num_classes, grid);
  write_text_atomic(a.out, json(cfg).dump(2) + "\n");
  for (int c = 0; c < ds.config.num_classes; ++c) {
    std::printf("%-8s %.2f\n", ds.config.class_names[static_cast<std::size_t>(c)].c_str(),
                cfg.class_thresholds[static_cast<std::size_t>(c)]);
  }
  finish("calibrate", {{"grid_step", a.step}}, {a.proposals, a.data}, a.out, 0, clock);
  outputs.commit();
}

struct TemporalArgs {
  std::string data, model, head, select_config, out, feature_cache;
  int window = 8, stride = 1, epochs = 10;
  bool no_time_mlp = false, no_presence = false;
  double lr = 1e-3;
  std::optional<double> blend;
};

TemporalConfig temporal_config(const TemporalArgs& a, const ToyModel& model, std::uint64_t seed) {
  TemporalConfig tc;
  tc.window = a.window;
  tc.stride = a.stride;
  tc.time_mlp = !a.no_time_mlp;
  tc.presence = !a.no_presence;
  tc.segment_dim = model.config().dim;
  tc.num_classes = model.config().num_classes;
  tc.height = model.config().height;
  tc.width = model.config().width;
  tc.seed = seed;
  if (a.blend) tc.blend = *a.blend;
  tc.validate();
  return tc;
}

void cmd_temporal_train(const TemporalArgs& a, const Globals& g) {
  Stopwatch clock;
  const ToyModel model = load_toy(a.model);
  const Dataset ds = read_dataset(a.data);
  const auto videos = ds.videos();
  if (videos.empty()) throw Error(ErrorKind::MissingInput, a.data + " holds no videos");
  const InferenceConfig sel = selection_config(a.select_config, "", ds.config);
  const std::uint64_t seed = g.seed.value_or(11);
  const TemporalConfig tc = temporal_config(a, model, seed);
  if (a.epochs < 1) throw Error(ErrorKind::ConfigInvalid, "epochs must be >= 1");
  Outputs outputs;
  outputs.add(a.out);
  std::vector<BaselineVideo> base;
  for (const auto& v : videos) base.push_back(run_baseline(model, v, sel));
  TemporalHead head(tc);
  TemporalTrainConfig ttc;
  ttc.epochs = a.epochs;
  ttc.optim.lr = a.lr;
  ttc.shuffle_seed = seed;
  ttc.on_epoch = [](int e, double loss) { std::printf("epoch %3d  loss %.6f\n", e, loss); std::fflush(stdout); };
  const auto curve = train_temporal(head, base, ttc);
  const json config{{"temporal", tc}, {"select", sel}};
  write_checkpoint(a.out, {"temporal", config}, head.params());
  json manifest_cfg = config;
  manifest_cfg["epochs"] = a.epochs;
  manifest_cfg["lr"] = a.lr;
  manifest_cfg["loss_curve"] = curve;
  finish("temporal train", manifest_cfg, {a.model, a.data}, a.out, seed, clock);
  outputs.commit();
}

void cmd_temporal_apply(const TemporalArgs& a, const Globals&) {
  Stopwatch clock;
  const ToyModel model = load_toy(a.model);
  LoadedHead loaded = head_header(a.head);
  if (a.blend) loaded.config.blend = *a.blend;
  TemporalHead head(loaded.config);
  read_checkpoint_params(a.head, head.params());
  const Dataset ds = read_dataset(a.data);
  const auto videos = ds.videos();
  if (videos.empty()) throw Error(ErrorKind::MissingInput, a.data + " holds no videos");
  Outputs outputs;
  outputs.add(a.out);
  if (!a.feature_cache.empty()) outputs.add(a.feature_cache);
  std::vector<FrameRegions> out;
  FeatureCache cache;
  cache.dim = loaded.config.time_dim;
  for (const auto& v : videos) {
    const BaselineVideo bv = run_baseline(model, v, loaded.select);
    for (auto& fr : relabel(head, bv)) out.push_back(std::move(fr));
    if (!a.feature_cache.empty()) {
      auto feats = video_features(head, v);
      auto& entry = cache.videos[v.video_id];
      for (std::size_t t = 0; t < feats.size(); ++t) entry.emplace_back(v.frames[t].annotation.frame_id, std::move(feats[t]));
    }
  }
  write_regions(a.out, out);
  if (!a.feature_cache.empty()) {
    write_feature_cache(a.feature_cache, cache);
    finish("temporal apply", loaded.config, {a.model, a.head, a.data}, a.feature_cache, loaded.config.seed, clock);
  }
  finish("temporal apply", loaded.config, {a.model, a.head, a.data}, a.out, loaded.config.seed, clock);
  outputs.commit();
}

struct AblateArgs {
  std::string kind = "strategies";
  std::string proposals, data, test, model, config, select_config, out;
  std::vector<std::string> strategies;
  std::vector<int> windows{8};
  int epochs = 10;
  double lr = 1e-3;
};

void cmd_ablate(const AblateArgs& a, const Globals& g) {
  Stopwatch clock;
  Outputs outputs;
  if (a.kind == "strategies") {
    const Dataset ds = read_dataset(a.data);
    const auto gts = ds.annotations();
    const auto sets = proposal_sets(read_proposals(a.proposals));
    const InferenceConfig base = selection_config(a.config, "", ds.config);
    std::vector<Strategy> strategies;
    if (a.strategies.empty()) {
      strategies = all_strategies();
    } else {
      for (const auto& s : a.strategies) strategies.push_back(parse_strategy(s));
    }
    outputs.add(a.out);
    std::vector<std::pair<std::string, EvalReport>> rows;
    for (Strategy s : strategies) {
      InferenceConfig cfg = base;
      cfg.strategy = s;
      std::vector<FrameRegions> preds;
      for (const auto& ps : sets) preds.push_back({ps.frame_id, select(ps, cfg)});
      rows.emplace_back(std::string(strategy_name(s)), evaluate(preds, gts, ds.config.num_classes));
    }
    write_report(a.out, rows, class_names(ds.config), {{"kind", "strategies"}});
    finish("ablate", {{"kind", a.kind}, {"select", base}}, {a.proposals, a.data}, a.out, 0, clock);
  } else if (a.kind == "temporal") {
    const ToyModel model = load_toy(a.model);
    const Dataset train = read_dataset(a.data);
    const Dataset test = read_dataset(a.test);
    const InferenceConfig sel = selection_config(a.select_config, "", train.config);
    const auto train_videos = train.videos();
    const auto test_videos = test.videos();
    if (train_videos.empty() || test_videos.empty()) throw Error(ErrorKind::MissingInput, "datasets hold no videos");
    outputs.add(a.out);
    std::vector<BaselineVideo> btrain, btest;
    for (const auto& v : train_videos) btrain.push_back(run_baseline(model, v, sel));
    for (const auto& v : test_videos) btest.push_back(run_baseline(model, v, sel));
    std::vector<FrameAnnotation> gts;
    std::vector<FrameRegions> base_preds;
    for (const auto& bv : btest) {
      for (std::size_t t = 0; t < bv.frames.size(); ++t) {
        gts.push_back(bv.video->frames[t].annotation);
        base_preds.push_back({gts.back().frame_id, bv.frames[t].regions});
      }
    }
    std::vector<std::pair<std::string, EvalReport>> rows;
    rows.emplace_back("frame baseline", evaluate(base_preds, gts, train.config.num_classes));
    const std::uint64_t seed = g.seed.value_or(11);
    for (int w : a.windows) {
      for (int variant = 0; variant < 4; ++variant) {
        TemporalArgs ta;
        ta.window = w;
        ta.no_time_mlp = !(variant & 1);
        ta.no_presence = !(variant & 2);
        TemporalHead head(temporal_config(ta, model, seed));
        TemporalTrainConfig ttc;
        ttc.epochs = a.epochs;
        ttc.optim.lr = a.lr;
        ttc.shuffle_seed = seed;
        train_temporal(head, btrain, ttc);
        std::vector<FrameRegions> preds;
        for (const auto& bv : btest) {
          for (auto& fr : relabel(head, bv)) preds.push_back(std::move(fr));
        }
        std::ostringstream name;
        name << "W=" << w << " mlp=" << (ta.no_time_mlp ? "off" : "on") << " presence=" << (ta.no_presence ? "off" : "on");
        rows.emplace_back(name.str(), evaluate(preds, gts, train.config.num_classes));
      }
    }
    write_report(a.out, rows, class_names(train.config), {{"kind", "temporal"}});
    finish("ablate", {{"kind", a.kind}, {"select", sel}, {"epochs", a.epochs}, {"windows", a.windows}},
           {a.model, a.data, a.test}, a.out, seed, clock);
  } else {
    throw Error(ErrorKind::ConfigInvalid, "ablation kind must be strategies or temporal");
  }
  outputs.commit();
}

struct ReportArgs {
  std::vector<std::string> inputs;
  std::string out;
};

void cmd_report(const ReportArgs& a, const Globals&) {
  Stopwatch clock;
  std::vector<std::pair<std::string, EvalReport>> rows;
  std::vector<std::string> names;
  for (const auto& in : a.inputs) {
    const json j = read_json(in);
    if (!j.contains("rows")) throw Error(ErrorKind::FormatError, in + " is not a report");
    if (names.empty()) names = j.value("class_names", std::vector<std::string>{});
    for (const auto& r : j.at("rows")) {
      const std::string label = j.at("rows").size() == 1 ? fs::path(in).stem().string() : r.value("name", in);
      rows.emplace_back(label, r.get<EvalReport>());
    }
  }
  const std::string table = format_table(rows, names);
  if (a.out.empty()) {
    std::cout << table;
    return;
  }
  Outputs outputs;
  outputs.add(a.out);
  write_text_atomic(a.out, table);
  std::cout << table;
  std::vector<std::string> inputs = a.inputs;
  finish("report", json::object(), inputs, a.out, 0, clock);
  outputs.commit();
}

int exit_code_for(ErrorKind kind) { return kind == ErrorKind::ConfigInvalid ? 2 : 1; }

void print_error(const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"matis: synthetic data, training, inference and evaluation for mask classification"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "root seed for every stochastic component");

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "generate a dataset container");
  s->add_option("--config", synth.config, "SynthConfig JSON");
  s->add_option("--out", synth.out, "output directory")->required();
  s->add_option("--frames", synth.frames, "independent frames");
  s->add_option("--videos", synth.videos, "videos");
  s->add_option("--height", synth.height);
  s->add_option("--width", synth.width);
  s->add_option("--video-length", synth.video_length);
  s->add_option("--ambiguity", synth.ambiguity, "fraction of ambiguous video frames");
  s->add_option("--noisy-proposals", synth.proposals, "also write noisy proposals here");
  s->callback([&] { cmd_synth(synth, g); });

  TrainArgs train;
  auto* t = app.add_subcommand("train", "train the frame model");
  t->add_option("--data", train.data)->required();
  t->add_option("--out", train.out, "checkpoint path")->required();
  t->add_option("--config", train.config, "ToyModelConfig JSON");
  t->add_option("--epochs", train.epochs);
  t->add_option("--n-queries", train.n_queries);
  t->add_option("--lr", train.lr);
  t->callback([&] { cmd_train(train, g); });

  InferArgs infer;
  auto* i = app.add_subcommand("infer", "write per-frame proposals");
  i->add_option("--model", infer.model)->required();
  i->add_option("--data", infer.data)->required();
  i->add_option("--out", infer.out)->required();
  i->callback([&] { cmd_infer(infer, g); });

  SelectArgs sel;
  auto* se = app.add_subcommand("select", "apply an inference strategy");
  se->add_option("--proposals", sel.proposals)->required();
  se->add_option("--data", sel.data, "dataset for class defaults");
  se->add_option("--config", sel.config, "InferenceConfig JSON");
  se->add_option("--strategy", sel.strategy, "all|nms|thresh05|top4|per-class-thresh|top-k-per-class|composed");
  se->add_option("--out", sel.out)->required();
  se->callback([&] { cmd_select(sel, g); });

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "score regions against annotations");
  e->add_option("--regions", ev.regions)->required();
  e->add_option("--data", ev.data);
  e->add_option("--annotations", ev.annotations);
  e->add_option("--out", ev.out)->required();
  e->callback([&] { cmd_eval(ev, g); });

  UpperBoundArgs ub;
  auto* u = app.add_subcommand("upperbound", "oracle-relabeled metrics");
  u->add_option("--proposals", ub.proposals)->required();
  u->add_option("--data", ub.data)->required();
  u->add_option("--config", ub.config);
  u->add_option("--strategy", ub.strategy);
  u->add_option("--mode", ub.mode, "inferred|total");
  u->add_flag("--injective", ub.injective);
  u->add_option("--out", ub.out)->required();
  u->callback([&] { cmd_upperbound(ub, g); });

  TemporalArgs ta;
  auto* tp = app.add_subcommand("temporal", "temporal consistency head");
  tp->require_subcommand(1);
  auto add_common = [&](CLI::App* c) {
    c->add_option("--data", ta.data, "video dataset")->required();
    c->add_option("--model", ta.model, "frame model checkpoint")->required();
    c->add_option("--out", ta.out)->required();
  };
  auto* tpt = tp->add_subcommand("train");
  add_common(tpt);
  tpt->add_option("--select-config", ta.select_config, "InferenceConfig JSON for region selection");
  tpt->add_option("--window", ta.window);
  tpt->add_option("--stride", ta.stride);
  tpt->add_flag("--no-time-mlp", ta.no_time_mlp);
  tpt->add_flag("--no-presence", ta.no_presence);
  tpt->add_option("--epochs", ta.epochs);
  tpt->add_option("--lr", ta.lr);
  tpt->callback([&] { cmd_temporal_train(ta, g); });
  auto* tpa = tp->add_subcommand("apply");
  add_common(tpa);
  tpa->add_option("--head", ta.head, "temporal checkpoint")->required();
  tpa->add_option("--feature-cache", ta.feature_cache);
  tpa->add_option("--blend", ta.blend, "weight of baseline class probabilities");
  tpa->callback([&] { cmd_temporal_apply(ta, g); });

  AblateArgs ab;
  auto* a = app.add_subcommand("ablate", "strategy or temporal ablation table");
  a->add_option("--kind", ab.kind, "strategies|temporal");
  a->add_option("--proposals", ab.proposals);
  a->add_option("--data", ab.data)->required();
  a->add_option("--test", ab.test, "held-out video dataset (temporal)");
  a->add_option("--model", ab.model, "frame model checkpoint (temporal)");
  a->add_option("--config", ab.config, "InferenceConfig JSON (strategies)");
  a->add_option("--select-config", ab.select_config, "InferenceConfig JSON (temporal)");
  a->add_option("--strategies", ab.strategies)->delimiter(',');
  a->add_option("--windows", ab.windows)->delimiter(',');
  a->add_option("--epochs", ab.epochs);
  a->add_option("--lr", ab.lr);
  a->add_option("--out", ab.out)->required();
  a->callback([&] { cmd_ablate(ab, g); });

  CalibrateArgs cal;
  auto* c = app.add_subcommand("calibrate", "per-class score thresholds");
  c->add_option("--proposals", cal.proposals)->required();
  c->add_option("--data", cal.data)->required();
  c->add_option("--config", cal.config);
  c->add_option("--grid-step", cal.step);
  c->add_option("--out", cal.out)->required();
  c->callback([&] { cmd_calibrate(cal, g); });

  ReportArgs rep;
  auto* r = app.add_subcommand("report", "combine report JSON files into one table");
  r->add_option("inputs", rep.inputs)->required();
  r->add_option("--out", rep.out);
  r->callback([&] { cmd_report(rep, g); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err);
  } catch (const Error& err) {
    print_error(std::string(to_string(err.kind())), err.what());
    return exit_code_for(err.kind());
  } catch (const nlohmann::json::exception& err) {
    print_error("FormatError", err.what());
    return 1;
  } catch (const std::exception& err) {
    print_error("Internal", err.what());
    return 1;
  }
  return 0;
}
