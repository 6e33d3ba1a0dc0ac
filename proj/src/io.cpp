#include "matis/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "matis/error.hpp"

namespace matis {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

[[noreturn]] void format_error(const fs::path& path, const std::string& what) {
  throw Error(ErrorKind::FormatError, path.string() + ": " + what);
}

std::ifstream open_in(const fs::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw Error(ErrorKind::MissingInput, "cannot open " + path.string());
  return in;
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::out) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, mode | std::ios::trunc);
  if (!out) throw Error(ErrorKind::MissingInput, "cannot write " + path.string());
  return out;
}

std::vector<nlohmann::json> read_jsonl(const fs::path& path) {
  auto in = open_in(path);
  std::vector<nlohmann::json> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      format_error(path, "line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

template <typename T>
void write_jsonl(const fs::path& path, const std::vector<T>& items,
                 nlohmann::json (*convert)(const T&)) {
  std::ostringstream os;
  for (const auto& item : items) os << convert(item).dump() << '\n';
  write_text_atomic(path, os.str());
}

template <typename T>
T guarded(const fs::path& path, const nlohmann::json& j, T (*convert)(const nlohmann::json&)) {
  try {
    return convert(j);
  } catch (const nlohmann::json::exception& e) {
    format_error(path, e.what());
  }
}

fs::path sidecar(const fs::path& path) { return fs::path(path.string() + ".bin"); }

void check_version(const fs::path& path, const nlohmann::json& j) {
  const int v = j.value("version", -1);
  if (v != kFormatVersion) {
    throw Error(ErrorKind::VersionMismatch, path.string() + ": format version " + std::to_string(v) +
                                                ", expected " + std::to_string(kFormatVersion));
  }
}

}  // namespace

nlohmann::json read_json(const fs::path& path) {
  auto in = open_in(path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    format_error(path, e.what());
  }
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = fs::path(path.string() + ".tmp");
  {
    auto out = open_out(tmp, std::ios::out | std::ios::binary);
    out << text;
    if (!out) throw Error(ErrorKind::MissingInput, "write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

// --- annotations and regions ---------------------------------------------

nlohmann::json annotation_to_json(const FrameAnnotation& a) {
  nlohmann::json inst = nlohmann::json::array();
  for (const auto& i : a.instances) inst.push_back({{"class", i.cls}, {"mask", rle_encode(i.mask)}});
  return {{"frame", a.frame_id}, {"height", a.height}, {"width", a.width}, {"regions", inst}};
}

FrameAnnotation annotation_from_json(const nlohmann::json& j) {
  FrameAnnotation a;
  a.frame_id = j.at("frame").get<std::string>();
  a.height = j.at("height").get<int>();
  a.width = j.at("width").get<int>();
  for (const auto& i : j.at("regions")) {
    const RleMask rle = i.at("mask").get<RleMask>();
    if (rle.height != a.height || rle.width != a.width) {
      throw Error(ErrorKind::DimensionMismatch, "instance mask dims differ from frame " + a.frame_id);
    }
    a.instances.push_back({i.at("class").get<ClassId>(), rle_decode(rle)});
  }
  return a;
}

nlohmann::json regions_to_json(const FrameRegions& r) {
  nlohmann::json regions = nlohmann::json::array();
  for (const auto& g : r.regions) {
    regions.push_back({{"class", g.cls}, {"score", g.score}, {"query", g.query}, {"mask", rle_encode(g.mask)}});
  }
  return {{"frame", r.frame_id}, {"regions", regions}};
}

FrameRegions regions_from_json(const nlohmann::json& j) {
  FrameRegions r;
  r.frame_id = j.at("frame").get<std::string>();
  for (const auto& g : j.at("regions")) {
    Region region;
    region.cls = g.at("class").get<ClassId>();
    region.score = g.value("score", 1.0);
    region.query = g.value("query", -1);
    region.mask = rle_decode(g.at("mask").get<RleMask>());
    r.regions.push_back(std::move(region));
  }
  return r;
}

void write_annotations(const fs::path& path, const std::vector<FrameAnnotation>& frames) {
  write_jsonl(path, frames, &annotation_to_json);
}

std::vector<FrameAnnotation> read_annotations(const fs::path& path) {
  std::vector<FrameAnnotation> out;
  for (const auto& j : read_jsonl(path)) out.push_back(guarded(path, j, &annotation_from_json));
  return out;
}

void write_regions(const fs::path& path, const std::vector<FrameRegions>& frames) {
  write_jsonl(path, frames, &regions_to_json);
}

std::vector<FrameRegions> read_regions(const fs::path& path) {
  std::vector<FrameRegions> out;
  for (const auto& j : read_jsonl(path)) out.push_back(guarded(path, j, &regions_from_json));
  return out;
}

// --- dataset container ------------------------------------------------------

std::vector<Video> Dataset::videos() const {
  std::vector<Video> out;
  std::map<std::string, std::size_t> index;
  std::vector<std::vector<const FrameRecord*>> members;
  for (const auto& r : frames) {
    if (r.video_id.empty()) continue;
    auto [it, inserted] = index.emplace(r.video_id, out.size());
    if (inserted) {
      out.emplace_back();
      out.back().video_id = r.video_id;
      members.emplace_back();
    }
    members[it->second].push_back(&r);
  }
  for (std::size_t v = 0; v < out.size(); ++v) {
    std::stable_sort(members[v].begin(), members[v].end(),
                     [](const FrameRecord* a, const FrameRecord* b) { return a->t < b->t; });
    for (const auto* r : members[v]) {
      out[v].frames.push_back(r->frame);
      out[v].ambiguous.push_back(r->ambiguous);
    }
  }
  return out;
}

std::vector<FrameAnnotation> Dataset::annotations() const {
  std::vector<FrameAnnotation> out;
  for (const auto& r : frames) out.push_back(r.frame.annotation);
  return out;
}

void write_dataset(const fs::path& dir, const Dataset& dataset) {
  fs::create_directories(dir);
  nlohmann::json classes = nlohmann::json::array();
  const auto& cfg = dataset.config;
  for (int c = 0; c < cfg.num_classes; ++c) {
    classes.push_back({{"id", c + 1},
                       {"name", cfg.class_names.at(c)},
                       {"multi_instance", static_cast<bool>(cfg.multi_instance.at(c))},
                       {"weight", cfg.class_weights.at(c)}});
  }
  nlohmann::json index = nlohmann::json::array();
  std::ostringstream lines;
  {
    auto bin = open_out(dir / "images.bin.tmp", std::ios::out | std::ios::binary);
    std::uint64_t offset = 0;
    for (const auto& r : dataset.frames) {
      const Image& img = r.frame.image;
      index.push_back({{"frame", r.frame.annotation.frame_id},
                       {"offset", offset},
                       {"height", img.height},
                       {"width", img.width}});
      bin.write(reinterpret_cast<const char*>(img.data.data()),
                static_cast<std::streamsize>(img.data.size() * sizeof(float)));
      offset += img.data.size() * sizeof(float);
      nlohmann::json line = annotation_to_json(r.frame.annotation);
      if (!r.video_id.empty()) {
        line["video_id"] = r.video_id;
        line["t"] = r.t;
        line["ambiguous"] = r.ambiguous;
      }
      lines << line.dump() << '\n';
    }
    if (!bin) throw Error(ErrorKind::MissingInput, "write failed: images.bin");
  }
  fs::rename(dir / "images.bin.tmp", dir / "images.bin");
  write_text_atomic(dir / "frames.jsonl", lines.str());
  nlohmann::json meta{{"format", "matis-dataset"},
                      {"version", kFormatVersion},
                      {"config", cfg},
                      {"classes", classes},
                      {"image_dtype", "float32-le"},
                      {"channels", 3},
                      {"images", index}};
  write_text_atomic(dir / "meta.json", meta.dump(2) + "\n");
}

Dataset read_dataset(const fs::path& dir) {
  const fs::path meta_path = dir / "meta.json";
  if (!fs::exists(meta_path)) throw Error(ErrorKind::MissingInput, "no dataset at " + dir.string());
  const nlohmann::json meta = read_json(meta_path);
  check_version(meta_path, meta);
  Dataset ds;
  try {
    ds.config = meta.at("config").get<SynthConfig>();
  } catch (const nlohmann::json::exception& e) {
    format_error(meta_path, e.what());
  }
  const auto lines = read_jsonl(dir / "frames.jsonl");
  const auto& index = meta.at("images");
  if (index.size() != lines.size()) format_error(meta_path, "image index and frames.jsonl disagree");
  auto bin = open_in(dir / "images.bin", std::ios::in | std::ios::binary);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    FrameRecord r;
    r.frame.annotation = guarded(dir / "frames.jsonl", lines[i], &annotation_from_json);
    const auto& entry = index[i];
    if (entry.at("frame").get<std::string>() != r.frame.annotation.frame_id) {
      throw Error(ErrorKind::FrameIdMismatch, "image index order differs from frames.jsonl");
    }
    r.frame.image = Image(entry.at("height").get<int>(), entry.at("width").get<int>());
    bin.seekg(static_cast<std::streamoff>(entry.at("offset").get<std::uint64_t>()));
    bin.read(reinterpret_cast<char*>(r.frame.image.data.data()),
             static_cast<std::streamsize>(r.frame.image.data.size() * sizeof(float)));
    if (!bin) format_error(dir / "images.bin", "truncated image data");
    r.video_id = lines[i].value("video_id", std::string());
    r.t = lines[i].value("t", -1);
    r.ambiguous = lines[i].value("ambiguous", false);
    ds.frames.push_back(std::move(r));
  }
  return ds;
}

// --- proposals --------------------------------------------------------------

void write_proposals(const fs::path& path, const std::vector<ProposalRecord>& records) {
  std::ostringstream lines;
  const fs::path bin_path = sidecar(path);
  {
    auto bin = open_out(fs::path(bin_path.string() + ".tmp"), std::ios::out | std::ios::binary);
    std::uint64_t offset = 0;
    std::vector<float> buf;
    for (const auto& rec : records) {
      const auto& ps = rec.proposals;
      nlohmann::json probs = nlohmann::json::array();
      int h = 0, w = 0;
      buf.clear();
      for (const auto& p : ps.proposals) {
        probs.push_back(p.class_probs());
        h = p.soft_mask().height;
        w = p.soft_mask().width;
        for (double v : p.soft_mask().probs) buf.push_back(static_cast<float>(v));
      }
      for (Eigen::Index i = 0; i < rec.segments.size(); ++i) buf.push_back(static_cast<float>(rec.segments.data()[i]));
      nlohmann::json line{{"frame", ps.frame_id},
                          {"height", h},
                          {"width", w},
                          {"class_probs", probs},
                          {"segment_dim", rec.segments.cols()},
                          {"offset", offset}};
      lines << line.dump() << '\n';
      bin.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
      offset += buf.size() * sizeof(float);
    }
    if (!bin) throw Error(ErrorKind::MissingInput, "write failed: " + bin_path.string());
  }
  fs::rename(fs::path(bin_path.string() + ".tmp"), bin_path);
  write_text_atomic(path, lines.str());
}

std::vector<ProposalRecord> read_proposals(const fs::path& path) {
  const auto lines = read_jsonl(path);
  auto bin = open_in(sidecar(path), std::ios::in | std::ios::binary);
  std::vector<ProposalRecord> out;
  for (const auto& line : lines) {
    try {
      ProposalRecord rec;
      rec.proposals.frame_id = line.at("frame").get<std::string>();
      const int h = line.at("height").get<int>(), w = line.at("width").get<int>();
      const auto probs = line.at("class_probs").get<std::vector<std::vector<double>>>();
      const auto d = line.at("segment_dim").get<Eigen::Index>();
      const std::size_t pixels = static_cast<std::size_t>(h) * w;
      std::vector<float> buf(probs.size() * (pixels + static_cast<std::size_t>(d)));
      bin.seekg(static_cast<std::streamoff>(line.at("offset").get<std::uint64_t>()));
      bin.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
      if (!bin) format_error(sidecar(path), "truncated proposal data");
      for (std::size_t q = 0; q < probs.size(); ++q) {
        SoftMask m(h, w);
        for (std::size_t p = 0; p < pixels; ++p) m.probs[p] = buf[q * pixels + p];
        rec.proposals.proposals.emplace_back(probs[q], std::move(m));
      }
      rec.segments.resize(static_cast<Eigen::Index>(probs.size()), d);
      const std::size_t base = probs.size() * pixels;
      for (Eigen::Index i = 0; i < rec.segments.size(); ++i) rec.segments.data()[i] = buf[base + static_cast<std::size_t>(i)];
      out.push_back(std::move(rec));
    } catch (const nlohmann::json::exception& e) {
      format_error(path, e.what());
    }
  }
  return out;
}

// --- checkpoints ------------------------------------------------------------

namespace {
constexpr char kMagic[8] = {'M', 'A', 'T', 'I', 'S', 'C', 'K', 'P'};

nlohmann::json read_header_json(std::ifstream& in, const fs::path& path) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) format_error(path, "not a checkpoint");
  std::uint32_t version = 0;
  std::uint64_t size = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&size), sizeof size);
  if (!in) format_error(path, "truncated header");
  if (version != static_cast<std::uint32_t>(kFormatVersion)) {
    throw Error(ErrorKind::VersionMismatch, path.string() + ": checkpoint version " + std::to_string(version));
  }
  std::string text(size, '\0');
  in.read(text.data(), static_cast<std::streamsize>(size));
  if (!in) format_error(path, "truncated header");
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    format_error(path, e.what());
  }
}
}  // namespace

void write_checkpoint(const fs::path& path, const CheckpointHeader& header, const ag::ParameterStore& store) {
  nlohmann::json params = nlohmann::json::array();
  for (const auto& p : store.params()) {
    params.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}});
  }
  const std::string text =
      nlohmann::json{{"kind", header.kind}, {"config", header.config}, {"params", params}}.dump();
  const fs::path tmp = fs::path(path.string() + ".tmp");
  {
    auto out = open_out(tmp, std::ios::out | std::ios::binary);
    const std::uint32_t version = kFormatVersion;
    const std::uint64_t size = text.size();
    out.write(kMagic, 8);
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&size), sizeof size);
    out.write(text.data(), static_cast<std::streamsize>(size));
    for (const auto& p : store.params()) {
      out.write(reinterpret_cast<const char*>(p->value.data()),
                static_cast<std::streamsize>(p->value.size() * sizeof(double)));
    }
    if (!out) throw Error(ErrorKind::MissingInput, "write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

CheckpointHeader read_checkpoint_header(const fs::path& path) {
  auto in = open_in(path, std::ios::in | std::ios::binary);
  const auto j = read_header_json(in, path);
  return {j.value("kind", std::string()), j.value("config", nlohmann::json::object())};
}

void read_checkpoint_params(const fs::path& path, ag::ParameterStore& store) {
  auto in = open_in(path, std::ios::in | std::ios::binary);
  const auto j = read_header_json(in, path);
  const auto& params = j.at("params");
  if (params.size() != store.params().size()) format_error(path, "parameter count differs from the model");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *store.params()[i];
    if (params[i].at("name").get<std::string>() != p.name ||
        params[i].at("rows").get<Eigen::Index>() != p.value.rows() ||
        params[i].at("cols").get<Eigen::Index>() != p.value.cols()) {
      format_error(path, "parameter " + p.name + " does not match the model");
    }
  }
  for (auto& p : store.params()) {
    in.read(reinterpret_cast<char*>(p->value.data()), static_cast<std::streamsize>(p->value.size() * sizeof(double)));
    if (!in) format_error(path, "truncated parameter data");
  }
}

// --- temporal feature cache -------------------------------------------------

void write_feature_cache(const fs::path& path, const FeatureCache& cache) {
  nlohmann::json videos = nlohmann::json::object();
  const fs::path bin_path = sidecar(path);
  {
    auto bin = open_out(fs::path(bin_path.string() + ".tmp"), std::ios::out | std::ios::binary);
    std::uint64_t offset = 0;
    for (const auto& [vid, frames] : cache.videos) {
      nlohmann::json entries = nlohmann::json::array();
      for (const auto& [fid, v] : frames) {
        if (static_cast<int>(v.size()) != cache.dim) {
          throw Error(ErrorKind::DimensionMismatch, "feature width differs from cache dim");
        }
        entries.push_back({{"frame", fid}, {"offset", offset}});
        bin.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
        offset += v.size() * sizeof(float);
      }
      videos[vid] = entries;
    }
    if (!bin) throw Error(ErrorKind::MissingInput, "write failed: " + bin_path.string());
  }
  fs::rename(fs::path(bin_path.string() + ".tmp"), bin_path);
  write_text_atomic(path, nlohmann::json{{"version", kFormatVersion}, {"dim", cache.dim}, {"videos", videos}}.dump(2) + "\n");
}

FeatureCache read_feature_cache(const fs::path& path) {
  const auto j = read_json(path);
  check_version(path, j);
  FeatureCache cache;
  auto bin = open_in(sidecar(path), std::ios::in | std::ios::binary);
  try {
    cache.dim = j.at("dim").get<int>();
    for (const auto& [vid, entries] : j.at("videos").items()) {
      auto& frames = cache.videos[vid];
      for (const auto& e : entries) {
        std::vector<float> v(static_cast<std::size_t>(cache.dim));
        bin.seekg(static_cast<std::streamoff>(e.at("offset").get<std::uint64_t>()));
        bin.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
        if (!bin) format_error(sidecar(path), "truncated feature data");
        frames.emplace_back(e.at("frame").get<std::string>(), std::move(v));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    format_error(path, e.what());
  }
  return cache;
}

// --- run manifest -----------------------------------------------------------

void to_json(nlohmann::json& j, const RunManifest& m) {
  j = nlohmann::json{{"command", m.command},     {"config", m.config},
                     {"inputs", m.inputs},       {"outputs", m.outputs},
                     {"seed", m.seed},           {"artifact_version", m.artifact_version},
                     {"duration_s", m.duration_s}};
}

void from_json(const nlohmann::json& j, RunManifest& m) {
  m.command = j.at("command").get<std::string>();
  m.config = j.value("config", nlohmann::json::object());
  m.inputs = j.value("inputs", std::vector<std::string>{});
  m.outputs = j.value("outputs", std::vector<std::string>{});
  m.seed = j.value("seed", std::uint64_t{0});
  m.artifact_version = j.value("artifact_version", std::string());
  m.duration_s = j.value("duration_s", 0.0);
}

fs::path manifest_path(const fs::path& output) {
  if (fs::is_directory(output)) return output / "manifest.json";
  return fs::path(output.string() + ".manifest.json");
}

void write_manifest(const fs::path& output, const RunManifest& m) {
  write_text_atomic(manifest_path(output), nlohmann::json(m).dump(2) + "\n");
}

}  // namespace matis
