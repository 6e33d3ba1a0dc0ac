#pragma once
// On-disk formats. All binary payloads are little-endian.
//
//   dataset dir   meta.json, frames.jsonl, images.bin (float32 H*W*3 per frame)
//   annotations   JSONL, one FrameAnnotation per line, masks as RLE
//   regions       JSONL, one FrameRegions per line
//   proposals     <path> JSONL index + <path>.bin float32 soft masks and embeddings
//   checkpoint    "MATISCKP", u32 version, u64 header size, JSON header, f64 blocks
//   features      <path> JSON index + <path>.bin float32 rows
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "matis/annotation.hpp"
#include "matis/autograd.hpp"
#include "matis/proposal.hpp"
#include "matis/synth.hpp"

namespace matis {

namespace fs = std::filesystem;

inline constexpr int kFormatVersion = 1;
inline constexpr const char* kArtifactVersion = "1.0.0";

// --- annotations and regions ---------------------------------------------

nlohmann::json annotation_to_json(const FrameAnnotation& a);
FrameAnnotation annotation_from_json(const nlohmann::json& j);
nlohmann::json regions_to_json(const FrameRegions& r);
FrameRegions regions_from_json(const nlohmann::json& j);

void write_annotations(const fs::path& path, const std::vector<FrameAnnotation>& frames);
std::vector<FrameAnnotation> read_annotations(const fs::path& path);
void write_regions(const fs::path& path, const std::vector<FrameRegions>& frames);
std::vector<FrameRegions> read_regions(const fs::path& path);

// --- dataset container ------------------------------------------------------

struct FrameRecord {
  Frame frame;
  std::string video_id;  // empty for single frames
  int t = -1;
  bool ambiguous = false;
};

struct Dataset {
  SynthConfig config;
  std::vector<FrameRecord> frames;

  /// Groups video frames by video id in first-appearance order, sorted by t.
  std::vector<Video> videos() const;
  std::vector<FrameAnnotation> annotations() const;
};

void write_dataset(const fs::path& dir, const Dataset& dataset);
/// Throws MissingInput, VersionMismatch or FormatError.
Dataset read_dataset(const fs::path& dir);

// --- proposals --------------------------------------------------------------

struct ProposalRecord {
  ProposalSet proposals;
  ag::Mat segments;  // N x d, may be empty
};

void write_proposals(const fs::path& path, const std::vector<ProposalRecord>& records);
std::vector<ProposalRecord> read_proposals(const fs::path& path);

// --- checkpoints ------------------------------------------------------------

struct CheckpointHeader {
  std::string kind;  // "toy" or "temporal"
  nlohmann::json config;
};

void write_checkpoint(const fs::path& path, const CheckpointHeader& header,
                      const ag::ParameterStore& store);
CheckpointHeader read_checkpoint_header(const fs::path& path);
/// Loads parameter blocks into store; names and shapes must match.
void read_checkpoint_params(const fs::path& path, ag::ParameterStore& store);

// --- temporal feature cache -------------------------------------------------

struct FeatureCache {
  int dim = 0;
  /// video id -> ordered (frame id, feature) pairs
  std::map<std::string, std::vector<std::pair<std::string, std::vector<float>>>> videos;
};

void write_feature_cache(const fs::path& path, const FeatureCache& cache);
FeatureCache read_feature_cache(const fs::path& path);

// --- run manifest -----------------------------------------------------------

struct RunManifest {
  std::string command;
  nlohmann::json config;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::uint64_t seed = 0;
  std::string artifact_version = kArtifactVersion;
  double duration_s = 0.0;
};

void to_json(nlohmann::json& j, const RunManifest& m);
void from_json(const nlohmann::json& j, RunManifest& m);
/// Manifest path for an output file or directory.
fs::path manifest_path(const fs::path& output);
void write_manifest(const fs::path& output, const RunManifest& m);

// --- helpers ----------------------------------------------------------------

nlohmann::json read_json(const fs::path& path);
/// Writes to a sibling temporary and renames it into place.
void write_text_atomic(const fs::path& path, const std::string& text);

}  // namespace matis
