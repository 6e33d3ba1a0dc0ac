#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <json.hpp>

namespace matis {

using ClassId = int;

/// Row-major binary instance mask.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int height, int width);
  BinaryMask(int height, int width, std::vector<std::uint8_t> bits);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return bits_.size(); }

  std::uint8_t at(int row, int col) const { return bits_[index(row, col)]; }
  void set(int row, int col, bool on = true) { bits_[index(row, col)] = on ? 1 : 0; }

  std::span<const std::uint8_t> bits() const noexcept { return bits_; }
  std::span<std::uint8_t> bits() noexcept { return bits_; }

  std::int64_t area() const noexcept;
  bool empty() const noexcept { return area() == 0; }
  bool same_shape(const BinaryMask& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_;
  }

  BinaryMask& operator|=(const BinaryMask& other);
  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  std::size_t index(int row, int col) const noexcept {
    return static_cast<std::size_t>(row) * width_ + col;
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> bits_;
};

/// Uncompressed run-length encoding over the column-major flattening.
/// counts alternate 0-runs and 1-runs, starting with a (possibly empty) 0-run.
struct RleMask {
  int height = 0;
  int width = 0;
  std::vector<std::int64_t> counts;

  friend bool operator==(const RleMask&, const RleMask&) = default;
};

RleMask rle_encode(const BinaryMask& mask);

/// Throws Error{SumMismatch} when counts do not cover height*width exactly.
BinaryMask rle_decode(const RleMask& rle);

/// Pixel IoU. std::nullopt when both masks are empty.
std::optional<double> mask_iou(const BinaryMask& a, const BinaryMask& b);

/// Exact integer intersection and union pixel counts.
std::pair<std::int64_t, std::int64_t> intersection_union(const BinaryMask& a,
                                                         const BinaryMask& b);

using ClassMasks = std::map<ClassId, BinaryMask>;

/// Per-class bitwise OR of instance masks.
ClassMasks class_union(std::span<const std::pair<ClassId, BinaryMask>> regions);

void to_json(nlohmann::json& j, const RleMask& rle);
void from_json(const nlohmann::json& j, RleMask& rle);

}  // namespace matis
