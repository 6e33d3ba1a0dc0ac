#include "matis/mask.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include <json.hpp>

#include "matis/error.hpp"

namespace matis {

namespace {

void require_positive_dims(int height, int width) {
  if (height < 1 || width < 1) {
    throw Error(ErrorKind::DimensionMismatch,
                "mask dimensions must be positive, got " + std::to_string(height) +
                    "x" + std::to_string(width));
  }
}

void require_same_shape(const BinaryMask& a, const BinaryMask& b) {
  if (!a.same_shape(b)) {
    throw Error(ErrorKind::DimensionMismatch,
                "mask shapes differ: " + std::to_string(a.height()) + "x" +
                    std::to_string(a.width()) + " vs " + std::to_string(b.height()) +
                    "x" + std::to_string(b.width()));
  }
}

}  // namespace

BinaryMask::BinaryMask(int height, int width)
    : height_(height), width_(width) {
  require_positive_dims(height, width);
  bits_.assign(static_cast<std::size_t>(height) * width, 0);
}

BinaryMask::BinaryMask(int height, int width, std::vector<std::uint8_t> bits)
    : height_(height), width_(width), bits_(std::move(bits)) {
  require_positive_dims(height, width);
  if (bits_.size() != static_cast<std::size_t>(height) * width) {
    throw Error(ErrorKind::DimensionMismatch, "bit count does not match height*width");
  }
  for (auto& b : bits_) b = b ? 1 : 0;
}

std::int64_t BinaryMask::area() const noexcept {
  return std::accumulate(bits_.begin(), bits_.end(), std::int64_t{0});
}

BinaryMask& BinaryMask::operator|=(const BinaryMask& other) {
  require_same_shape(*this, other);
  for (std::size_t i = 0; i < bits_.size(); ++i) bits_[i] |= other.bits_[i];
  return *this;
}

RleMask rle_encode(const BinaryMask& mask) {
  RleMask rle{mask.height(), mask.width(), {}};
  std::uint8_t current = 0;
  std::int64_t run = 0;
  for (int col = 0; col < mask.width(); ++col) {
    for (int row = 0; row < mask.height(); ++row) {
      const std::uint8_t bit = mask.at(row, col);
      if (bit != current) {
        rle.counts.push_back(run);
        run = 0;
        current = bit;
      }
      ++run;
    }
  }
  rle.counts.push_back(run);
  return rle;
}

BinaryMask rle_decode(const RleMask& rle) {
  if (rle.height < 1 || rle.width < 1) {
    throw Error(ErrorKind::DimensionMismatch, "RLE dimensions must be positive");
  }
  const std::int64_t total = static_cast<std::int64_t>(rle.height) * rle.width;
  std::int64_t sum = 0;
  for (auto c : rle.counts) {
    if (c < 0) throw Error(ErrorKind::SumMismatch, "negative RLE count");
    sum += c;
  }
  if (sum != total) {
    throw Error(ErrorKind::SumMismatch, "RLE counts sum to " + std::to_string(sum) +
                                            ", expected " + std::to_string(total));
  }
  BinaryMask mask(rle.height, rle.width);
  std::int64_t pos = 0;
  bool on = false;
  for (auto c : rle.counts) {
    if (on) {
      for (std::int64_t i = pos; i < pos + c; ++i) {
        mask.set(static_cast<int>(i % rle.height), static_cast<int>(i / rle.height));
      }
    }
    pos += c;
    on = !on;
  }
  return mask;
}

std::pair<std::int64_t, std::int64_t> intersection_union(const BinaryMask& a,
                                                         const BinaryMask& b) {
  require_same_shape(a, b);
  const auto x = a.bits();
  const auto y = b.bits();
  std::int64_t inter = 0;
  std::int64_t uni = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    inter += x[i] & y[i];
    uni += x[i] | y[i];
  }
  return {inter, uni};
}

std::optional<double> mask_iou(const BinaryMask& a, const BinaryMask& b) {
  const auto [inter, uni] = intersection_union(a, b);
  if (uni == 0) return std::nullopt;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

ClassMasks class_union(std::span<const std::pair<ClassId, BinaryMask>> regions) {
  ClassMasks out;
  for (const auto& [cls, mask] : regions) {
    if (!out.empty()) require_same_shape(out.begin()->second, mask);
    auto it = out.find(cls);
    if (it == out.end()) {
      out.emplace(cls, mask);
    } else {
      it->second |= mask;
    }
  }
  return out;
}

void to_json(nlohmann::json& j, const RleMask& rle) {
  j = nlohmann::json{{"h", rle.height}, {"w", rle.width}, {"counts", rle.counts}};
}

void from_json(const nlohmann::json& j, RleMask& rle) {
  try {
    rle.height = j.at("h").get<int>();
    rle.width = j.at("w").get<int>();
    rle.counts = j.at("counts").get<std::vector<std::int64_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::FormatError, std::string("malformed RLE: ") + e.what());
  }
}

}  // namespace matis
