#pragma once

#include <string>
#include <utility>
#include <vector>

#include "matis/mask.hpp"

namespace matis {

struct Instance {
  ClassId cls = 0;
  BinaryMask mask;
};

/// Ground-truth instances of one frame.
struct FrameAnnotation {
  std::string frame_id;
  int height = 0;
  int width = 0;
  std::vector<Instance> instances;

  std::vector<std::pair<ClassId, BinaryMask>> labeled_masks() const;
};

}  // namespace matis
