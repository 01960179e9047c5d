#pragma once

#include <string>
#include <string_view>

#include "idol/error.hpp"

namespace idol {

/// Phantom task families: segmentation (auto-contouring), super-resolution,
/// synthetic CT (intensity translation).
enum class TaskKind { seg, sr, sct };

inline std::string_view to_string(TaskKind t) {
  switch (t) {
    case TaskKind::seg: return "seg";
    case TaskKind::sr: return "sr";
    case TaskKind::sct: return "sct";
  }
  return "?";
}

inline TaskKind task_from_string(std::string_view s) {
  if (s == "seg") return TaskKind::seg;
  if (s == "sr") return TaskKind::sr;
  if (s == "sct") return TaskKind::sct;
  throw InvalidArgument("unknown task '" + std::string(s) + "' (valid tasks: seg, sr, sct)");
}

}  // namespace idol
