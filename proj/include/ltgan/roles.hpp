#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ltgan {

enum class Phase : std::uint8_t { joint = 0, distill = 1 };
enum class TwinSlot : std::uint8_t { a = 0, b = 1 };

inline TwinSlot other(TwinSlot s) { return s == TwinSlot::a ? TwinSlot::b : TwinSlot::a; }
inline const char* slot_name(TwinSlot s) { return s == TwinSlot::a ? "A" : "B"; }

/// Which twin is the frozen Teacher for task k. Task 1 trains both twins
/// jointly; from task 2 on the Teacher slot alternates A, B, A, ...
struct RoleState {
  Phase phase = Phase::joint;
  TwinSlot teacher = TwinSlot::a;
  int task = 1;

  TwinSlot trainable() const { return other(teacher); }

  RoleState next() const {
    if (task == 1) return {Phase::distill, TwinSlot::a, 2};
    return {Phase::distill, other(teacher), task + 1};
  }

  void validate() const {
    if (task < 1) throw std::invalid_argument("role state: task index must be positive, got " + std::to_string(task));
    if ((task == 1) != (phase == Phase::joint)) {
      throw std::invalid_argument("role state: task " + std::to_string(task) + " cannot be in phase " +
                                  (phase == Phase::joint ? "Joint" : "Distill"));
    }
  }

  /// "Joint" for task 1, otherwise the Teacher slot name.
  std::string label() const { return phase == Phase::joint ? "Joint" : slot_name(teacher); }

  friend bool operator==(const RoleState&, const RoleState&) = default;
};

}  // namespace ltgan
