#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>

namespace somnoflow {

inline constexpr std::int64_t kEpochSeconds = 30;
inline constexpr std::int64_t kMinuteSeconds = 60;

enum class SleepState : std::uint8_t { awake = 0, sleep = 1 };

enum class EventKind { sleep_onset, wake_time };

inline const char* to_string(EventKind k) {
  return k == EventKind::sleep_onset ? "sleep_onset" : "wake_time";
}

inline std::optional<EventKind> parse_event_kind(std::string_view s) {
  if (s == "sleep_onset") return EventKind::sleep_onset;
  if (s == "wake_time") return EventKind::wake_time;
  return std::nullopt;
}

using WarningHandler = std::function<void(std::string_view)>;

/// Replaces the process-wide warning sink (default: stderr). Returns the old one.
WarningHandler set_warning_handler(WarningHandler handler);
void warn(std::string_view message);

}  // namespace somnoflow
