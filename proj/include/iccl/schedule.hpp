#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "iccl/task_gen.hpp"

namespace iccl {

enum class ScheduleKind { SP, MP, DP };
enum class SegmentRole { Target, Interference, Distractor };

std::string_view to_string(ScheduleKind kind);
std::string_view to_string(SegmentRole role);
ScheduleKind schedule_kind_from_string(std::string_view s);
SegmentRole segment_role_from_string(std::string_view s);

struct ScheduleSpec {
  ScheduleKind kind = ScheduleKind::DP;
  int phi = 100;
  int k = 5;
  /// Interference interval; ignored unless kind == DP.
  int phi_i = 200;
  bool with_identifiers = true;
  /// DP only: end every repetition (including the last) with an interference block.
  bool trailing_interference = false;
};

struct Segment {
  SegmentRole role = SegmentRole::Target;
  int task_id = 0;
  std::string label;
  Trajectory trajectory;

  bool operator==(const Segment&) const = default;
};

/// Ordered concatenation of experience segments.
struct HistoricalSequence {
  std::vector<Segment> segments;
  bool with_identifiers = true;

  bool operator==(const HistoricalSequence&) const = default;
};

/// Time stamps (1-based transition slots) at which the target task is practiced.
struct PracticeSchedule {
  std::vector<long> times;
};

enum class PracticeTimeConvention {
  /// t_i = i + floor((i-1)/phi) * phi_i: block j occupies its own slots.
  BlockCorrected,
  /// t_i = i + floor(i/phi) * phi_i, kept for sensitivity analysis.
  Literal,
};

/// SP -> [T(phi)], MP -> [T(K phi)], DP -> (T(phi), I(phi_i)) x K with the
/// final interference block dropped unless trailing_interference. A
/// distractor of phi_d transitions from the first interference task is
/// appended when phi_d > 0. DP interference blocks cycle through
/// `interference` in order. Throws ConfigError when an interference task is
/// required but missing or shares the target's id.
HistoricalSequence build_sequence(const ScheduleSpec& spec, const TaskSpec& target,
                                  std::span<const TaskSpec> interference, int phi_d, std::uint64_t rng_seed);

PracticeSchedule practice_times(const ScheduleSpec& spec,
                                PracticeTimeConvention convention = PracticeTimeConvention::BlockCorrected);

long context_length(const HistoricalSequence& seq);

/// Number of transitions in the non-distractor part of the sequence.
long pre_distractor_length(const HistoricalSequence& seq);

/// Renders the prompt with template version 1:
///
///   [TARGET_TASK]
///   0 1 0
///   [INTERFERENCE_TASK]
///   2 3
///   [TARGET_TASK] 1 →
///
/// Label lines and the query prefix are dropped when the sequence carries
/// no identifiers.
std::string render_prompt(const HistoricalSequence& seq, StateIndex query_state,
                          std::string_view target_label = kTargetLabel);

inline constexpr int kPromptTemplateVersion = 1;

void to_json(nlohmann::json& j, const HistoricalSequence& seq);
HistoricalSequence sequence_from_json(const nlohmann::json& j);

}  // namespace iccl
