#include "iccl/schedule.hpp"

#include "iccl/error.hpp"
#include "iccl/rng.hpp"

namespace iccl {

std::string_view to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::SP: return "sp";
    case ScheduleKind::MP: return "mp";
    case ScheduleKind::DP: return "dp";
  }
  return "?";
}

std::string_view to_string(SegmentRole role) {
  switch (role) {
    case SegmentRole::Target: return "target";
    case SegmentRole::Interference: return "interference";
    case SegmentRole::Distractor: return "distractor";
  }
  return "?";
}

ScheduleKind schedule_kind_from_string(std::string_view s) {
  if (s == "sp" || s == "SP") return ScheduleKind::SP;
  if (s == "mp" || s == "MP") return ScheduleKind::MP;
  if (s == "dp" || s == "DP") return ScheduleKind::DP;
  throw ConfigError("unknown schedule kind: " + std::string(s));
}

SegmentRole segment_role_from_string(std::string_view s) {
  if (s == "target") return SegmentRole::Target;
  if (s == "interference") return SegmentRole::Interference;
  if (s == "distractor") return SegmentRole::Distractor;
  throw InvalidArgument("unknown segment role: " + std::string(s));
}

namespace {

// Sub-stream tags. The distractor tag is independent of the segment index
// so that a longer distractor extends a shorter one.
constexpr std::uint64_t kSegmentStream = 1;
constexpr std::uint64_t kDistractorStream = 2;

Segment make_segment(SegmentRole role, const TaskSpec& task, int length, std::uint64_t seed) {
  return Segment{role, task.task_id(), task.label(), sample_segment(task, length, seed)};
}

}  // namespace

HistoricalSequence build_sequence(const ScheduleSpec& spec, const TaskSpec& target,
                                  std::span<const TaskSpec> interference, int phi_d, std::uint64_t rng_seed) {
  if (spec.phi < 1) throw ConfigError("schedule: phi must be >= 1");
  if (spec.k < 1) throw ConfigError("schedule: K must be >= 1");
  if (phi_d < 0) throw ConfigError("schedule: phi_d must be >= 0");
  const bool dp = spec.kind == ScheduleKind::DP;
  if (dp && spec.phi_i < 0) throw ConfigError("schedule: phi_i must be >= 0");
  const bool needs_interference = (dp && spec.phi_i > 0 && (spec.k > 1 || spec.trailing_interference)) || phi_d > 0;
  if (needs_interference && interference.empty())
    throw ConfigError("schedule: an interference task is required for this condition");
  for (const auto& task : interference) {
    if (task.task_id() == target.task_id()) throw ConfigError("schedule: interference task shares the target id");
    if (task.n_states() != target.n_states()) throw ConfigError("schedule: interference task state count differs");
  }

  HistoricalSequence seq;
  seq.with_identifiers = spec.with_identifiers;
  std::uint64_t index = 0;
  auto next_seed = [&] { return derive_seed(rng_seed, {kSegmentStream, index++}); };

  switch (spec.kind) {
    case ScheduleKind::SP:
      seq.segments.push_back(make_segment(SegmentRole::Target, target, spec.phi, next_seed()));
      break;
    case ScheduleKind::MP:
      seq.segments.push_back(make_segment(SegmentRole::Target, target, spec.k * spec.phi, next_seed()));
      break;
    case ScheduleKind::DP:
      for (int rep = 0; rep < spec.k; ++rep) {
        seq.segments.push_back(make_segment(SegmentRole::Target, target, spec.phi, next_seed()));
        const bool last = rep + 1 == spec.k;
        if (spec.phi_i > 0 && (!last || spec.trailing_interference)) {
          const auto& other = interference[static_cast<std::size_t>(rep) % interference.size()];
          seq.segments.push_back(make_segment(SegmentRole::Interference, other, spec.phi_i, next_seed()));
        }
      }
      break;
  }
  if (phi_d > 0) {
    seq.segments.push_back(
        make_segment(SegmentRole::Distractor, interference.front(), phi_d, derive_seed(rng_seed, {kDistractorStream})));
  }
  return seq;
}

PracticeSchedule practice_times(const ScheduleSpec& spec, PracticeTimeConvention convention) {
  PracticeSchedule out;
  const long phi = spec.phi;
  const long reps = spec.kind == ScheduleKind::SP ? 1 : spec.k;
  const long total = reps * phi;
  out.times.reserve(static_cast<std::size_t>(total));
  for (long i = 1; i <= total; ++i) {
    long t = i;
    if (spec.kind == ScheduleKind::DP) {
      const long block = convention == PracticeTimeConvention::BlockCorrected ? (i - 1) / phi : i / phi;
      t += block * spec.phi_i;
    }
    out.times.push_back(t);
  }
  return out;
}

long context_length(const HistoricalSequence& seq) {
  long total = 0;
  for (const auto& s : seq.segments) total += static_cast<long>(s.trajectory.length());
  return total;
}

long pre_distractor_length(const HistoricalSequence& seq) {
  long total = 0;
  for (const auto& s : seq.segments)
    if (s.role != SegmentRole::Distractor) total += static_cast<long>(s.trajectory.length());
  return total;
}

std::string render_prompt(const HistoricalSequence& seq, StateIndex query_state, std::string_view target_label) {
  std::string out;
  for (const auto& segment : seq.segments) {
    if (seq.with_identifiers) {
      out += '[';
      out += segment.label;
      out += "]\n";
    }
    bool first = true;
    for (StateIndex s : segment.trajectory.states) {
      if (!first) out += ' ';
      out += std::to_string(s);
      first = false;
    }
    out += '\n';
  }
  if (seq.with_identifiers) {
    out += '[';
    out += target_label;
    out += "] ";
  }
  out += std::to_string(query_state);
  out += " →";
  return out;
}

void to_json(nlohmann::json& j, const HistoricalSequence& seq) {
  nlohmann::json segments = nlohmann::json::array();
  for (const auto& s : seq.segments) {
    segments.push_back({{"role", to_string(s.role)},
                        {"task_id", s.task_id},
                        {"label", s.label},
                        {"states", s.trajectory.states}});
  }
  j = nlohmann::json{{"template_version", kPromptTemplateVersion},
                     {"with_identifiers", seq.with_identifiers},
                     {"segments", std::move(segments)}};
}

HistoricalSequence sequence_from_json(const nlohmann::json& j) {
  HistoricalSequence seq;
  seq.with_identifiers = j.at("with_identifiers").get<bool>();
  for (const auto& s : j.at("segments")) {
    Segment seg;
    seg.role = segment_role_from_string(s.at("role").get<std::string>());
    seg.task_id = s.at("task_id").get<int>();
    seg.label = s.at("label").get<std::string>();
    seg.trajectory.task_id = seg.task_id;
    seg.trajectory.states = s.at("states").get<std::vector<StateIndex>>();
    seq.segments.push_back(std::move(seg));
  }
  return seq;
}

}  // namespace iccl
