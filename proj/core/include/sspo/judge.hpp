#pragma once

#include <string>
#include <string_view>

#include "sspo/labels.hpp"
#include "sspo/trace.hpp"

namespace sspo {

enum class JudgeSource { local_rule, remote_judge, stub };

std::string_view judge_source_name(JudgeSource s);

// The five reasoning-quality scores, each in [0, 100].
struct JudgeScores {
  double ssv = 0.0;
  double gtfa = 0.0;
  double sd = 0.0;
  double dlc = 0.0;
  double es = 0.0;
  JudgeSource source = JudgeSource::stub;
};

inline constexpr std::string_view kJudgeRubricVersion = "ssv-gtfa-sd-dlc-es/1";

// One-request/one-response exchange with a judge.
//
// Endpoints: "stub" and "local" answer in-process (ssv from the structure
// rule, the four judged scores fixed at 50); anything of the form host:port
// is a remote judge reached over a newline-delimited JSON exchange on a TCP
// byte stream.
//
// Errors: JudgeTransportError (connect/read/write failure),
// JudgeProtocolError (malformed response), JudgeRangeError (score outside
// [0, 100]). No retries; retry policy belongs to the caller.
JudgeScores judge_request(const StructuredTrace& trace, const LabelSet& truth,
                          const std::string& endpoint);

}  // namespace sspo
