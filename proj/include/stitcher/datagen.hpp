#pragma once

#include <optional>
#include <string>
#include <vector>

#include "stitcher/corpus.hpp"
#include "stitcher/llm.hpp"
#include "stitcher/localizer.hpp"
#include "stitcher/rng.hpp"

namespace stitcher {

// --- LLM step summarization ---------------------------------------------------

struct SummaryStep {
    double t_start = 0.0;
    double t_end = 0.0;
    std::string text;
    Embedding emb;
};

struct ProcedureSummary {
    std::string video_id;
    std::string task;
    std::string title;
    std::vector<SummaryStep> steps;
    Embedding summary_emb;  // mean of step embeddings
};

struct SummaryParse {
    bool not_possible = false;
    std::vector<SummaryStep> steps;  // embeddings unset
    size_t rejected_steps = 0;       // bad timestamps
};

// Line grammar: every line matching "Step k: [t1-t2] text" yields a step, in
// line order; steps with t1 >= t2 or outside [0, duration] are rejected.
// Throws LlmFormatError (raw text attached) when nothing matches and the
// response is not "Not Possible".
SummaryParse parse_summary_response(const std::string& response, double duration_s);

struct SummarizeResult {
    std::optional<ProcedureSummary> summary;  // empty when flagged Not Possible
    size_t rejected_steps = 0;                // bad timestamps or no ASR coverage
};

// Sends the domain summarization prompt over the video's ASR lines and
// parses the reply. Step embeddings are the mean of the ASR segment
// embeddings whose midpoints fall inside the step interval.
SummarizeResult summarize_narrations(const VideoRecord& video, Domain domain, LlmClient& llm);

// Groups of exactly group_size summaries whose pairwise summary similarity
// all reaches the threshold. Greedy over descending pair similarity; each
// summary joins at most one group; deterministic.
std::vector<std::vector<size_t>> pair_similar_procedures(
    const std::vector<ProcedureSummary>& summaries, double threshold = 0.8,
    size_t group_size = 2);

// --- LLM procedure mixing -------------------------------------------------------

struct MixedStep {
    size_t source_index = 0;       // 0-based into the group
    size_t source_step_index = 0;  // 0-based into that summary
    std::string text;
    double t_start = 0.0;
    double t_end = 0.0;
};

struct MixedProcedureSpec {
    std::vector<std::string> source_video_ids;
    std::vector<MixedStep> mixed_steps;
};

struct MixOutcome {
    std::optional<MixedProcedureSpec> spec;
    bool not_possible = false;
    std::string reject_reason;  // set when spec is empty and not_possible is false
};

// Sends the mixing prompt for the group and validates the reply: every cited
// step must exist and every source must contribute at least once.
// Timestamps come from the cited source summaries.
MixOutcome mix_procedures(const std::vector<const ProcedureSummary*>& group, LlmClient& llm,
                          Domain domain);

GroundTruthSample mixed_to_sample(const MixedProcedureSpec& spec,
                                  const std::vector<const ProcedureSummary*>& group,
                                  const std::string& procedure_id, const std::string& task);

struct GenDataStats {
    size_t summaries_ok = 0;
    size_t summaries_not_possible = 0;
    size_t summary_steps_rejected = 0;
    size_t groups = 0;
    size_t mixes_accepted = 0;
    size_t mixes_not_possible = 0;
    size_t mixes_rejected = 0;
    std::vector<std::string> reject_reasons;
};

// Full weak-supervision pass: summarize every ASR-annotated video, group
// similar summaries, mix each group, validate.
std::vector<GroundTruthSample> generate_weak_dataset(const Corpus& corpus, LlmClient& llm,
                                                     Domain domain, double threshold,
                                                     size_t group_size, GenDataStats* stats);

// --- hard negatives ----------------------------------------------------------------

enum class ViolationKind { StepViolation, ContinuityViolation, StateViolation };

const char* violation_kind_name(ViolationKind k);
ViolationKind violation_kind_from_name(const std::string& name);

struct NegativeSample {
    GroundTruthSample base;
    std::vector<ClipRef> clips;  // differs from base exactly at modified_positions
    ViolationKind kind = ViolationKind::StepViolation;
    std::vector<size_t> modified_positions;
};

// One clip replaced by a non-matching clip (similarity < threshold) drawn
// from a video already contributing to the sample.
NegativeSample make_step_violation(const GroundTruthSample& sample, const Pool& pool,
                                   double threshold, Rng& rng);

// The middle of a >=3-clip same-source run replaced by a step-matching clip
// from a different video.
NegativeSample make_continuity_violation(const GroundTruthSample& sample, const Pool& pool,
                                         double threshold, Rng& rng);

// Two same-source clips swapped so they appear in reverse of their temporal
// order, both still matching their assigned steps.
NegativeSample make_state_violation(const GroundTruthSample& sample, const Pool& pool,
                                    double threshold, Rng& rng);

// Same-video clip pairs shown in reverse temporal order.
size_t count_source_inversions(const std::vector<ClipRef>& clips);

// round-robin over kinds, skipping infeasible ones; seeded and reproducible
std::vector<NegativeSample> generate_negatives(const std::vector<GroundTruthSample>& samples,
                                               const Pool& pool, double threshold,
                                               const std::vector<ViolationKind>& kinds,
                                               int per_positive, uint64_t seed,
                                               size_t* skipped = nullptr);

GroundTruthSample negative_as_sample(const NegativeSample& neg);

void write_negatives(const std::vector<NegativeSample>& negatives,
                     const std::filesystem::path& path);
std::vector<NegativeSample> read_negatives(const std::filesystem::path& path,
                                           const std::vector<GroundTruthSample>& dataset);

}  // namespace stitcher
