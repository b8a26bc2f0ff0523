#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "stitcher/datagen.hpp"
#include "stitcher/evaluator.hpp"
#include "stitcher/mapping.hpp"
#include "stitcher/setcover.hpp"

namespace stitcher {

enum class DistractorStrategy { ReducedSearch, FullVideo, OtherPositive, RandMatch, SimMatch };

const char* distractor_strategy_name(DistractorStrategy s);

struct DistractorSet {
    Procedure query;
    CandidateSequence ground_truth;
    std::vector<CandidateSequence> distractors;       // all distinct, none equal to gt
    std::vector<DistractorStrategy> tags;             // parallel to distractors
    std::map<DistractorStrategy, size_t> backfilled;  // per-strategy shortfall
};

struct DistractorConfig {
    size_t n_distractors = 499;
    double threshold = 0.8;
    size_t top_s = 50;
    uint64_t seed = 0;
};

// Five construction strategies in equal shares (as divisibility allows):
// reduced-search-space covers, same-task full videos force-localized to the
// query, other test positives (truncated or last-clip padded to the query
// length), random same-task mix-n-match, and per-step top-similarity
// mix-n-match. Shortfall backfills from Rand-match with a logged count.
DistractorSet build_distractors(const GroundTruthSample& gt, const Corpus& corpus,
                                const ProcedureMapping& mapping, const Pool& pool,
                                const std::vector<GroundTruthSample>& test_set,
                                const DistractorConfig& config);

std::vector<DistractorSet> build_distractor_sets(const Corpus& corpus, const Pool& pool,
                                                 const std::vector<GroundTruthSample>& test_set,
                                                 const DistractorConfig& config,
                                                 int threads = 1);

// --- metrics -----------------------------------------------------------------

// Middle order statistic; mean of the two middle values for even counts.
double median_rank(const std::vector<int>& ranks);
// Fraction of ranks <= k.
double recall_at_k(const std::vector<int>& ranks, int k);

struct RetrievalReport {
    std::vector<int> ranks;  // per query, in test-set order
    double median = 0.0;
    std::map<int, double> recall;  // K -> fraction
};

// scorer(query_index, candidate_index, query, candidate); candidate index 0
// is the ground truth. The ground truth takes the worst rank in its tie
// group.
using ScoreFn =
    std::function<double(size_t, size_t, const Procedure&, const CandidateSequence&)>;

RetrievalReport evaluate_scorer(const std::vector<DistractorSet>& sets, const ScoreFn& scorer,
                                const std::vector<int>& recall_ks, int threads = 1);

// Candidate score = mean over steps of cosine(step text, clip feature).
RetrievalReport baseline_similarity_rank(const std::vector<DistractorSet>& sets,
                                         const Corpus& corpus, const std::vector<int>& recall_ks,
                                         int threads = 1);

// Candidate score = mean over steps of the mean cosine between the step text
// and the ASR segments overlapping the clip; steps with no overlap score 0.
RetrievalReport baseline_text_only_rank(const std::vector<DistractorSet>& sets,
                                        const Corpus& corpus, const std::vector<int>& recall_ks,
                                        int threads = 1);

RetrievalReport evaluate_model(const std::vector<DistractorSet>& sets,
                               const EvaluatorModel& model, const Corpus& corpus,
                               const std::vector<int>& recall_ks, int threads = 1);

// --- experiment drivers ----------------------------------------------------------

struct MethodReport {
    std::string method;
    RetrievalReport report;
};

void write_report_csv(const std::vector<MethodReport>& methods,
                      const std::vector<int>& recall_ks, const std::filesystem::path& path);

struct ExperimentConfig {
    DistractorConfig distractors;
    std::vector<int> recall_ks = {1, 5, 50};
    int threads = 1;
};

// Evaluates the trained evaluator and both baselines on identical
// distractor sets.
std::vector<MethodReport> run_experiment(const Corpus& corpus, const Pool& pool,
                                         const std::vector<GroundTruthSample>& test_set,
                                         const EvaluatorModel& model,
                                         const ExperimentConfig& config);

struct AblationRow {
    std::string kinds_label;  // e.g. "cor" or "cor,con,osc"
    RetrievalReport report;
};

// Trains one model per negative-kind row and evaluates every row on the same
// distractor sets.
std::vector<AblationRow> run_ablation(const Corpus& corpus, const Pool& pool,
                                      const std::vector<GroundTruthSample>& train_set,
                                      const std::vector<GroundTruthSample>& test_set,
                                      const std::vector<std::vector<ViolationKind>>& rows,
                                      const EvaluatorConfig& model_config,
                                      const ExperimentConfig& config);

void write_ablation_csv(const std::vector<AblationRow>& rows, const std::vector<int>& recall_ks,
                        const std::filesystem::path& path);

// --- candidate capture ------------------------------------------------------------

struct CaptureCurve {
    std::vector<size_t> ks;
    std::vector<double> setcover;   // fraction of queries whose gt is in the top-K candidates
    std::vector<double> random_pick;
    std::vector<double> edited_nn;
};

CaptureCurve capture_curve(const Corpus& corpus, const Pool& pool,
                           const std::vector<GroundTruthSample>& queries,
                           const std::vector<size_t>& ks, double threshold, size_t top_s,
                           uint64_t seed, int threads = 1);

void write_capture_csv(const CaptureCurve& curve, const std::filesystem::path& path);

}  // namespace stitcher
