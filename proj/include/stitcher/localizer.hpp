#pragma once

#include <optional>
#include <string>
#include <vector>

#include "stitcher/corpus.hpp"

namespace stitcher {

struct AlignmentCostMatrix {
    size_t n_steps = 0;
    size_t n_windows = 0;
    std::vector<double> costs;  // row-major, steps x windows
    // Charged per dropped window; defaults to each column's 30th-percentile
    // match cost. A uniform value is the scalar special case.
    std::vector<double> window_drop_costs;
    double step_drop_cost = 0.6;  // charged per dropped step

    double at(size_t step, size_t window) const { return costs[step * n_windows + window]; }
    double& at(size_t step, size_t window) { return costs[step * n_windows + window]; }
    void set_uniform_drop_cost(double c) { window_drop_costs.assign(n_windows, c); }
};

struct StepSpan {
    bool dropped = true;
    size_t first_window = 0;  // inclusive, valid when !dropped
    size_t last_window = 0;   // inclusive
    double t_start = 0.0;
    double t_end = 0.0;
};

using StepLocalization = std::vector<StepSpan>;

struct DtwResult {
    double total_cost = 0.0;
    StepLocalization localization;
};

struct LocalizerConfig {
    double drop_cost_percentile = 0.30;
    double step_drop_cost = 0.6;
    std::optional<double> drop_cost_override;  // uniform window drop cost
    std::optional<double> step_drop_cost_override;
};

// costs[i][j] = 1 - cosine(step_i, window_j).
AlignmentCostMatrix build_cost_matrix(const VideoRecord& video,
                                      const std::vector<Embedding>& step_embs,
                                      const LocalizerConfig& config = {});

// Minimum-cost monotone alignment where each step maps to one contiguous
// window run or is dropped, and every unmatched window is dropped. Ties are
// broken deterministically: match over drop, then earlier windows.
DtwResult drop_dtw(const AlignmentCostMatrix& costs);

// drop_dtw with window times resolved against the video.
DtwResult localize_steps(const VideoRecord& video, const std::vector<Embedding>& step_embs,
                         const LocalizerConfig& config = {});

struct PoolEntry {
    std::string video_id;
    double t_start = 0.0;
    double t_end = 0.0;
    std::string step_text;
    Embedding step_emb;

    ClipRef clip() const { return {video_id, t_start, t_end}; }
};

struct Pool {
    std::vector<PoolEntry> entries;
    size_t skipped_videos = 0;  // videos without step annotations
};

// Localizes every annotated video's own steps and collects the surviving
// (step text, clip) pairs. Dropped steps are excluded. Entries are ordered
// by (video_id, step index).
Pool localize_corpus(const Corpus& corpus, const LocalizerConfig& config = {}, int threads = 1);

void write_pool(const Pool& pool, const std::filesystem::path& path);
// Re-binds step embeddings by looking up (video_id, step_text) in the corpus
// annotations.
Pool read_pool(const std::filesystem::path& path, const Corpus& corpus);

}  // namespace stitcher
