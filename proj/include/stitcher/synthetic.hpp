#pragma once

#include <cstdint>

#include "stitcher/corpus.hpp"

namespace stitcher {

// Cluster-structured synthetic data. Each task owns a bank of step
// prototypes (consecutive pairs are "sibling" steps with high mutual
// similarity, standing in for interchangeable actions). Planted videos show
// one contiguous block of 2-4 step types in order and supply query ground
// truths; background videos show random, possibly permuted, subsets. Window
// features add a per-video signature and a temporal drift so source
// continuity and clip order are visible to a learned scorer.
struct SynthConfig {
    size_t dim = 32;
    size_t n_tasks = 8;
    size_t steps_per_task = 8;  // even: prototypes come in sibling pairs
    size_t windows_per_step = 4;
    size_t n_videos = 200;  // must fit all planted block videos
    size_t n_queries = 400;
    size_t query_steps = 6;
    double sibling_cos = 0.88;
    double window_noise = 0.12;
    double text_noise = 0.04;
    double asr_noise = 0.15;
    double video_signature = 0.45;
    double time_drift = 0.10;
    double permuted_fraction = 0.5;  // background videos with shuffled order
    uint64_t seed = 7;
};

struct SynthData {
    Corpus corpus;
    std::vector<GroundTruthSample> queries;  // one planted ground truth each
};

SynthData generate_synthetic(const SynthConfig& config);

}  // namespace stitcher
