#pragma once

#include <map>
#include <string>
#include <vector>

#include "stitcher/mapping.hpp"

namespace stitcher {

struct CoverSet {
    std::string video_id;
    // step index -> this video's best candidate clip for that step
    std::map<size_t, MappingEntry> covered;
};

// One CoverSet per distinct video in the mapping; when a video offers
// several clips for one step, the highest-scoring one is kept.
std::vector<CoverSet> build_cover_sets(const ProcedureMapping& mapping);

struct Cover {
    std::vector<std::string> videos;            // in greedy pick order
    std::map<size_t, MappingEntry> assignment;  // step -> clip, switch-minimal
    size_t uncovered = 0;                       // query steps left unassigned
    int switch_count = 0;
    double total_score = 0.0;
};

// Enumerates candidate covers by branching greedy set cover: at every pick,
// candidate videos are ranked by (new coverage desc, score desc, video_id)
// and each branch is explored. Enumeration order is independent of k (a
// fixed internal width caps the frontier), so results for smaller k are a
// prefix of results for larger k. The first cover is the plain greedy
// solution. Output is sorted by (uncovered asc, switch_count asc,
// total_score desc) after collection.
std::vector<Cover> greedy_top_k_covers(const std::vector<CoverSet>& sets, size_t k,
                                       size_t n_steps);

struct CandidateSequence {
    std::string procedure_id;
    std::vector<ClipRef> clips;  // one per query step
    int switch_count = 0;
    double total_score = 0.0;
    std::vector<std::string> source_videos;  // distinct, in first-use order

    bool operator==(const CandidateSequence& o) const { return clips == o.clips; }
};

int count_switches(const std::vector<ClipRef>& clips);

// Materializes one sequence per fully-assigning cover, deduplicated, capped
// at `limit`. Covers that leave a step unassigned are rejected and counted.
std::vector<CandidateSequence> expand_candidates(const std::vector<Cover>& covers,
                                                 const ProcedureMapping& mapping, size_t limit,
                                                 size_t* rejected = nullptr);

void write_candidates(const std::vector<CandidateSequence>& candidates,
                      const std::filesystem::path& path);

}  // namespace stitcher
