#pragma once

#include <vector>

#include "stitcher/corpus.hpp"
#include "stitcher/localizer.hpp"

namespace stitcher {

struct MappingEntry {
    ClipRef clip;
    double score = 0.0;     // text cosine between query step and pool step
    size_t pool_index = 0;  // index into the pool it was built from
};

struct ProcedureMapping {
    Procedure query;
    double threshold = 0.8;
    // per_step[i]: candidates for query step i, sorted by descending score,
    // ties by (video_id, t_start). May be empty.
    std::vector<std::vector<MappingEntry>> per_step;
};

// Top `top_s` pool entries per query step with text similarity >= threshold.
ProcedureMapping build_mapping(const Procedure& query, const Pool& pool, double threshold = 0.8,
                               size_t top_s = 50);

void write_mappings(const std::vector<ProcedureMapping>& mappings,
                    const std::filesystem::path& path);

}  // namespace stitcher
