#include "stitcher/mapping.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

namespace stitcher {

using nlohmann::ordered_json;

ProcedureMapping build_mapping(const Procedure& query, const Pool& pool, double threshold,
                               size_t top_s) {
    if (top_s == 0) raise(ErrorCode::MalformedInput, "top_s must be positive");
    ProcedureMapping m;
    m.query = query;
    m.threshold = threshold;
    m.per_step.resize(query.steps.size());
    for (size_t i = 0; i < query.steps.size(); ++i) {
        auto& list = m.per_step[i];
        for (size_t p = 0; p < pool.entries.size(); ++p) {
            const PoolEntry& e = pool.entries[p];
            double score = cosine_similarity(query.steps[i].emb, e.step_emb);
            if (score >= threshold) list.push_back({e.clip(), score, p});
        }
        std::sort(list.begin(), list.end(), [](const MappingEntry& a, const MappingEntry& b) {
            if (a.score != b.score) return a.score > b.score;
            if (a.clip.video_id != b.clip.video_id) return a.clip.video_id < b.clip.video_id;
            return a.clip.t_start < b.clip.t_start;
        });
        if (list.size() > top_s) list.resize(top_s);
    }
    return m;
}

void write_mappings(const std::vector<ProcedureMapping>& mappings,
                    const std::filesystem::path& path) {
    ordered_json root = ordered_json::array();
    for (const ProcedureMapping& m : mappings) {
        ordered_json j;
        j["procedure_id"] = m.query.procedure_id;
        j["threshold"] = m.threshold;
        j["steps"] = ordered_json::array();
        for (const auto& list : m.per_step) {
            ordered_json step = ordered_json::array();
            for (const MappingEntry& e : list)
                step.push_back({{"video_id", e.clip.video_id},
                                {"t_start", e.clip.t_start},
                                {"t_end", e.clip.t_end},
                                {"score", e.score}});
            j["steps"].push_back(std::move(step));
        }
        root.push_back(std::move(j));
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) raise(ErrorCode::MissingFile, "cannot write " + path.string());
    out << root.dump(2) << "\n";
}

}  // namespace stitcher
