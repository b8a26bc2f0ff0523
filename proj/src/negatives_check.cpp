#include "stitcher/negatives_check.hpp"

#include <set>

namespace stitcher {

namespace {

bool fail(std::string* why, const std::string& reason) {
    if (why) *why = reason;
    return false;
}

const PoolEntry* entry_for(const Pool& pool, const ClipRef& clip) {
    for (const PoolEntry& e : pool.entries)
        if (e.video_id == clip.video_id && e.t_start == clip.t_start && e.t_end == clip.t_end)
            return &e;
    return nullptr;
}

}  // namespace

bool verify_negative(const NegativeSample& neg, const Pool& pool, double threshold,
                     std::string* why) {
    const GroundTruthSample& base = neg.base;
    if (neg.clips.size() != base.clips.size()) return fail(why, "clip count changed");
    if (neg.modified_positions.empty() || neg.modified_positions.size() > 2)
        return fail(why, "modified_positions must name 1 or 2 steps");

    std::set<size_t> declared(neg.modified_positions.begin(), neg.modified_positions.end());
    for (size_t i = 0; i < neg.clips.size(); ++i) {
        bool changed = !(neg.clips[i] == base.clips[i]);
        if (changed != (declared.count(i) > 0))
            return fail(why, "clips differ from base at undeclared position " +
                                 std::to_string(i));
    }

    switch (neg.kind) {
        case ViolationKind::StepViolation: {
            if (declared.size() != 1) return fail(why, "step violation must modify one step");
            size_t p = *declared.begin();
            const PoolEntry* e = entry_for(pool, neg.clips[p]);
            if (!e) return fail(why, "replacement clip is not a pool clip");
            std::set<std::string> contributing;
            for (const ClipRef& c : base.clips) contributing.insert(c.video_id);
            if (!contributing.count(e->video_id))
                return fail(why, "replacement video does not contribute to the base sample");
            double sim = cosine_similarity(e->step_emb, base.procedure.steps[p].emb);
            if (sim >= threshold)
                return fail(why, "replacement still matches the step (sim " +
                                     std::to_string(sim) + ")");
            return true;
        }
        case ViolationKind::ContinuityViolation: {
            if (declared.size() != 1)
                return fail(why, "continuity violation must modify one step");
            size_t m = *declared.begin();
            if (m == 0 || m + 1 >= base.clips.size())
                return fail(why, "modified step is not the interior of a run");
            const std::string& run = base.clips[m].video_id;
            if (base.clips[m - 1].video_id != run || base.clips[m + 1].video_id != run)
                return fail(why, "base has no 3-clip same-source run around the modified step");
            const PoolEntry* e = entry_for(pool, neg.clips[m]);
            if (!e) return fail(why, "replacement clip is not a pool clip");
            if (e->video_id == run) return fail(why, "replacement comes from the run video");
            double sim = cosine_similarity(e->step_emb, base.procedure.steps[m].emb);
            if (sim < threshold)
                return fail(why,
                            "replacement does not match the step (sim " + std::to_string(sim) +
                                ")");
            return true;
        }
        case ViolationKind::StateViolation: {
            if (declared.size() != 2) return fail(why, "state violation must modify two steps");
            size_t y = *declared.begin();
            size_t x = *declared.rbegin();
            if (!(neg.clips[y] == base.clips[x]) || !(neg.clips[x] == base.clips[y]))
                return fail(why, "modified steps are not a swap of the base clips");
            if (base.clips[y].video_id != base.clips[x].video_id)
                return fail(why, "swapped clips come from different videos");
            if (!(base.clips[y].t_start < base.clips[x].t_start))
                return fail(why, "base pair was not in temporal order");
            if (count_source_inversions(neg.clips) != 1)
                return fail(why, "negative does not contain exactly one inverted pair");
            const PoolEntry* at_y = entry_for(pool, neg.clips[y]);
            const PoolEntry* at_x = entry_for(pool, neg.clips[x]);
            if (!at_y || !at_x) return fail(why, "swapped clip is not a pool clip");
            if (cosine_similarity(at_y->step_emb, base.procedure.steps[y].emb) < threshold)
                return fail(why, "clip placed at the earlier step no longer matches it");
            if (cosine_similarity(at_x->step_emb, base.procedure.steps[x].emb) < threshold)
                return fail(why, "clip placed at the later step no longer matches it");
            return true;
        }
    }
    return fail(why, "unknown violation kind");
}

}  // namespace stitcher
