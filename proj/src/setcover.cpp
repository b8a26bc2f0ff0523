#include "stitcher/setcover.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <json.hpp>

namespace stitcher {

using nlohmann::ordered_json;

std::vector<CoverSet> build_cover_sets(const ProcedureMapping& mapping) {
    std::map<std::string, CoverSet> by_video;
    for (size_t step = 0; step < mapping.per_step.size(); ++step) {
        for (const MappingEntry& e : mapping.per_step[step]) {
            CoverSet& s = by_video[e.clip.video_id];
            s.video_id = e.clip.video_id;
            auto it = s.covered.find(step);
            if (it == s.covered.end() || e.score > it->second.score)
                s.covered[step] = e;  // keep the best clip per (video, step)
        }
    }
    std::vector<CoverSet> out;
    out.reserve(by_video.size());
    for (auto& [id, s] : by_video) out.push_back(std::move(s));
    return out;
}

namespace {

// Frontier cap for the branching enumeration. Constant on purpose: the
// emitted cover stream must not depend on k, so results for a smaller k are
// a prefix of results for a larger one.
constexpr size_t kFrontierWidth = 512;

struct BeamState {
    std::vector<uint32_t> picks;  // set indices in pick order
    uint64_t covered = 0;
    double score = 0.0;
};

int popcount64(uint64_t x) { return __builtin_popcountll(x); }

// Switch-minimal per-step assignment over the cover's videos; ties prefer
// higher total score, then keeping the previous source, then video_id.
void assign_cover(Cover& cover, const std::vector<const CoverSet*>& chosen, size_t n_steps) {
    std::vector<size_t> steps;  // steps covered by at least one chosen video
    std::vector<std::vector<size_t>> cands;
    for (size_t t = 0; t < n_steps; ++t) {
        std::vector<size_t> who;
        for (size_t v = 0; v < chosen.size(); ++v)
            if (chosen[v]->covered.count(t)) who.push_back(v);
        if (!who.empty()) {
            steps.push_back(t);
            cands.push_back(std::move(who));
        }
    }
    cover.uncovered = n_steps - steps.size();
    cover.assignment.clear();
    cover.switch_count = 0;
    cover.total_score = 0.0;
    if (steps.empty()) return;

    struct Cell {
        int switches;
        double score;
        size_t parent;
    };
    std::vector<std::vector<Cell>> dp(steps.size());
    for (size_t si = 0; si < steps.size(); ++si) {
        dp[si].resize(cands[si].size());
        for (size_t ci = 0; ci < cands[si].size(); ++ci) {
            size_t v = cands[si][ci];
            double s = chosen[v]->covered.at(steps[si]).score;
            if (si == 0) {
                dp[si][ci] = {0, s, 0};
                continue;
            }
            Cell best{0, 0.0, 0};
            bool have = false;
            for (size_t pi = 0; pi < cands[si - 1].size(); ++pi) {
                size_t u = cands[si - 1][pi];
                Cell cand{dp[si - 1][pi].switches + (u == v ? 0 : 1), dp[si - 1][pi].score + s,
                          pi};
                bool better = false;
                if (!have) {
                    better = true;
                } else if (cand.switches != best.switches) {
                    better = cand.switches < best.switches;
                } else if (cand.score != best.score) {
                    better = cand.score > best.score;
                } else {
                    bool cand_stays = (u == v);
                    bool best_stays = (cands[si - 1][best.parent] == v);
                    if (cand_stays != best_stays) better = cand_stays;
                }
                if (better) {
                    best = cand;
                    have = true;
                }
            }
            dp[si][ci] = best;
        }
    }
    // best final cell: fewest switches, then highest score, then lex video_id
    size_t last = steps.size() - 1, best_ci = 0;
    for (size_t ci = 1; ci < cands[last].size(); ++ci) {
        const Cell &a = dp[last][ci], &b = dp[last][best_ci];
        if (a.switches != b.switches) {
            if (a.switches < b.switches) best_ci = ci;
        } else if (a.score != b.score) {
            if (a.score > b.score) best_ci = ci;
        } else if (chosen[cands[last][ci]]->video_id < chosen[cands[last][best_ci]]->video_id) {
            best_ci = ci;
        }
    }
    std::vector<size_t> pick(steps.size());
    size_t ci = best_ci;
    for (size_t si = steps.size(); si-- > 0;) {
        pick[si] = cands[si][ci];
        ci = dp[si][ci].parent;
    }
    cover.switch_count = dp[last][best_ci].switches;
    cover.total_score = dp[last][best_ci].score;
    for (size_t si = 0; si < steps.size(); ++si)
        cover.assignment[steps[si]] = chosen[pick[si]]->covered.at(steps[si]);
}

}  // namespace

std::vector<Cover> greedy_top_k_covers(const std::vector<CoverSet>& sets, size_t k,
                                       size_t n_steps) {
    if (k == 0) raise(ErrorCode::MalformedInput, "k must be >= 1");
    if (n_steps > 64) raise(ErrorCode::MalformedInput, "covers limited to 64 steps");
    if (sets.empty() || n_steps == 0) return {};

    std::vector<uint64_t> masks(sets.size(), 0);
    uint64_t coverable = 0;
    for (size_t v = 0; v < sets.size(); ++v) {
        for (const auto& [step, entry] : sets[v].covered) masks[v] |= (1ULL << step);
        coverable |= masks[v];
    }
    if (coverable == 0) return {};

    std::vector<BeamState> frontier{BeamState{}};
    std::set<std::vector<uint32_t>> seen;  // sorted pick sets already emitted or queued
    std::vector<std::vector<uint32_t>> emitted;

    while (!frontier.empty() && emitted.size() < k) {
        struct Child {
            size_t parent;
            uint32_t video;
            int gain;
            double gain_score;
        };
        std::vector<BeamState> next;
        for (size_t f = 0; f < frontier.size() && emitted.size() < k; ++f) {
            const BeamState& st = frontier[f];
            std::vector<Child> children;
            for (uint32_t v = 0; v < sets.size(); ++v) {
                uint64_t fresh = masks[v] & ~st.covered;
                if (fresh == 0) continue;
                double gs = 0.0;
                for (const auto& [step, entry] : sets[v].covered)
                    if (fresh & (1ULL << step)) gs += entry.score;
                children.push_back({f, v, popcount64(fresh), gs});
            }
            std::sort(children.begin(), children.end(), [&](const Child& a, const Child& b) {
                if (a.gain != b.gain) return a.gain > b.gain;
                if (a.gain_score != b.gain_score) return a.gain_score > b.gain_score;
                return sets[a.video].video_id < sets[b.video].video_id;
            });
            for (const Child& c : children) {
                BeamState child;
                child.picks = st.picks;
                child.picks.push_back(c.video);
                child.covered = st.covered | masks[c.video];
                child.score = st.score + c.gain_score;
                std::vector<uint32_t> key = child.picks;
                std::sort(key.begin(), key.end());
                if (seen.count(key)) continue;
                seen.insert(key);
                if (child.covered == coverable) {
                    emitted.push_back(child.picks);
                    if (emitted.size() >= k) break;
                } else {
                    next.push_back(std::move(child));
                }
            }
        }
        std::stable_sort(next.begin(), next.end(), [&](const BeamState& a, const BeamState& b) {
            int ua = popcount64(coverable & ~a.covered), ub = popcount64(coverable & ~b.covered);
            if (ua != ub) return ua < ub;
            if (a.score != b.score) return a.score > b.score;
            return a.picks < b.picks;
        });
        if (next.size() > kFrontierWidth) next.resize(kFrontierWidth);
        frontier = std::move(next);
    }

    std::vector<Cover> covers;
    covers.reserve(emitted.size());
    for (const auto& picks : emitted) {
        Cover c;
        std::vector<const CoverSet*> chosen;
        for (uint32_t v : picks) {
            c.videos.push_back(sets[v].video_id);
            chosen.push_back(&sets[v]);
        }
        assign_cover(c, chosen, n_steps);
        covers.push_back(std::move(c));
    }
    std::stable_sort(covers.begin(), covers.end(), [](const Cover& a, const Cover& b) {
        if (a.uncovered != b.uncovered) return a.uncovered < b.uncovered;
        if (a.switch_count != b.switch_count) return a.switch_count < b.switch_count;
        return a.total_score > b.total_score;
    });
    return covers;
}

int count_switches(const std::vector<ClipRef>& clips) {
    int switches = 0;
    for (size_t i = 1; i < clips.size(); ++i)
        if (clips[i].video_id != clips[i - 1].video_id) ++switches;
    return switches;
}

std::vector<CandidateSequence> expand_candidates(const std::vector<Cover>& covers,
                                                 const ProcedureMapping& mapping, size_t limit,
                                                 size_t* rejected) {
    size_t rejected_count = 0;
    std::vector<CandidateSequence> out;
    std::set<std::vector<ClipRef>> seen;
    const size_t n_steps = mapping.per_step.size();
    for (const Cover& cover : covers) {
        if (out.size() >= limit) break;
        if (cover.uncovered > 0 || cover.assignment.size() != n_steps) {
            ++rejected_count;
            continue;
        }
        CandidateSequence seq;
        seq.procedure_id = mapping.query.procedure_id;
        seq.total_score = 0.0;
        for (size_t t = 0; t < n_steps; ++t) {
            const MappingEntry& e = cover.assignment.at(t);
            seq.clips.push_back(e.clip);
            seq.total_score += e.score;
        }
        if (seen.count(seq.clips)) continue;
        seen.insert(seq.clips);
        seq.switch_count = count_switches(seq.clips);
        for (const ClipRef& c : seq.clips)
            if (std::find(seq.source_videos.begin(), seq.source_videos.end(), c.video_id) ==
                seq.source_videos.end())
                seq.source_videos.push_back(c.video_id);
        out.push_back(std::move(seq));
    }
    if (rejected) *rejected = rejected_count;
    return out;
}

void write_candidates(const std::vector<CandidateSequence>& candidates,
                      const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) raise(ErrorCode::MissingFile, "cannot write " + path.string());
    for (const CandidateSequence& c : candidates) {
        ordered_json j;
        j["procedure_id"] = c.procedure_id;
        j["clips"] = ordered_json::array();
        for (const ClipRef& clip : c.clips)
            j["clips"].push_back(
                {{"video_id", clip.video_id}, {"t_start", clip.t_start}, {"t_end", clip.t_end}});
        j["switch_count"] = c.switch_count;
        j["source_videos"] = c.source_videos;
        out << j.dump() << "\n";
    }
}

}  // namespace stitcher
