#include "stitcher/datagen.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <regex>
#include <set>
#include <sstream>

#include <json.hpp>

namespace stitcher {

using nlohmann::ordered_json;

// --- summarization ----------------------------------------------------------

namespace {

bool says_not_possible(const std::string& response) {
    std::istringstream in(response);
    std::string line;
    while (std::getline(in, line)) {
        size_t start = line.find_first_not_of(" \t\r");
        if (start == std::string::npos) continue;
        return line.compare(start, 12, "Not Possible") == 0;
    }
    return false;
}

const std::regex kStepLine(
    R"(^\s*Step\s+(\d+)\s*:\s*\[\s*([0-9]+(?:\.[0-9]+)?)\s*-\s*([0-9]+(?:\.[0-9]+)?)\s*\]\s*(.*\S)\s*$)");

}  // namespace

SummaryParse parse_summary_response(const std::string& response, double duration_s) {
    SummaryParse out;
    if (says_not_possible(response)) {
        out.not_possible = true;
        return out;
    }
    std::istringstream in(response);
    std::string line;
    std::smatch m;
    size_t matched_lines = 0;
    while (std::getline(in, line)) {
        if (!std::regex_match(line, m, kStepLine)) continue;
        ++matched_lines;
        SummaryStep step;
        step.t_start = std::stod(m[2].str());
        step.t_end = std::stod(m[3].str());
        step.text = m[4].str();
        if (step.t_start >= step.t_end || step.t_start < 0.0 || step.t_end > duration_s + 1e-9) {
            ++out.rejected_steps;
            continue;
        }
        out.steps.push_back(std::move(step));
    }
    if (matched_lines == 0)
        raise(ErrorCode::LlmFormatError, "no step lines in response:\n" + response);
    return out;
}

SummarizeResult summarize_narrations(const VideoRecord& video, Domain domain, LlmClient& llm) {
    if (video.asr.empty())
        raise(ErrorCode::MalformedInput, video.video_id + " has no ASR segments");
    std::ostringstream narrations;
    for (const AsrSegment& seg : video.asr)
        narrations << "[" << seg.t_start << "-" << seg.t_end << "] " << seg.text << "\n";

    std::string response = llm.complete(summarize_system_prompt(domain),
                                        render_summarize_prompt(domain, narrations.str()));
    SummaryParse parsed = parse_summary_response(response, video.duration_s);

    SummarizeResult result;
    result.rejected_steps = parsed.rejected_steps;
    if (parsed.not_possible) return result;

    ProcedureSummary summary;
    summary.video_id = video.video_id;
    summary.task = video.task;
    {
        std::istringstream in(response);
        std::string line;
        while (std::getline(in, line)) {
            if (line.rfind("Recipe:", 0) == 0 || line.rfind("Project:", 0) == 0) {
                summary.title = line;
                break;
            }
        }
    }
    for (SummaryStep& step : parsed.steps) {
        // step embedding: mean of ASR-segment embeddings with midpoint inside
        std::vector<double> acc;
        size_t n = 0;
        for (const AsrSegment& seg : video.asr) {
            double mid = 0.5 * (seg.t_start + seg.t_end);
            if (mid >= step.t_start && mid < step.t_end) {
                if (acc.empty()) acc.assign(seg.emb.size(), 0.0);
                for (size_t k = 0; k < seg.emb.size(); ++k) acc[k] += seg.emb[k];
                ++n;
            }
        }
        if (n == 0) {
            ++result.rejected_steps;
            continue;
        }
        step.emb.resize(acc.size());
        for (size_t k = 0; k < acc.size(); ++k)
            step.emb[k] = static_cast<float>(acc[k] / static_cast<double>(n));
        summary.steps.push_back(std::move(step));
    }
    if (summary.steps.empty()) return result;

    std::vector<double> acc(summary.steps.front().emb.size(), 0.0);
    for (const SummaryStep& s : summary.steps)
        for (size_t k = 0; k < acc.size(); ++k) acc[k] += s.emb[k];
    summary.summary_emb.resize(acc.size());
    for (size_t k = 0; k < acc.size(); ++k)
        summary.summary_emb[k] =
            static_cast<float>(acc[k] / static_cast<double>(summary.steps.size()));
    result.summary = std::move(summary);
    return result;
}

// --- grouping ------------------------------------------------------------------

std::vector<std::vector<size_t>> pair_similar_procedures(
    const std::vector<ProcedureSummary>& summaries, double threshold, size_t group_size) {
    if (group_size < 2 || group_size > 4)
        raise(ErrorCode::MalformedInput, "group_size must be 2, 3 or 4");
    struct Pair {
        double sim;
        size_t a, b;
    };
    std::vector<Pair> pairs;
    for (size_t i = 0; i < summaries.size(); ++i) {
        if (summaries[i].summary_emb.empty()) continue;
        for (size_t j = i + 1; j < summaries.size(); ++j) {
            if (summaries[j].summary_emb.empty()) continue;
            double s = cosine_similarity(summaries[i].summary_emb, summaries[j].summary_emb);
            if (s >= threshold) pairs.push_back({s, i, j});
        }
    }
    std::sort(pairs.begin(), pairs.end(), [](const Pair& x, const Pair& y) {
        if (x.sim != y.sim) return x.sim > y.sim;
        if (x.a != y.a) return x.a < y.a;
        return x.b < y.b;
    });

    std::vector<bool> used(summaries.size(), false);
    std::vector<std::vector<size_t>> groups;
    for (const Pair& p : pairs) {
        if (used[p.a] || used[p.b]) continue;
        std::vector<size_t> group{p.a, p.b};
        while (group.size() < group_size) {
            // candidate with the highest minimum similarity to the group
            double best_min = -2.0;
            size_t best = summaries.size();
            for (size_t m = 0; m < summaries.size(); ++m) {
                if (used[m] || summaries[m].summary_emb.empty()) continue;
                if (std::find(group.begin(), group.end(), m) != group.end()) continue;
                double min_sim = 2.0;
                for (size_t g : group)
                    min_sim = std::min(min_sim, cosine_similarity(summaries[m].summary_emb,
                                                                  summaries[g].summary_emb));
                if (min_sim >= threshold && min_sim > best_min) {
                    best_min = min_sim;
                    best = m;
                }
            }
            if (best == summaries.size()) break;
            group.push_back(best);
        }
        if (group.size() != group_size) continue;
        std::sort(group.begin(), group.end());
        for (size_t g : group) used[g] = true;
        groups.push_back(std::move(group));
    }
    return groups;
}

// --- mixing -----------------------------------------------------------------------

namespace {

const std::regex kMixLine(
    R"(^\s*Step\s+(\d+)\s*\(\s*Step\s+(\d+)\s+in\s+(?:Recipe|Project)\s+(\d+)\s*\)\s*:\s*(.*\S)\s*$)");

std::string render_group(const std::vector<const ProcedureSummary*>& group, Domain domain) {
    std::string label = domain == Domain::Cooking ? "Recipe" : "Project";
    std::ostringstream out;
    for (size_t i = 0; i < group.size(); ++i) {
        out << label << " " << (i + 1) << ": " << group[i]->title << "\n";
        for (size_t s = 0; s < group[i]->steps.size(); ++s) {
            const SummaryStep& st = group[i]->steps[s];
            out << "Step " << (s + 1) << ": [" << st.t_start << "-" << st.t_end << "] " << st.text
                << "\n";
        }
        out << "\n";
    }
    return out.str();
}

}  // namespace

MixOutcome mix_procedures(const std::vector<const ProcedureSummary*>& group, LlmClient& llm,
                          Domain domain) {
    if (group.size() < 2 || group.size() > 4)
        raise(ErrorCode::MalformedInput, "mixing needs a group of 2-4 summaries");
    MixOutcome out;
    std::string response = llm.complete(
        mix_system_prompt(domain),
        render_mix_prompt(domain, group.size(), render_group(group, domain)));
    if (says_not_possible(response)) {
        out.not_possible = true;
        return out;
    }

    std::vector<MixedStep> steps;
    std::istringstream in(response);
    std::string line;
    std::smatch m;
    while (std::getline(in, line)) {
        size_t start = line.find_first_not_of(" \t\r");
        if (start != std::string::npos && line.compare(start, 12, "Explanation:") == 0) break;
        if (!std::regex_match(line, m, kMixLine)) continue;
        MixedStep step;
        long src_step = std::stol(m[2].str());
        long src_idx = std::stol(m[3].str());
        if (src_idx < 1 || static_cast<size_t>(src_idx) > group.size()) {
            out.reject_reason = "cites missing source " + m[3].str();
            return out;
        }
        const ProcedureSummary& src = *group[static_cast<size_t>(src_idx - 1)];
        if (src_step < 1 || static_cast<size_t>(src_step) > src.steps.size()) {
            out.reject_reason = "cites invented step " + m[2].str() + " of source " + m[3].str();
            return out;
        }
        step.source_index = static_cast<size_t>(src_idx - 1);
        step.source_step_index = static_cast<size_t>(src_step - 1);
        step.text = m[4].str();
        step.t_start = src.steps[step.source_step_index].t_start;
        step.t_end = src.steps[step.source_step_index].t_end;
        steps.push_back(std::move(step));
    }
    if (steps.empty()) {
        out.reject_reason = "no step lines parsed";
        return out;
    }
    std::set<size_t> cited;
    for (const MixedStep& s : steps) cited.insert(s.source_index);
    if (cited.size() != group.size()) {
        out.reject_reason = "does not use at least one step from all sources";
        return out;
    }
    MixedProcedureSpec spec;
    for (const ProcedureSummary* s : group) spec.source_video_ids.push_back(s->video_id);
    spec.mixed_steps = std::move(steps);
    out.spec = std::move(spec);
    return out;
}

GroundTruthSample mixed_to_sample(const MixedProcedureSpec& spec,
                                  const std::vector<const ProcedureSummary*>& group,
                                  const std::string& procedure_id, const std::string& task) {
    GroundTruthSample sample;
    sample.provenance = Provenance::LlmMixed;
    sample.procedure.procedure_id = procedure_id;
    sample.procedure.task = task;
    for (const MixedStep& st : spec.mixed_steps) {
        const ProcedureSummary& src = *group[st.source_index];
        sample.procedure.steps.push_back(
            {st.text, src.steps[st.source_step_index].emb});
        sample.clips.push_back({src.video_id, st.t_start, st.t_end});
    }
    return sample;
}

std::vector<GroundTruthSample> generate_weak_dataset(const Corpus& corpus, LlmClient& llm,
                                                     Domain domain, double threshold,
                                                     size_t group_size, GenDataStats* stats) {
    GenDataStats local;
    GenDataStats& st = stats ? *stats : local;

    std::vector<ProcedureSummary> summaries;
    for (const auto& [id, video] : corpus.videos()) {
        if (video.asr.empty()) continue;
        SummarizeResult r = summarize_narrations(video, domain, llm);
        st.summary_steps_rejected += r.rejected_steps;
        if (r.summary) {
            summaries.push_back(std::move(*r.summary));
            ++st.summaries_ok;
        } else {
            ++st.summaries_not_possible;
        }
    }

    auto groups = pair_similar_procedures(summaries, threshold, group_size);
    st.groups = groups.size();

    std::vector<GroundTruthSample> samples;
    for (size_t gi = 0; gi < groups.size(); ++gi) {
        std::vector<const ProcedureSummary*> group;
        for (size_t idx : groups[gi]) group.push_back(&summaries[idx]);
        MixOutcome mix = mix_procedures(group, llm, domain);
        if (mix.not_possible) {
            ++st.mixes_not_possible;
            continue;
        }
        if (!mix.spec) {
            ++st.mixes_rejected;
            st.reject_reasons.push_back("group " + std::to_string(gi) + ": " +
                                        mix.reject_reason);
            continue;
        }
        char pid[32];
        std::snprintf(pid, sizeof(pid), "mix-%05zu", gi);
        samples.push_back(mixed_to_sample(*mix.spec, group, pid, group.front()->task));
        ++st.mixes_accepted;
    }
    return samples;
}

// --- negative samplers ----------------------------------------------------------------

const char* violation_kind_name(ViolationKind k) {
    switch (k) {
        case ViolationKind::StepViolation: return "step_violation";
        case ViolationKind::ContinuityViolation: return "continuity_violation";
        case ViolationKind::StateViolation: return "state_violation";
    }
    return "step_violation";
}

ViolationKind violation_kind_from_name(const std::string& name) {
    if (name == "step_violation" || name == "cor") return ViolationKind::StepViolation;
    if (name == "continuity_violation" || name == "con") return ViolationKind::ContinuityViolation;
    if (name == "state_violation" || name == "osc") return ViolationKind::StateViolation;
    raise(ErrorCode::MalformedInput, "unknown violation kind '" + name + "'");
}

namespace {

std::set<std::string> contributing_videos(const GroundTruthSample& sample) {
    std::set<std::string> out;
    for (const ClipRef& c : sample.clips) out.insert(c.video_id);
    return out;
}

// Pool entry for an exact clip; nullptr when the clip never entered the pool.
const PoolEntry* find_pool_entry(const Pool& pool, const ClipRef& clip) {
    for (const PoolEntry& e : pool.entries)
        if (e.video_id == clip.video_id && e.t_start == clip.t_start && e.t_end == clip.t_end)
            return &e;
    return nullptr;
}

}  // namespace

size_t count_source_inversions(const std::vector<ClipRef>& clips) {
    size_t inversions = 0;
    for (size_t i = 0; i < clips.size(); ++i)
        for (size_t j = i + 1; j < clips.size(); ++j)
            if (clips[i].video_id == clips[j].video_id && clips[i].t_start > clips[j].t_start)
                ++inversions;
    return inversions;
}

NegativeSample make_step_violation(const GroundTruthSample& sample, const Pool& pool,
                                   double threshold, Rng& rng) {
    auto contributing = contributing_videos(sample);
    std::vector<size_t> positions(sample.clips.size());
    for (size_t i = 0; i < positions.size(); ++i) positions[i] = i;
    rng.shuffle(positions);

    for (size_t p : positions) {
        std::vector<size_t> eligible;
        for (size_t e = 0; e < pool.entries.size(); ++e) {
            const PoolEntry& entry = pool.entries[e];
            if (!contributing.count(entry.video_id)) continue;
            if (entry.clip() == sample.clips[p]) continue;
            if (cosine_similarity(entry.step_emb, sample.procedure.steps[p].emb) >= threshold)
                continue;
            eligible.push_back(e);
        }
        if (eligible.empty()) continue;
        const PoolEntry& pick = pool.entries[eligible[rng.bounded(eligible.size())]];
        NegativeSample neg;
        neg.base = sample;
        neg.clips = sample.clips;
        neg.clips[p] = pick.clip();
        neg.kind = ViolationKind::StepViolation;
        neg.modified_positions = {p};
        return neg;
    }
    raise(ErrorCode::CannotViolate,
          sample.procedure.procedure_id + ": no non-matching clip in any contributing video");
}

NegativeSample make_continuity_violation(const GroundTruthSample& sample, const Pool& pool,
                                         double threshold, Rng& rng) {
    std::vector<size_t> middles;  // strict interiors of >=3 same-source runs
    for (size_t m = 1; m + 1 < sample.clips.size(); ++m)
        if (sample.clips[m - 1].video_id == sample.clips[m].video_id &&
            sample.clips[m].video_id == sample.clips[m + 1].video_id)
            middles.push_back(m);
    if (middles.empty())
        raise(ErrorCode::CannotViolate,
              sample.procedure.procedure_id + ": no run of 3 consecutive same-source clips");
    rng.shuffle(middles);

    for (size_t m : middles) {
        const std::string& run_video = sample.clips[m].video_id;
        std::vector<size_t> eligible;
        for (size_t e = 0; e < pool.entries.size(); ++e) {
            const PoolEntry& entry = pool.entries[e];
            if (entry.video_id == run_video) continue;
            if (cosine_similarity(entry.step_emb, sample.procedure.steps[m].emb) < threshold)
                continue;
            eligible.push_back(e);
        }
        if (eligible.empty()) continue;
        const PoolEntry& pick = pool.entries[eligible[rng.bounded(eligible.size())]];
        NegativeSample neg;
        neg.base = sample;
        neg.clips = sample.clips;
        neg.clips[m] = pick.clip();
        neg.kind = ViolationKind::ContinuityViolation;
        neg.modified_positions = {m};
        return neg;
    }
    raise(ErrorCode::CannotViolate,
          sample.procedure.procedure_id + ": no cross-video match for any run middle");
}

NegativeSample make_state_violation(const GroundTruthSample& sample, const Pool& pool,
                                    double threshold, Rng& rng) {
    std::vector<std::pair<size_t, size_t>> pairs;  // (y, x), y < x, same source, in order
    for (size_t y = 0; y < sample.clips.size(); ++y)
        for (size_t x = y + 1; x < sample.clips.size(); ++x)
            if (sample.clips[y].video_id == sample.clips[x].video_id &&
                sample.clips[y].t_start < sample.clips[x].t_start)
                pairs.push_back({y, x});
    if (pairs.empty())
        raise(ErrorCode::CannotViolate,
              sample.procedure.procedure_id + ": no same-source clip pair in temporal order");
    rng.shuffle(pairs);

    for (auto [y, x] : pairs) {
        const PoolEntry* early = find_pool_entry(pool, sample.clips[y]);
        const PoolEntry* late = find_pool_entry(pool, sample.clips[x]);
        if (!early || !late) continue;
        // after the swap, each clip must still match its new step
        if (cosine_similarity(late->step_emb, sample.procedure.steps[y].emb) < threshold)
            continue;
        if (cosine_similarity(early->step_emb, sample.procedure.steps[x].emb) < threshold)
            continue;
        std::vector<ClipRef> clips = sample.clips;
        std::swap(clips[y], clips[x]);
        if (count_source_inversions(clips) != 1) continue;
        NegativeSample neg;
        neg.base = sample;
        neg.clips = std::move(clips);
        neg.kind = ViolationKind::StateViolation;
        neg.modified_positions = {y, x};
        return neg;
    }
    raise(ErrorCode::CannotViolate,
          sample.procedure.procedure_id + ": no swappable pair keeps both steps matched");
}

std::vector<NegativeSample> generate_negatives(const std::vector<GroundTruthSample>& samples,
                                               const Pool& pool, double threshold,
                                               const std::vector<ViolationKind>& kinds,
                                               int per_positive, uint64_t seed, size_t* skipped) {
    if (kinds.empty()) raise(ErrorCode::MalformedInput, "no violation kinds selected");
    std::vector<NegativeSample> out;
    size_t skipped_count = 0;
    for (size_t si = 0; si < samples.size(); ++si) {
        for (int n = 0; n < per_positive; ++n) {
            Rng rng = Rng::fork(seed, si * 97 + static_cast<uint64_t>(n));
            bool made = false;
            for (size_t attempt = 0; attempt < kinds.size() && !made; ++attempt) {
                ViolationKind kind = kinds[(static_cast<size_t>(n) + attempt) % kinds.size()];
                try {
                    switch (kind) {
                        case ViolationKind::StepViolation:
                            out.push_back(make_step_violation(samples[si], pool, threshold, rng));
                            break;
                        case ViolationKind::ContinuityViolation:
                            out.push_back(
                                make_continuity_violation(samples[si], pool, threshold, rng));
                            break;
                        case ViolationKind::StateViolation:
                            out.push_back(
                                make_state_violation(samples[si], pool, threshold, rng));
                            break;
                    }
                    made = true;
                } catch (const Error& e) {
                    if (e.code() != ErrorCode::CannotViolate) throw;
                }
            }
            if (!made) ++skipped_count;
        }
    }
    if (skipped) *skipped = skipped_count;
    return out;
}

GroundTruthSample negative_as_sample(const NegativeSample& neg) {
    GroundTruthSample s;
    s.procedure = neg.base.procedure;
    s.clips = neg.clips;
    s.provenance = neg.base.provenance;
    return s;
}

void write_negatives(const std::vector<NegativeSample>& negatives,
                     const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) raise(ErrorCode::MissingFile, "cannot write " + path.string());
    for (const NegativeSample& n : negatives) {
        ordered_json j;
        j["procedure_id"] = n.base.procedure.procedure_id;
        j["kind"] = violation_kind_name(n.kind);
        j["modified_positions"] = n.modified_positions;
        j["clips"] = ordered_json::array();
        for (const ClipRef& c : n.clips)
            j["clips"].push_back(
                {{"video_id", c.video_id}, {"t_start", c.t_start}, {"t_end", c.t_end}});
        out << j.dump() << "\n";
    }
}

std::vector<NegativeSample> read_negatives(const std::filesystem::path& path,
                                           const std::vector<GroundTruthSample>& dataset) {
    std::map<std::string, const GroundTruthSample*> by_id;
    for (const GroundTruthSample& s : dataset) by_id[s.procedure.procedure_id] = &s;

    std::ifstream in(path);
    if (!in) raise(ErrorCode::MissingFile, "missing negatives file " + path.string());
    std::vector<NegativeSample> out;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        ordered_json j;
        try {
            j = ordered_json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            raise(ErrorCode::MalformedInput,
                  path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        NegativeSample n;
        std::string pid = j.at("procedure_id").get<std::string>();
        auto it = by_id.find(pid);
        if (it == by_id.end())
            raise(ErrorCode::MalformedInput, path.string() + ":" + std::to_string(line_no) +
                                                 ": unknown procedure " + pid);
        n.base = *it->second;
        n.kind = violation_kind_from_name(j.at("kind").get<std::string>());
        n.modified_positions = j.at("modified_positions").get<std::vector<size_t>>();
        for (const auto& c : j.at("clips"))
            n.clips.push_back({c.at("video_id").get<std::string>(),
                               c.at("t_start").get<double>(), c.at("t_end").get<double>()});
        out.push_back(std::move(n));
    }
    return out;
}

}  // namespace stitcher
