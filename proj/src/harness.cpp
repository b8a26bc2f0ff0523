#include "stitcher/harness.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "stitcher/parallel.hpp"
#include "stitcher/rng.hpp"

namespace stitcher {

const char* distractor_strategy_name(DistractorStrategy s) {
    switch (s) {
        case DistractorStrategy::ReducedSearch: return "RS";
        case DistractorStrategy::FullVideo: return "Full";
        case DistractorStrategy::OtherPositive: return "Other-pos";
        case DistractorStrategy::RandMatch: return "Rand-match";
        case DistractorStrategy::SimMatch: return "Sim-match";
    }
    return "RS";
}

namespace {

CandidateSequence make_candidate(const std::string& procedure_id, std::vector<ClipRef> clips) {
    CandidateSequence c;
    c.procedure_id = procedure_id;
    c.clips = std::move(clips);
    c.switch_count = count_switches(c.clips);
    for (const ClipRef& clip : c.clips)
        if (std::find(c.source_videos.begin(), c.source_videos.end(), clip.video_id) ==
            c.source_videos.end())
            c.source_videos.push_back(clip.video_id);
    return c;
}

std::vector<CandidateSequence> reduced_search_candidates(const ProcedureMapping& mapping,
                                                         size_t want) {
    auto covers = greedy_top_k_covers(build_cover_sets(mapping), want, mapping.per_step.size());
    return expand_candidates(covers, mapping, want);
}

std::vector<CandidateSequence> full_video_candidates(const GroundTruthSample& gt,
                                                     const Corpus& corpus) {
    std::vector<CandidateSequence> out;
    std::vector<Embedding> step_embs;
    for (const ProcedureStep& s : gt.procedure.steps) step_embs.push_back(s.emb);
    LocalizerConfig forced;
    forced.step_drop_cost_override = 1e15;  // keep every step in the alignment
    for (const auto& [id, video] : corpus.videos()) {
        if (video.task != gt.procedure.task) continue;
        if (video.windows.size() < step_embs.size()) continue;
        DtwResult r = localize_steps(video, step_embs, forced);
        std::vector<ClipRef> clips;
        bool complete = true;
        for (const StepSpan& span : r.localization) {
            if (span.dropped) {
                complete = false;
                break;
            }
            clips.push_back({id, span.t_start, span.t_end});
        }
        if (complete) out.push_back(make_candidate(gt.procedure.procedure_id, std::move(clips)));
    }
    return out;
}

std::vector<CandidateSequence> other_positive_candidates(
    const GroundTruthSample& gt, const std::vector<GroundTruthSample>& test_set) {
    std::vector<CandidateSequence> out;
    const size_t n = gt.procedure.steps.size();
    for (const GroundTruthSample& other : test_set) {
        if (other.procedure.procedure_id == gt.procedure.procedure_id) continue;
        std::vector<ClipRef> clips = other.clips;
        if (clips.empty()) continue;
        if (clips.size() > n) clips.resize(n);                       // truncate
        while (clips.size() < n) clips.push_back(clips.back());     // pad with the last clip
        out.push_back(make_candidate(gt.procedure.procedure_id, std::move(clips)));
    }
    return out;
}

struct RandMatchSource {
    std::vector<const PoolEntry*> same_task;
    Rng rng;

    RandMatchSource(const GroundTruthSample& gt, const Corpus& corpus, const Pool& pool,
                    uint64_t seed)
        : rng(Rng::fork(seed, 0x52414E44)) {
        for (const PoolEntry& e : pool.entries)
            if (corpus.at(e.video_id).task == gt.procedure.task) same_task.push_back(&e);
    }

    bool can_generate() const { return !same_task.empty(); }

    CandidateSequence next(const GroundTruthSample& gt) {
        std::vector<ClipRef> clips;
        for (size_t t = 0; t < gt.procedure.steps.size(); ++t)
            clips.push_back(same_task[rng.bounded(same_task.size())]->clip());
        return make_candidate(gt.procedure.procedure_id, std::move(clips));
    }
};

std::vector<CandidateSequence> sim_match_candidates(const GroundTruthSample& gt,
                                                    const Corpus& corpus, const Pool& pool,
                                                    size_t want) {
    // per step: pool clips ranked by visual similarity to the step text
    const size_t n = gt.procedure.steps.size();
    std::vector<Embedding> clip_features(pool.entries.size());
    for (size_t e = 0; e < pool.entries.size(); ++e)
        clip_features[e] = clip_embedding(corpus.at(pool.entries[e].video_id),
                                          pool.entries[e].t_start, pool.entries[e].t_end);
    std::vector<std::vector<size_t>> ranked(n);
    for (size_t t = 0; t < n; ++t) {
        std::vector<std::pair<double, size_t>> scored;
        for (size_t e = 0; e < pool.entries.size(); ++e)
            scored.push_back({cosine_similarity(gt.procedure.steps[t].emb, clip_features[e]), e});
        std::sort(scored.begin(), scored.end(), [&](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            const PoolEntry &ea = pool.entries[a.second], &eb = pool.entries[b.second];
            if (ea.video_id != eb.video_id) return ea.video_id < eb.video_id;
            return ea.t_start < eb.t_start;
        });
        for (const auto& [s, e] : scored) ranked[t].push_back(e);
    }
    std::vector<CandidateSequence> out;
    for (size_t rank = 0; rank < want; ++rank) {
        std::vector<ClipRef> clips;
        for (size_t t = 0; t < n; ++t) {
            if (ranked[t].empty()) return out;
            clips.push_back(pool.entries[ranked[t][std::min(rank, ranked[t].size() - 1)]].clip());
        }
        out.push_back(make_candidate(gt.procedure.procedure_id, std::move(clips)));
    }
    return out;
}

}  // namespace

DistractorSet build_distractors(const GroundTruthSample& gt, const Corpus& corpus,
                                const ProcedureMapping& mapping, const Pool& pool,
                                const std::vector<GroundTruthSample>& test_set,
                                const DistractorConfig& config) {
    DistractorSet set;
    set.query = gt.procedure;
    set.ground_truth = make_candidate(gt.procedure.procedure_id, gt.clips);

    const size_t n = config.n_distractors;
    constexpr size_t kStrategies = 5;
    const DistractorStrategy order[kStrategies] = {
        DistractorStrategy::ReducedSearch, DistractorStrategy::FullVideo,
        DistractorStrategy::OtherPositive, DistractorStrategy::RandMatch,
        DistractorStrategy::SimMatch};
    size_t quota[kStrategies];
    for (size_t i = 0; i < kStrategies; ++i)
        quota[i] = n / kStrategies + (i < n % kStrategies ? 1 : 0);

    std::set<std::vector<ClipRef>> seen;
    seen.insert(set.ground_truth.clips);
    auto push = [&](CandidateSequence&& c, DistractorStrategy tag) {
        if (seen.count(c.clips)) return false;
        seen.insert(c.clips);
        set.distractors.push_back(std::move(c));
        set.tags.push_back(tag);
        return true;
    };

    RandMatchSource rand_source(gt, corpus, pool, config.seed);
    size_t yields[kStrategies] = {0, 0, 0, 0, 0};

    for (size_t si = 0; si < kStrategies; ++si) {
        size_t taken = 0;
        switch (order[si]) {
            case DistractorStrategy::ReducedSearch: {
                for (auto& c : reduced_search_candidates(mapping, quota[si] * 3 + 8)) {
                    if (taken >= quota[si]) break;
                    if (push(std::move(c), order[si])) ++taken;
                }
                break;
            }
            case DistractorStrategy::FullVideo: {
                for (auto& c : full_video_candidates(gt, corpus)) {
                    if (taken >= quota[si]) break;
                    if (push(std::move(c), order[si])) ++taken;
                }
                break;
            }
            case DistractorStrategy::OtherPositive: {
                for (auto& c : other_positive_candidates(gt, test_set)) {
                    if (taken >= quota[si]) break;
                    if (push(std::move(c), order[si])) ++taken;
                }
                break;
            }
            case DistractorStrategy::RandMatch: {
                size_t attempts = 0;
                while (taken < quota[si] && rand_source.can_generate() &&
                       attempts < quota[si] * 50 + 100) {
                    ++attempts;
                    if (push(rand_source.next(gt), order[si])) ++taken;
                }
                break;
            }
            case DistractorStrategy::SimMatch: {
                for (auto& c : sim_match_candidates(gt, corpus, pool, quota[si] * 2 + 4)) {
                    if (taken >= quota[si]) break;
                    if (push(std::move(c), order[si])) ++taken;
                }
                break;
            }
        }
        yields[si] = taken;
        if (taken < quota[si]) set.backfilled[order[si]] = quota[si] - taken;
    }

    size_t attempts = 0;
    const size_t attempt_cap = n * 200 + 1000;
    while (set.distractors.size() < n && rand_source.can_generate() && attempts < attempt_cap) {
        ++attempts;
        push(rand_source.next(gt), DistractorStrategy::RandMatch);
    }
    if (set.distractors.size() < n) {
        std::ostringstream msg;
        msg << "only " << set.distractors.size() << " of " << n
            << " distinct distractors constructible for " << gt.procedure.procedure_id
            << "; per-strategy yields:";
        for (size_t si = 0; si < kStrategies; ++si)
            msg << " " << distractor_strategy_name(order[si]) << "=" << yields[si];
        raise(ErrorCode::InsufficientDistractors, msg.str());
    }
    return set;
}

std::vector<DistractorSet> build_distractor_sets(const Corpus& corpus, const Pool& pool,
                                                 const std::vector<GroundTruthSample>& test_set,
                                                 const DistractorConfig& config, int threads) {
    std::vector<DistractorSet> sets(test_set.size());
    parallel_for(test_set.size(), threads, [&](size_t qi) {
        ProcedureMapping mapping =
            build_mapping(test_set[qi].procedure, pool, config.threshold, config.top_s);
        DistractorConfig per_query = config;
        per_query.seed = Rng::splitmix64(config.seed + qi);
        sets[qi] = build_distractors(test_set[qi], corpus, mapping, pool, test_set, per_query);
    });
    return sets;
}

// --- metrics ----------------------------------------------------------------------

double median_rank(const std::vector<int>& ranks) {
    if (ranks.empty()) raise(ErrorCode::EmptyInstance, "median of an empty rank list");
    std::vector<int> sorted = ranks;
    std::sort(sorted.begin(), sorted.end());
    size_t n = sorted.size();
    if (n % 2 == 1) return static_cast<double>(sorted[n / 2]);
    return 0.5 * (static_cast<double>(sorted[n / 2 - 1]) + static_cast<double>(sorted[n / 2]));
}

double recall_at_k(const std::vector<int>& ranks, int k) {
    if (k < 1) raise(ErrorCode::MalformedInput, "recall needs k >= 1");
    if (ranks.empty()) return 0.0;
    size_t hit = 0;
    for (int r : ranks)
        if (r <= k) ++hit;
    return static_cast<double>(hit) / static_cast<double>(ranks.size());
}

RetrievalReport evaluate_scorer(const std::vector<DistractorSet>& sets, const ScoreFn& scorer,
                                const std::vector<int>& recall_ks, int threads) {
    RetrievalReport report;
    report.ranks.assign(sets.size(), 0);
    parallel_for(sets.size(), threads, [&](size_t qi) {
        const DistractorSet& set = sets[qi];
        double gt_score = scorer(qi, 0, set.query, set.ground_truth);
        int worse = 0, tied = 0;
        for (size_t d = 0; d < set.distractors.size(); ++d) {
            double s = scorer(qi, d + 1, set.query, set.distractors[d]);
            if (s > gt_score)
                ++worse;
            else if (s == gt_score)
                ++tied;
        }
        report.ranks[qi] = 1 + worse + tied;  // pessimistic tie handling
    });
    report.median = median_rank(report.ranks);
    for (int k : recall_ks) report.recall[k] = recall_at_k(report.ranks, k);
    return report;
}

RetrievalReport baseline_similarity_rank(const std::vector<DistractorSet>& sets,
                                         const Corpus& corpus, const std::vector<int>& recall_ks,
                                         int threads) {
    ScoreFn fn = [&corpus](size_t, size_t, const Procedure& q, const CandidateSequence& c) {
        double acc = 0.0;
        for (size_t t = 0; t < c.clips.size(); ++t) {
            Embedding feat = clip_embedding(corpus.at(c.clips[t].video_id), c.clips[t].t_start,
                                            c.clips[t].t_end);
            acc += cosine_similarity(q.steps[t].emb, feat);
        }
        return acc / static_cast<double>(c.clips.size());
    };
    return evaluate_scorer(sets, fn, recall_ks, threads);
}

RetrievalReport baseline_text_only_rank(const std::vector<DistractorSet>& sets,
                                        const Corpus& corpus, const std::vector<int>& recall_ks,
                                        int threads) {
    ScoreFn fn = [&corpus](size_t, size_t, const Procedure& q, const CandidateSequence& c) {
        double acc = 0.0;
        for (size_t t = 0; t < c.clips.size(); ++t) {
            const VideoRecord& video = corpus.at(c.clips[t].video_id);
            double step_acc = 0.0;
            size_t overlapping = 0;
            for (const AsrSegment& seg : video.asr) {
                if (seg.t_start < c.clips[t].t_end && seg.t_end > c.clips[t].t_start) {
                    step_acc += cosine_similarity(q.steps[t].emb, seg.emb);
                    ++overlapping;
                }
            }
            if (overlapping > 0) acc += step_acc / static_cast<double>(overlapping);
        }
        return acc / static_cast<double>(c.clips.size());
    };
    return evaluate_scorer(sets, fn, recall_ks, threads);
}

RetrievalReport evaluate_model(const std::vector<DistractorSet>& sets,
                               const EvaluatorModel& model, const Corpus& corpus,
                               const std::vector<int>& recall_ks, int threads) {
    Scorer scorer(model);
    ScoreFn fn = [&](size_t, size_t, const Procedure& q, const CandidateSequence& c) {
        return scorer.score(q, c.clips, corpus);
    };
    return evaluate_scorer(sets, fn, recall_ks, threads);
}

// --- reports ---------------------------------------------------------------------

namespace {

std::string format_metric(double v) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(4) << v;
    return out.str();
}

}  // namespace

void write_report_csv(const std::vector<MethodReport>& methods,
                      const std::vector<int>& recall_ks, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) raise(ErrorCode::MissingFile, "cannot write " + path.string());
    out << "method,MR";
    for (int k : recall_ks) out << ",R@" << k;
    out << "\n";
    for (const MethodReport& m : methods) {
        out << m.method << "," << format_metric(m.report.median);
        for (int k : recall_ks) out << "," << format_metric(m.report.recall.at(k));
        out << "\n";
    }
}

std::vector<MethodReport> run_experiment(const Corpus& corpus, const Pool& pool,
                                         const std::vector<GroundTruthSample>& test_set,
                                         const EvaluatorModel& model,
                                         const ExperimentConfig& config) {
    auto sets = build_distractor_sets(corpus, pool, test_set, config.distractors,
                                      config.threads);
    std::vector<MethodReport> out;
    out.push_back({"evaluator", evaluate_model(sets, model, corpus, config.recall_ks,
                                               config.threads)});
    out.push_back({"similarity",
                   baseline_similarity_rank(sets, corpus, config.recall_ks, config.threads)});
    out.push_back({"text_only",
                   baseline_text_only_rank(sets, corpus, config.recall_ks, config.threads)});
    return out;
}

namespace {

std::string kinds_label(const std::vector<ViolationKind>& kinds) {
    std::string out;
    for (ViolationKind k : kinds) {
        if (!out.empty()) out += ",";
        switch (k) {
            case ViolationKind::StepViolation: out += "cor"; break;
            case ViolationKind::ContinuityViolation: out += "con"; break;
            case ViolationKind::StateViolation: out += "osc"; break;
        }
    }
    return out;
}

}  // namespace

std::vector<AblationRow> run_ablation(const Corpus& corpus, const Pool& pool,
                                      const std::vector<GroundTruthSample>& train_set,
                                      const std::vector<GroundTruthSample>& test_set,
                                      const std::vector<std::vector<ViolationKind>>& rows,
                                      const EvaluatorConfig& model_config,
                                      const ExperimentConfig& config) {
    auto sets = build_distractor_sets(corpus, pool, test_set, config.distractors,
                                      config.threads);
    std::vector<AblationRow> out;
    for (const auto& kinds : rows) {
        auto negatives = generate_negatives(train_set, pool, config.distractors.threshold, kinds,
                                            model_config.negatives_per_positive,
                                            model_config.seed);
        std::vector<GroundTruthSample> neg_samples;
        neg_samples.reserve(negatives.size());
        for (const NegativeSample& n : negatives) neg_samples.push_back(negative_as_sample(n));
        TrainResult trained = train(model_config, corpus, train_set, neg_samples);
        out.push_back({kinds_label(kinds), evaluate_model(sets, trained.model, corpus,
                                                          config.recall_ks, config.threads)});
    }
    return out;
}

void write_ablation_csv(const std::vector<AblationRow>& rows, const std::vector<int>& recall_ks,
                        const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) raise(ErrorCode::MissingFile, "cannot write " + path.string());
    out << "neg_kinds,MR";
    for (int k : recall_ks) out << ",R@" << k;
    out << "\n";
    for (const AblationRow& row : rows) {
        out << "\"" << row.kinds_label << "\"," << format_metric(row.report.median);
        for (int k : recall_ks) out << "," << format_metric(row.report.recall.at(k));
        out << "\n";
    }
}

// --- capture -----------------------------------------------------------------------

CaptureCurve capture_curve(const Corpus& corpus, const Pool& pool,
                           const std::vector<GroundTruthSample>& queries,
                           const std::vector<size_t>& ks, double threshold, size_t top_s,
                           uint64_t seed, int threads) {
    CaptureCurve curve;
    curve.ks = ks;
    const size_t max_k = *std::max_element(ks.begin(), ks.end());

    struct PerQuery {
        std::vector<char> setcover, random_pick, edited_nn;  // per K
    };
    std::vector<PerQuery> hits(queries.size());

    parallel_for(queries.size(), threads, [&](size_t qi) {
        const GroundTruthSample& gt = queries[qi];
        ProcedureMapping mapping = build_mapping(gt.procedure, pool, threshold, top_s);
        PerQuery& h = hits[qi];
        h.setcover.assign(ks.size(), 0);
        h.random_pick.assign(ks.size(), 0);
        h.edited_nn.assign(ks.size(), 0);

        // set cover: the cover stream is k-independent (fixed enumeration
        // width), so capture is monotone in k and the earliest capturing k
        // can be found by binary search.
        auto cover_sets = build_cover_sets(mapping);
        auto captured_at = [&](size_t k) {
            auto covers = greedy_top_k_covers(cover_sets, k, mapping.per_step.size());
            for (const auto& cand : expand_candidates(covers, mapping, k))
                if (cand.clips == gt.clips) return true;
            return false;
        };
        size_t found_at = max_k + 1;
        if (captured_at(max_k)) {
            size_t lo = 1, hi = max_k;
            while (lo < hi) {
                size_t mid = lo + (hi - lo) / 2;
                if (captured_at(mid))
                    hi = mid;
                else
                    lo = mid + 1;
            }
            found_at = lo;
        }
        for (size_t ki = 0; ki < ks.size(); ++ki) h.setcover[ki] = found_at <= ks[ki] ? 1 : 0;

        // random: per-step uniform picks from the mapping, one shared stream
        Rng rng = Rng::fork(seed, 0xCA70 + qi);
        bool random_hit = false;
        for (size_t draw = 0; draw < max_k; ++draw) {
            std::vector<ClipRef> clips;
            bool ok = true;
            for (const auto& list : mapping.per_step) {
                if (list.empty()) {
                    ok = false;
                    break;
                }
                clips.push_back(list[rng.bounded(list.size())].clip);
            }
            if (ok && clips == gt.clips) random_hit = true;
            for (size_t ki = 0; ki < ks.size(); ++ki)
                if (draw + 1 == ks[ki]) h.random_pick[ki] = random_hit ? 1 : 0;
        }

        // edited-NN: best-covering base videos, gaps filled with the
        // step-wise nearest neighbour
        std::vector<std::pair<double, size_t>> base_rank;
        for (size_t v = 0; v < cover_sets.size(); ++v) {
            double s = 0.0;
            for (const auto& [step, entry] : cover_sets[v].covered) s += entry.score;
            base_rank.push_back({s, v});
        }
        std::sort(base_rank.begin(), base_rank.end(), [&](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return cover_sets[a.second].video_id < cover_sets[b.second].video_id;
        });
        bool nn_hit = false;
        size_t variants = std::min(max_k, base_rank.size());
        size_t vi = 0;
        for (size_t ki = 0; ki < ks.size(); ++ki) {
            for (; vi < std::min(variants, ks[ki]); ++vi) {
                const CoverSet& base = cover_sets[base_rank[vi].second];
                std::vector<ClipRef> clips;
                bool ok = true;
                for (size_t t = 0; t < mapping.per_step.size(); ++t) {
                    auto it = base.covered.find(t);
                    if (it != base.covered.end()) {
                        clips.push_back(it->second.clip);
                    } else if (!mapping.per_step[t].empty()) {
                        clips.push_back(mapping.per_step[t].front().clip);
                    } else {
                        ok = false;
                        break;
                    }
                }
                if (ok && clips == gt.clips) nn_hit = true;
            }
            h.edited_nn[ki] = nn_hit ? 1 : 0;
        }
    });

    for (size_t ki = 0; ki < ks.size(); ++ki) {
        double sc = 0, rp = 0, nn = 0;
        for (const PerQuery& h : hits) {
            sc += h.setcover[ki];
            rp += h.random_pick[ki];
            nn += h.edited_nn[ki];
        }
        double n = static_cast<double>(queries.size());
        curve.setcover.push_back(sc / n);
        curve.random_pick.push_back(rp / n);
        curve.edited_nn.push_back(nn / n);
    }
    return curve;
}

void write_capture_csv(const CaptureCurve& curve, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) raise(ErrorCode::MissingFile, "cannot write " + path.string());
    out << "K,setcover,random,edited_nn\n";
    for (size_t i = 0; i < curve.ks.size(); ++i)
        out << curve.ks[i] << "," << format_metric(curve.setcover[i]) << ","
            << format_metric(curve.random_pick[i]) << "," << format_metric(curve.edited_nn[i])
            << "\n";
}

}  // namespace stitcher
