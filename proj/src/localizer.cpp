#include "stitcher/localizer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "stitcher/parallel.hpp"

namespace stitcher {

using nlohmann::ordered_json;

namespace {

double percentile(std::vector<double> values, double p) {
    if (values.empty()) return 0.0;
    std::sort(values.begin(), values.end());
    if (values.size() == 1) return values.front();
    double idx = p * static_cast<double>(values.size() - 1);
    size_t lo = static_cast<size_t>(idx);
    size_t hi = std::min(lo + 1, values.size() - 1);
    double frac = idx - static_cast<double>(lo);
    return values[lo] * (1.0 - frac) + values[hi] * frac;
}

}  // namespace

AlignmentCostMatrix build_cost_matrix(const VideoRecord& video,
                                      const std::vector<Embedding>& step_embs,
                                      const LocalizerConfig& config) {
    if (video.windows.empty() || step_embs.empty())
        raise(ErrorCode::EmptyInstance, "cost matrix needs >=1 window and >=1 step");
    AlignmentCostMatrix m;
    m.n_steps = step_embs.size();
    m.n_windows = video.windows.size();
    m.costs.resize(m.n_steps * m.n_windows);
    for (size_t i = 0; i < m.n_steps; ++i)
        for (size_t j = 0; j < m.n_windows; ++j)
            m.at(i, j) = 1.0 - cosine_similarity(step_embs[i], video.windows[j].emb);
    if (config.drop_cost_override) {
        m.set_uniform_drop_cost(*config.drop_cost_override);
    } else {
        m.window_drop_costs.resize(m.n_windows);
        std::vector<double> column(m.n_steps);
        for (size_t j = 0; j < m.n_windows; ++j) {
            for (size_t i = 0; i < m.n_steps; ++i) column[i] = m.at(i, j);
            m.window_drop_costs[j] = percentile(column, config.drop_cost_percentile);
        }
    }
    m.step_drop_cost =
        config.step_drop_cost_override ? *config.step_drop_cost_override : config.step_drop_cost;
    return m;
}

// DP over two state families:
//   closed[i][j]: steps 1..i finalized (matched-and-closed or dropped),
//                 windows 1..j consumed, no open run.
//   open[i][j]:   steps 1..i-1 finalized, step i's run currently ends at
//                 window j (window j matched to step i).
// Transition preference on cost ties decides the backtrack: close-run over
// window drop over step drop, and run extension over run start, which
// prefers matches over drops and earlier windows.
DtwResult drop_dtw(const AlignmentCostMatrix& m) {
    if (m.n_steps == 0 || m.n_windows == 0 || m.costs.empty())
        raise(ErrorCode::EmptyInstance, "drop_dtw on an empty cost matrix");
    if (m.window_drop_costs.size() != m.n_windows)
        raise(ErrorCode::MalformedInput, "window_drop_costs must have one entry per window");
    const size_t S = m.n_steps, W = m.n_windows;
    const double inf = std::numeric_limits<double>::infinity();

    enum Move : uint8_t { None, CloseRun, DropWindow, DropStep, StartRun, ExtendRun };
    auto idx = [W](size_t i, size_t j) { return i * (W + 1) + j; };

    std::vector<double> closed((S + 1) * (W + 1), inf), open((S + 1) * (W + 1), inf);
    std::vector<Move> closed_from((S + 1) * (W + 1), None), open_from((S + 1) * (W + 1), None);

    closed[idx(0, 0)] = 0.0;
    for (size_t j = 1; j <= W; ++j) {
        closed[idx(0, j)] = closed[idx(0, j - 1)] + m.window_drop_costs[j - 1];
        closed_from[idx(0, j)] = DropWindow;
    }
    for (size_t i = 1; i <= S; ++i) {
        closed[idx(i, 0)] = closed[idx(i - 1, 0)] + m.step_drop_cost;
        closed_from[idx(i, 0)] = DropStep;
    }

    for (size_t i = 1; i <= S; ++i) {
        for (size_t j = 1; j <= W; ++j) {
            const double c = m.at(i - 1, j - 1);
            // open: extend beats start on ties (prefers longer, earlier runs)
            double best = open[idx(i, j - 1)] + c;
            Move from = ExtendRun;
            double start = closed[idx(i - 1, j - 1)] + c;
            if (start < best) {
                best = start;
                from = StartRun;
            }
            open[idx(i, j)] = best;
            open_from[idx(i, j)] = from;

            // closed: close-run, then drop-window, then drop-step
            best = open[idx(i, j)];
            from = CloseRun;
            double dw = closed[idx(i, j - 1)] + m.window_drop_costs[j - 1];
            if (dw < best) {
                best = dw;
                from = DropWindow;
            }
            double ds = closed[idx(i - 1, j)] + m.step_drop_cost;
            if (ds < best) {
                best = ds;
                from = DropStep;
            }
            closed[idx(i, j)] = best;
            closed_from[idx(i, j)] = from;
        }
    }

    DtwResult result;
    result.total_cost = closed[idx(S, W)];
    result.localization.assign(S, StepSpan{});

    size_t i = S, j = W;
    bool in_open = false;
    while (i > 0 || j > 0) {
        if (!in_open) {
            switch (closed_from[idx(i, j)]) {
                case CloseRun:
                    result.localization[i - 1].dropped = false;
                    result.localization[i - 1].last_window = j - 1;
                    in_open = true;
                    break;
                case DropWindow:
                    --j;
                    break;
                case DropStep:
                    --i;
                    break;
                default:
                    raise(ErrorCode::NumericFailure, "drop_dtw backtrack corrupt");
            }
        } else {
            if (open_from[idx(i, j)] == ExtendRun) {
                --j;
            } else {  // StartRun
                result.localization[i - 1].first_window = j - 1;
                in_open = false;
                --i;
                --j;
            }
        }
    }
    return result;
}

DtwResult localize_steps(const VideoRecord& video, const std::vector<Embedding>& step_embs,
                         const LocalizerConfig& config) {
    DtwResult r = drop_dtw(build_cost_matrix(video, step_embs, config));
    for (StepSpan& span : r.localization) {
        if (span.dropped) continue;
        span.t_start = video.windows[span.first_window].t_start;
        span.t_end = video.windows[span.last_window].t_end;
    }
    return r;
}

Pool localize_corpus(const Corpus& corpus, const LocalizerConfig& config, int threads) {
    std::vector<const VideoRecord*> annotated;
    size_t skipped = 0;
    for (const auto& [id, v] : corpus.videos()) {
        if (v.steps.empty() || v.windows.empty())
            ++skipped;
        else
            annotated.push_back(&v);
    }

    std::vector<std::vector<PoolEntry>> per_video(annotated.size());
    parallel_for(annotated.size(), threads, [&](size_t vi) {
        const VideoRecord& v = *annotated[vi];
        std::vector<Embedding> step_embs;
        step_embs.reserve(v.steps.size());
        for (const StepAnnotation& s : v.steps) step_embs.push_back(s.emb);
        DtwResult r = localize_steps(v, step_embs, config);
        for (size_t i = 0; i < r.localization.size(); ++i) {
            const StepSpan& span = r.localization[i];
            if (span.dropped) continue;
            PoolEntry e;
            e.video_id = v.video_id;
            e.t_start = span.t_start;
            e.t_end = span.t_end;
            e.step_text = v.steps[i].text;
            e.step_emb = v.steps[i].emb;
            per_video[vi].push_back(std::move(e));
        }
    });

    Pool pool;
    pool.skipped_videos = skipped;
    for (auto& entries : per_video)
        for (auto& e : entries) pool.entries.push_back(std::move(e));
    return pool;
}

void write_pool(const Pool& pool, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) raise(ErrorCode::MissingFile, "cannot write " + path.string());
    for (const PoolEntry& e : pool.entries) {
        ordered_json j;
        j["video_id"] = e.video_id;
        j["t_start"] = e.t_start;
        j["t_end"] = e.t_end;
        j["step_text"] = e.step_text;
        out << j.dump() << "\n";
    }
}

Pool read_pool(const std::filesystem::path& path, const Corpus& corpus) {
    std::ifstream in(path);
    if (!in) raise(ErrorCode::MissingFile, "missing pool file " + path.string());
    Pool pool;
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
        PoolEntry e;
        e.video_id = j.at("video_id").get<std::string>();
        e.t_start = j.at("t_start").get<double>();
        e.t_end = j.at("t_end").get<double>();
        e.step_text = j.at("step_text").get<std::string>();
        const VideoRecord& v = corpus.at(e.video_id);
        bool found = false;
        for (const StepAnnotation& s : v.steps) {
            if (s.text == e.step_text) {
                e.step_emb = s.emb;
                found = true;
                break;
            }
        }
        if (!found)
            raise(ErrorCode::MalformedInput, path.string() + ":" + std::to_string(line_no) +
                                                 ": step text not annotated on " + e.video_id);
        pool.entries.push_back(std::move(e));
    }
    return pool;
}

}  // namespace stitcher
