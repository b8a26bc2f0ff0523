#include "stitcher/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include "stitcher/rng.hpp"

namespace stitcher {

namespace {

Embedding random_unit(size_t dim, Rng& rng) {
    Embedding v(dim);
    double norm = 0.0;
    for (float& x : v) {
        x = static_cast<float>(rng.gaussian());
        norm += static_cast<double>(x) * x;
    }
    norm = std::sqrt(norm);
    for (float& x : v) x = static_cast<float>(x / norm);
    return v;
}

Embedding perturb_unit(const Embedding& base, double noise, Rng& rng) {
    Embedding v(base.size());
    double norm = 0.0;
    for (size_t k = 0; k < v.size(); ++k) {
        v[k] = base[k] + static_cast<float>(noise * rng.gaussian());
        norm += static_cast<double>(v[k]) * v[k];
    }
    norm = std::sqrt(norm);
    for (float& x : v) x = static_cast<float>(x / norm);
    return v;
}

// unit vector at angle acos(cos_target) from base
Embedding rotate_from(const Embedding& base, double cos_target, Rng& rng) {
    Embedding g = random_unit(base.size(), rng);
    double dot = 0.0;
    for (size_t k = 0; k < g.size(); ++k) dot += static_cast<double>(g[k]) * base[k];
    Embedding perp(base.size());
    double norm = 0.0;
    for (size_t k = 0; k < g.size(); ++k) {
        perp[k] = g[k] - static_cast<float>(dot * base[k]);
        norm += static_cast<double>(perp[k]) * perp[k];
    }
    norm = std::sqrt(norm);
    double sin_target = std::sqrt(std::max(0.0, 1.0 - cos_target * cos_target));
    Embedding out(base.size());
    for (size_t k = 0; k < g.size(); ++k)
        out[k] = static_cast<float>(cos_target * base[k] + sin_target * perp[k] / norm);
    return out;
}

// compositions of n into ordered parts of size 2..4 with at least two parts
void compositions(size_t n, std::vector<size_t>& current, std::vector<std::vector<size_t>>& out) {
    if (n == 0) {
        if (current.size() >= 2) out.push_back(current);
        return;
    }
    for (size_t part = 2; part <= 4 && part <= n; ++part) {
        current.push_back(part);
        compositions(n - part, current, out);
        current.pop_back();
    }
}

std::string step_text(size_t task, size_t type) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "task%zu-step%02zu", task, type);
    return buf;
}

}  // namespace

SynthData generate_synthetic(const SynthConfig& config) {
    if (config.steps_per_task % 2 != 0)
        raise(ErrorCode::MalformedInput, "steps_per_task must be even");
    if (config.query_steps > config.steps_per_task)
        raise(ErrorCode::MalformedInput, "query_steps cannot exceed steps_per_task");

    Rng rng = Rng::fork(config.seed, 0x5D47);

    // prototypes: sibling pairs (2j, 2j+1)
    std::vector<std::vector<Embedding>> proto(config.n_tasks);
    for (size_t t = 0; t < config.n_tasks; ++t) {
        proto[t].resize(config.steps_per_task);
        for (size_t s = 0; s < config.steps_per_task; s += 2) {
            proto[t][s] = random_unit(config.dim, rng);
            proto[t][s + 1] = rotate_from(proto[t][s], config.sibling_cos, rng);
        }
    }
    Embedding time_axis = random_unit(config.dim, rng);

    // planted videos: every contiguous block of length 2..4 per task
    struct BlockKey {
        size_t task, start, len;
        bool operator<(const BlockKey& o) const {
            return std::tie(task, start, len) < std::tie(o.task, o.start, o.len);
        }
    };
    std::map<BlockKey, std::string> planted;

    SynthData data;
    size_t video_counter = 0;
    auto add_video = [&](size_t task, const std::vector<size_t>& shown_types) {
        char id[24];
        std::snprintf(id, sizeof(id), "v%04zu", video_counter++);
        VideoRecord v;
        v.video_id = id;
        v.task = "task" + std::to_string(task);
        v.duration_s =
            static_cast<double>(shown_types.size() * config.windows_per_step);
        Embedding signature = random_unit(config.dim, rng);
        for (size_t pos = 0; pos < shown_types.size(); ++pos) {
            size_t type = shown_types[pos];
            double seg_start = static_cast<double>(pos * config.windows_per_step);
            double seg_end = seg_start + static_cast<double>(config.windows_per_step);
            for (size_t wi = 0; wi < config.windows_per_step; ++wi) {
                Window w;
                w.t_start = seg_start + static_cast<double>(wi);
                w.t_end = w.t_start + 1.0;
                double t_mid = (w.t_start + 0.5) / v.duration_s;
                Embedding e(config.dim);
                double norm = 0.0;
                for (size_t k = 0; k < config.dim; ++k) {
                    double x = proto[task][type][k] +
                               config.video_signature * signature[k] +
                               config.time_drift * t_mid * time_axis[k] +
                               config.window_noise * rng.gaussian();
                    e[k] = static_cast<float>(x);
                    norm += x * x;
                }
                norm = std::sqrt(norm);
                for (float& x : e) x = static_cast<float>(x / norm);
                w.emb = std::move(e);
                v.windows.push_back(std::move(w));
            }
            StepAnnotation st;
            st.t_start = seg_start;
            st.t_end = seg_end;
            st.text = step_text(task, type);
            st.emb = perturb_unit(proto[task][type], config.text_noise, rng);
            v.steps.push_back(std::move(st));

            AsrSegment seg;
            seg.t_start = seg_start;
            seg.t_end = seg_end;
            seg.text = "narration about " + step_text(task, type);
            seg.emb = perturb_unit(proto[task][type], config.asr_noise, rng);
            v.asr.push_back(std::move(seg));
        }
        data.corpus.add(std::move(v));
        return std::string(id);
    };

    for (size_t task = 0; task < config.n_tasks; ++task) {
        for (size_t len = 2; len <= 4; ++len) {
            for (size_t start = 0; start + len <= config.steps_per_task; ++start) {
                std::vector<size_t> types;
                for (size_t k = 0; k < len; ++k) types.push_back(start + k);
                planted[{task, start, len}] = add_video(task, types);
            }
        }
    }
    if (video_counter > config.n_videos)
        raise(ErrorCode::MalformedInput,
              "n_videos too small for the planted blocks (need " +
                  std::to_string(video_counter) + ")");

    // background videos: random subsets, half of them order-permuted
    size_t bg_task = 0;
    while (video_counter < config.n_videos) {
        size_t task = bg_task++ % config.n_tasks;
        size_t count = 2 + rng.bounded(3);
        std::set<size_t> chosen;
        while (chosen.size() < count) chosen.insert(rng.bounded(config.steps_per_task));
        std::vector<size_t> types(chosen.begin(), chosen.end());
        if (rng.uniform() < config.permuted_fraction) rng.shuffle(types);
        add_video(task, types);
    }

    // queries: contiguous type range split into planted blocks
    std::vector<std::vector<size_t>> splits;
    {
        std::vector<size_t> current;
        compositions(config.query_steps, current, splits);
    }
    if (splits.empty()) raise(ErrorCode::MalformedInput, "query_steps admits no block split");

    for (size_t qi = 0; qi < config.n_queries; ++qi) {
        size_t task = qi % config.n_tasks;
        size_t start = rng.bounded(config.steps_per_task - config.query_steps + 1);
        const std::vector<size_t>& split = splits[rng.bounded(splits.size())];

        GroundTruthSample sample;
        sample.provenance = Provenance::RealVideo;
        char pid[16];
        std::snprintf(pid, sizeof(pid), "q%04zu", qi);
        sample.procedure.procedure_id = pid;
        sample.procedure.task = "task" + std::to_string(task);

        size_t offset = start;
        for (size_t part : split) {
            const std::string& video_id = planted.at({task, offset, part});
            for (size_t k = 0; k < part; ++k) {
                size_t type = offset + k;
                ProcedureStep step;
                step.text = step_text(task, type);
                step.emb = perturb_unit(proto[task][type], config.text_noise, rng);
                sample.procedure.steps.push_back(std::move(step));
                double t0 = static_cast<double>(k * config.windows_per_step);
                sample.clips.push_back(
                    {video_id, t0, t0 + static_cast<double>(config.windows_per_step)});
            }
            offset += part;
        }
        data.queries.push_back(std::move(sample));
    }
    return data;
}

}  // namespace stitcher
