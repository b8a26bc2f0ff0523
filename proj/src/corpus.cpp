#include "stitcher/corpus.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace stitcher {

using nlohmann::ordered_json;

const char* error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::MalformedInput: return "MalformedInput";
        case ErrorCode::MissingFile: return "MissingFile";
        case ErrorCode::DimMismatch: return "DimMismatch";
        case ErrorCode::EmptyClip: return "EmptyClip";
        case ErrorCode::ZeroVector: return "ZeroVector";
        case ErrorCode::EmptyInstance: return "EmptyInstance";
        case ErrorCode::NoCandidates: return "NoCandidates";
        case ErrorCode::CannotViolate: return "CannotViolate";
        case ErrorCode::LlmFormatError: return "LlmFormatError";
        case ErrorCode::LlmUnavailable: return "LlmUnavailable";
        case ErrorCode::InsufficientDistractors: return "InsufficientDistractors";
        case ErrorCode::NumericFailure: return "NumericFailure";
    }
    return "Unknown";
}

const char* provenance_name(Provenance p) {
    switch (p) {
        case Provenance::RealVideo: return "real-video";
        case Provenance::LlmMixed: return "llm-mixed";
        case Provenance::DetourDerived: return "detour-derived";
    }
    return "real-video";
}

Provenance provenance_from_name(const std::string& name) {
    if (name == "real-video") return Provenance::RealVideo;
    if (name == "llm-mixed") return Provenance::LlmMixed;
    if (name == "detour-derived") return Provenance::DetourDerived;
    raise(ErrorCode::MalformedInput, "unknown provenance label '" + name + "'");
}

bool is_finite(const Embedding& e) {
    for (float v : e)
        if (!std::isfinite(v)) return false;
    return true;
}

double l2_norm(const Embedding& e) {
    double s = 0.0;
    for (float v : e) s += static_cast<double>(v) * v;
    return std::sqrt(s);
}

double cosine_similarity(const Embedding& a, const Embedding& b) {
    if (a.size() != b.size())
        raise(ErrorCode::DimMismatch,
              "cosine over dims " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        double x = a[i], y = b[i];
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if (na == 0.0 || nb == 0.0) raise(ErrorCode::ZeroVector, "cosine of a zero-norm vector");
    double c = dot / (std::sqrt(na) * std::sqrt(nb));
    return std::min(1.0, std::max(-1.0, c));
}

Embedding clip_embedding(const VideoRecord& video, double t_start, double t_end) {
    std::vector<double> acc;
    size_t count = 0;
    for (const Window& w : video.windows) {
        double mid = 0.5 * (w.t_start + w.t_end);
        if (mid >= t_start && mid < t_end) {
            if (acc.empty()) acc.assign(w.emb.size(), 0.0);
            for (size_t k = 0; k < w.emb.size(); ++k) acc[k] += w.emb[k];
            ++count;
        }
    }
    if (count == 0)
        raise(ErrorCode::EmptyClip, "no window midpoint in [" + std::to_string(t_start) + ", " +
                                        std::to_string(t_end) + ") of video " + video.video_id);
    Embedding out(acc.size());
    for (size_t k = 0; k < acc.size(); ++k)
        out[k] = static_cast<float>(acc[k] / static_cast<double>(count));
    return out;
}

// --- Corpus ---------------------------------------------------------------

namespace {

void validate_video(const VideoRecord& v) {
    if (v.video_id.empty()) raise(ErrorCode::MalformedInput, "video with empty video_id");
    if (v.duration_s < 0.0)
        raise(ErrorCode::MalformedInput, v.video_id + ": negative duration");
    double prev_end = 0.0;
    bool first = true;
    for (const Window& w : v.windows) {
        if (!(w.t_start < w.t_end))
            raise(ErrorCode::MalformedInput, v.video_id + ": window with t_start >= t_end");
        if (w.t_start < 0.0 || w.t_end > v.duration_s + 1e-9)
            raise(ErrorCode::MalformedInput, v.video_id + ": window outside [0, duration]");
        if (!first && w.t_start < prev_end - 1e-9)
            raise(ErrorCode::MalformedInput, v.video_id + ": overlapping or unsorted windows");
        prev_end = w.t_end;
        first = false;
        if (!is_finite(w.emb))
            raise(ErrorCode::MalformedInput, v.video_id + ": non-finite window embedding");
    }
    for (const StepAnnotation& s : v.steps)
        if (!is_finite(s.emb))
            raise(ErrorCode::MalformedInput, v.video_id + ": non-finite step embedding");
    for (const AsrSegment& s : v.asr)
        if (!is_finite(s.emb))
            raise(ErrorCode::MalformedInput, v.video_id + ": non-finite asr embedding");
}

size_t embedding_dim_of(const VideoRecord& v) {
    if (!v.windows.empty()) return v.windows.front().emb.size();
    if (!v.steps.empty()) return v.steps.front().emb.size();
    if (!v.asr.empty()) return v.asr.front().emb.size();
    return 0;
}

}  // namespace

void Corpus::add(VideoRecord video) {
    validate_video(video);
    size_t d = embedding_dim_of(video);
    if (d != 0) {
        for (const Window& w : video.windows)
            if (w.emb.size() != d)
                raise(ErrorCode::DimMismatch, video.video_id + ": ragged window embeddings");
        for (const StepAnnotation& s : video.steps)
            if (s.emb.size() != d)
                raise(ErrorCode::DimMismatch, video.video_id + ": step embedding dim mismatch");
        for (const AsrSegment& s : video.asr)
            if (s.emb.size() != d)
                raise(ErrorCode::DimMismatch, video.video_id + ": asr embedding dim mismatch");
        if (dim_ == 0)
            dim_ = d;
        else if (dim_ != d)
            raise(ErrorCode::DimMismatch, video.video_id + ": corpus dim " + std::to_string(dim_) +
                                              " vs video dim " + std::to_string(d));
    }
    if (videos_.count(video.video_id))
        raise(ErrorCode::MalformedInput, "duplicate video_id " + video.video_id);
    videos_.emplace(video.video_id, std::move(video));
}

const VideoRecord& Corpus::at(const std::string& video_id) const {
    auto it = videos_.find(video_id);
    if (it == videos_.end()) raise(ErrorCode::MalformedInput, "unknown video_id " + video_id);
    return it->second;
}

void Corpus::validate_clip(const ClipRef& clip) const {
    const VideoRecord& v = at(clip.video_id);
    if (!(clip.t_start >= 0.0 && clip.t_start < clip.t_end && clip.t_end <= v.duration_s + 1e-9))
        raise(ErrorCode::MalformedInput,
              "clip [" + std::to_string(clip.t_start) + ", " + std::to_string(clip.t_end) +
                  "] invalid for video " + clip.video_id);
}

// --- binary embedding files ------------------------------------------------

static constexpr char kEmbMagic[8] = {'S', 'A', 'D', 'E', 'M', 'B', '1', '\0'};
static_assert(sizeof(float) == 4, "IEEE-754 32-bit float required");

void write_embedding_file(const std::filesystem::path& path, const std::vector<Embedding>& rows) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) raise(ErrorCode::MissingFile, "cannot open " + path.string() + " for writing");
    uint32_t dim = rows.empty() ? 0u : static_cast<uint32_t>(rows.front().size());
    uint32_t count = static_cast<uint32_t>(rows.size());
    out.write(kEmbMagic, 8);
    out.write(reinterpret_cast<const char*>(&dim), 4);
    out.write(reinterpret_cast<const char*>(&count), 4);
    for (const Embedding& r : rows) {
        if (r.size() != dim)
            raise(ErrorCode::DimMismatch, "ragged rows writing " + path.string());
        out.write(reinterpret_cast<const char*>(r.data()),
                  static_cast<std::streamsize>(r.size() * 4));
    }
    if (!out) raise(ErrorCode::MissingFile, "short write to " + path.string());
}

std::vector<Embedding> read_embedding_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorCode::MissingFile, "missing embedding file " + path.string());
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kEmbMagic, 8) != 0)
        raise(ErrorCode::MalformedInput, path.string() + ": bad magic");
    uint32_t dim = 0, count = 0;
    in.read(reinterpret_cast<char*>(&dim), 4);
    in.read(reinterpret_cast<char*>(&count), 4);
    if (!in) raise(ErrorCode::MalformedInput, path.string() + ": truncated header");
    std::vector<Embedding> rows(count, Embedding(dim));
    for (auto& r : rows) {
        in.read(reinterpret_cast<char*>(r.data()), static_cast<std::streamsize>(dim) * 4);
        if (!in) raise(ErrorCode::MalformedInput, path.string() + ": truncated payload");
        if (!is_finite(r)) raise(ErrorCode::MalformedInput, path.string() + ": non-finite value");
    }
    return rows;
}

// --- JSONL ------------------------------------------------------------------

namespace {

ordered_json parse_jsonl_line(const std::string& line, const std::filesystem::path& path,
                              size_t line_no) {
    try {
        return ordered_json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorCode::MalformedInput,
              path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
}

template <typename Fn>
void for_each_jsonl(const std::filesystem::path& path, Fn fn) {
    std::ifstream in(path);
    if (!in) raise(ErrorCode::MissingFile, "missing file " + path.string());
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        fn(parse_jsonl_line(line, path, line_no), line_no);
    }
}

double req_number(const ordered_json& j, const char* key, const std::string& where) {
    if (!j.contains(key) || !j[key].is_number())
        raise(ErrorCode::MalformedInput, where + ": missing numeric field '" + key + "'");
    return j[key].get<double>();
}

std::string req_string(const ordered_json& j, const char* key, const std::string& where) {
    if (!j.contains(key) || !j[key].is_string())
        raise(ErrorCode::MalformedInput, where + ": missing string field '" + key + "'");
    return j[key].get<std::string>();
}

}  // namespace

Corpus ingest_corpus(const std::filesystem::path& dir) {
    Corpus corpus;
    const auto jsonl = dir / "videos.jsonl";
    for_each_jsonl(jsonl, [&](const ordered_json& j, size_t line_no) {
        std::string where = jsonl.string() + ":" + std::to_string(line_no);
        VideoRecord v;
        v.video_id = req_string(j, "video_id", where);
        v.duration_s = req_number(j, "duration_s", where);
        v.task = req_string(j, "task", where);
        if (!j.contains("windows") || !j["windows"].is_array())
            raise(ErrorCode::MalformedInput, where + ": missing 'windows' array");
        for (const auto& w : j["windows"]) {
            Window win;
            win.t_start = req_number(w, "t_start", where);
            win.t_end = req_number(w, "t_end", where);
            v.windows.push_back(std::move(win));
        }
        if (j.contains("asr")) {
            for (const auto& a : j["asr"]) {
                AsrSegment seg;
                seg.t_start = req_number(a, "t_start", where);
                seg.t_end = req_number(a, "t_end", where);
                seg.text = req_string(a, "text", where);
                v.asr.push_back(std::move(seg));
            }
        }
        if (j.contains("steps")) {
            for (const auto& s : j["steps"]) {
                StepAnnotation st;
                st.t_start = req_number(s, "t_start", where);
                st.t_end = req_number(s, "t_end", where);
                st.text = req_string(s, "text", where);
                v.steps.push_back(std::move(st));
            }
        }

        auto embs = read_embedding_file(dir / (v.video_id + ".emb"));
        if (embs.size() != v.windows.size())
            raise(ErrorCode::MalformedInput,
                  where + ": " + std::to_string(embs.size()) + " embeddings for " +
                      std::to_string(v.windows.size()) + " windows");
        for (size_t i = 0; i < embs.size(); ++i) v.windows[i].emb = std::move(embs[i]);

        size_t n_text = v.steps.size() + v.asr.size();
        if (n_text > 0) {
            auto tembs = read_embedding_file(dir / (v.video_id + ".temb"));
            if (tembs.size() != n_text)
                raise(ErrorCode::MalformedInput,
                      where + ": " + std::to_string(tembs.size()) + " text embeddings for " +
                          std::to_string(n_text) + " step/asr entries");
            size_t k = 0;
            for (auto& s : v.steps) s.emb = std::move(tembs[k++]);
            for (auto& a : v.asr) a.emb = std::move(tembs[k++]);
        }
        corpus.add(std::move(v));
    });
    return corpus;
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream out(dir / "videos.jsonl", std::ios::trunc);
    if (!out) raise(ErrorCode::MissingFile, "cannot write videos.jsonl in " + dir.string());
    for (const auto& [id, v] : corpus.videos()) {
        ordered_json j;
        j["video_id"] = v.video_id;
        j["duration_s"] = v.duration_s;
        j["task"] = v.task;
        j["windows"] = ordered_json::array();
        std::vector<Embedding> embs;
        for (const Window& w : v.windows) {
            j["windows"].push_back({{"t_start", w.t_start}, {"t_end", w.t_end}});
            embs.push_back(w.emb);
        }
        std::vector<Embedding> tembs;
        if (!v.asr.empty()) {
            j["asr"] = ordered_json::array();
            for (const AsrSegment& a : v.asr)
                j["asr"].push_back({{"t_start", a.t_start}, {"t_end", a.t_end}, {"text", a.text}});
        }
        if (!v.steps.empty()) {
            j["steps"] = ordered_json::array();
            for (const StepAnnotation& s : v.steps)
                j["steps"].push_back(
                    {{"t_start", s.t_start}, {"t_end", s.t_end}, {"text", s.text}});
        }
        for (const StepAnnotation& s : v.steps) tembs.push_back(s.emb);
        for (const AsrSegment& a : v.asr) tembs.push_back(a.emb);
        out << j.dump() << "\n";
        write_embedding_file(dir / (id + ".emb"), embs);
        if (!tembs.empty()) write_embedding_file(dir / (id + ".temb"), tembs);
    }
}

std::vector<Procedure> read_procedures(const std::filesystem::path& jsonl_path) {
    std::vector<Procedure> out;
    const auto dir = jsonl_path.parent_path();
    for_each_jsonl(jsonl_path, [&](const ordered_json& j, size_t line_no) {
        std::string where = jsonl_path.string() + ":" + std::to_string(line_no);
        Procedure p;
        p.procedure_id = req_string(j, "procedure_id", where);
        p.task = req_string(j, "task", where);
        if (!j.contains("steps") || !j["steps"].is_array() || j["steps"].empty())
            raise(ErrorCode::MalformedInput, where + ": procedure needs at least one step");
        for (const auto& s : j["steps"]) p.steps.push_back({s.get<std::string>(), {}});
        auto tembs = read_embedding_file(dir / (p.procedure_id + ".temb"));
        if (tembs.size() != p.steps.size())
            raise(ErrorCode::MalformedInput, where + ": step/temb count mismatch");
        for (size_t i = 0; i < tembs.size(); ++i) p.steps[i].emb = std::move(tembs[i]);
        out.push_back(std::move(p));
    });
    return out;
}

void write_procedures(const std::vector<Procedure>& procedures,
                      const std::filesystem::path& jsonl_path) {
    std::filesystem::create_directories(jsonl_path.parent_path());
    std::ofstream out(jsonl_path, std::ios::trunc);
    if (!out) raise(ErrorCode::MissingFile, "cannot write " + jsonl_path.string());
    for (const Procedure& p : procedures) {
        ordered_json j;
        j["procedure_id"] = p.procedure_id;
        j["task"] = p.task;
        j["steps"] = ordered_json::array();
        std::vector<Embedding> tembs;
        for (const ProcedureStep& s : p.steps) {
            j["steps"].push_back(s.text);
            tembs.push_back(s.emb);
        }
        out << j.dump() << "\n";
        write_embedding_file(jsonl_path.parent_path() / (p.procedure_id + ".temb"), tembs);
    }
}

std::vector<GroundTruthSample> read_samples(const std::filesystem::path& jsonl_path) {
    std::vector<GroundTruthSample> out;
    const auto dir = jsonl_path.parent_path();
    for_each_jsonl(jsonl_path, [&](const ordered_json& j, size_t line_no) {
        std::string where = jsonl_path.string() + ":" + std::to_string(line_no);
        GroundTruthSample s;
        s.procedure.procedure_id = req_string(j, "procedure_id", where);
        s.procedure.task = req_string(j, "task", where);
        s.provenance = provenance_from_name(req_string(j, "provenance", where));
        for (const auto& t : j["steps"]) s.procedure.steps.push_back({t.get<std::string>(), {}});
        for (const auto& c : j["clips"]) {
            ClipRef clip;
            clip.video_id = req_string(c, "video_id", where);
            clip.t_start = req_number(c, "t_start", where);
            clip.t_end = req_number(c, "t_end", where);
            s.clips.push_back(std::move(clip));
        }
        if (s.clips.size() != s.procedure.steps.size())
            raise(ErrorCode::MalformedInput, where + ": clips/steps length mismatch");
        auto tembs = read_embedding_file(dir / (s.procedure.procedure_id + ".temb"));
        if (tembs.size() != s.procedure.steps.size())
            raise(ErrorCode::MalformedInput, where + ": step/temb count mismatch");
        for (size_t i = 0; i < tembs.size(); ++i) s.procedure.steps[i].emb = std::move(tembs[i]);
        out.push_back(std::move(s));
    });
    return out;
}

void write_samples(const std::vector<GroundTruthSample>& samples,
                   const std::filesystem::path& jsonl_path) {
    std::filesystem::create_directories(jsonl_path.parent_path());
    std::ofstream out(jsonl_path, std::ios::trunc);
    if (!out) raise(ErrorCode::MissingFile, "cannot write " + jsonl_path.string());
    for (const GroundTruthSample& s : samples) {
        ordered_json j;
        j["procedure_id"] = s.procedure.procedure_id;
        j["task"] = s.procedure.task;
        j["provenance"] = provenance_name(s.provenance);
        j["steps"] = ordered_json::array();
        std::vector<Embedding> tembs;
        for (const ProcedureStep& st : s.procedure.steps) {
            j["steps"].push_back(st.text);
            tembs.push_back(st.emb);
        }
        j["clips"] = ordered_json::array();
        for (const ClipRef& c : s.clips)
            j["clips"].push_back(
                {{"video_id", c.video_id}, {"t_start", c.t_start}, {"t_end", c.t_end}});
        out << j.dump() << "\n";
        write_embedding_file(jsonl_path.parent_path() / (s.procedure.procedure_id + ".temb"),
                             tembs);
    }
}

}  // namespace stitcher
