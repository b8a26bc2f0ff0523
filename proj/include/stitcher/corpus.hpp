#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stitcher/error.hpp"

namespace stitcher {

// One row of a feature table. Dimension is implicit (size()).
using Embedding = std::vector<float>;

struct Window {
    double t_start = 0.0;
    double t_end = 0.0;
    Embedding emb;
};

struct AsrSegment {
    double t_start = 0.0;
    double t_end = 0.0;
    std::string text;
    Embedding emb;
};

struct StepAnnotation {
    double t_start = 0.0;
    double t_end = 0.0;
    std::string text;
    Embedding emb;
};

struct VideoRecord {
    std::string video_id;
    double duration_s = 0.0;
    std::string task;
    std::vector<Window> windows;
    std::vector<AsrSegment> asr;     // empty means absent
    std::vector<StepAnnotation> steps;
};

struct ClipRef {
    std::string video_id;
    double t_start = 0.0;
    double t_end = 0.0;

    bool operator==(const ClipRef& o) const {
        return video_id == o.video_id && t_start == o.t_start && t_end == o.t_end;
    }
    bool operator<(const ClipRef& o) const {
        if (video_id != o.video_id) return video_id < o.video_id;
        if (t_start != o.t_start) return t_start < o.t_start;
        return t_end < o.t_end;
    }
};

struct ProcedureStep {
    std::string text;
    Embedding emb;
};

struct Procedure {
    std::string procedure_id;
    std::string task;
    std::vector<ProcedureStep> steps;
};

enum class Provenance { RealVideo, LlmMixed, DetourDerived };

const char* provenance_name(Provenance p);
Provenance provenance_from_name(const std::string& name);

struct GroundTruthSample {
    Procedure procedure;
    std::vector<ClipRef> clips;  // one per step
    Provenance provenance = Provenance::RealVideo;
};

class Corpus {
public:
    Corpus() = default;

    void add(VideoRecord video);  // validates and fixes the corpus dim
    bool contains(const std::string& video_id) const { return videos_.count(video_id) > 0; }
    const VideoRecord& at(const std::string& video_id) const;
    const std::map<std::string, VideoRecord>& videos() const { return videos_; }
    size_t size() const { return videos_.size(); }
    size_t dim() const { return dim_; }

    double duration_of(const std::string& video_id) const { return at(video_id).duration_s; }
    void validate_clip(const ClipRef& clip) const;

private:
    std::map<std::string, VideoRecord> videos_;  // ordered: deterministic iteration
    size_t dim_ = 0;
};

// --- math ---------------------------------------------------------------

// Cosine of the angle between a and b, clamped to [-1, 1]. Accumulates in
// double. Throws ZeroVector on a zero-norm input, DimMismatch on dim skew.
double cosine_similarity(const Embedding& a, const Embedding& b);

// Mean of the embeddings of all windows whose midpoint lies in
// [t_start, t_end). Not renormalized. Throws EmptyClip when no window
// midpoint falls inside.
Embedding clip_embedding(const VideoRecord& video, double t_start, double t_end);

bool is_finite(const Embedding& e);
double l2_norm(const Embedding& e);

// --- on-disk formats ----------------------------------------------------

// Binary embedding table: magic "SADEMB1\0", u32 dim, u32 count, then
// count*dim little-endian IEEE-754 32-bit floats in row order.
void write_embedding_file(const std::filesystem::path& path, const std::vector<Embedding>& rows);
std::vector<Embedding> read_embedding_file(const std::filesystem::path& path);

// Corpus directory: videos.jsonl plus <video_id>.emb (window features) and
// <video_id>.temb (step texts first, then ASR texts).
Corpus ingest_corpus(const std::filesystem::path& dir);
void write_corpus(const Corpus& corpus, const std::filesystem::path& dir);

// Query procedures: procedures.jsonl plus <procedure_id>.temb per query.
std::vector<Procedure> read_procedures(const std::filesystem::path& jsonl_path);
void write_procedures(const std::vector<Procedure>& procedures,
                      const std::filesystem::path& jsonl_path);

// Ground-truth demonstration sets (dataset_*.jsonl plus per-procedure .temb).
std::vector<GroundTruthSample> read_samples(const std::filesystem::path& jsonl_path);
void write_samples(const std::vector<GroundTruthSample>& samples,
                   const std::filesystem::path& jsonl_path);

}  // namespace stitcher
