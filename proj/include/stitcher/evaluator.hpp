#pragma once

#include <memory>
#include <string>
#include <vector>

#include "stitcher/corpus.hpp"
#include "stitcher/setcover.hpp"

namespace stitcher {

struct EvaluatorConfig {
    int model_dim = 768;
    int layers = 4;
    int heads = 8;
    int mlp_hidden = 0;  // 0 means model_dim
    double learning_rate = 3e-4;
    int batch_size = 24;
    int epochs = 10;
    uint64_t seed = 0;
    int negatives_per_positive = 3;   // per-batch negative:positive ratio
    bool interleave_inputs = false;   // interleave step/clip dims before projection
    bool normalize_clip_features = false;

    int resolved_mlp_hidden() const { return mlp_hidden > 0 ? mlp_hidden : model_dim; }
    void validate() const;
};

struct Tensor {
    std::string name;
    std::vector<size_t> shape;
    std::vector<float> data;

    size_t count() const {
        size_t n = 1;
        for (size_t s : shape) n *= s;
        return n;
    }
};

// Transformer scorer: input projection (2*feature_dim -> model_dim), learned
// CLS embedding, sinusoidal positions, pre-norm encoder layers, affine head
// to one logit, sigmoid.
struct EvaluatorModel {
    EvaluatorConfig config;
    int feature_dim = 0;
    std::vector<Tensor> params;  // fixed manifest order

    const Tensor& tensor(const std::string& name) const;
};

EvaluatorModel init_model(const EvaluatorConfig& config, int feature_dim);

// Checkpoint: <stem>.json holds config and the tensor manifest, <stem>.bin
// the little-endian float32 payload in manifest order. Round-trips bit-exact.
void save_model(const EvaluatorModel& model, const std::filesystem::path& json_path);
EvaluatorModel load_model(const std::filesystem::path& json_path);

// Per-step features fed to the encoder: n_steps rows of 2*feature_dim.
struct ScoringInput {
    size_t n_steps = 0;
    size_t feature_dim = 0;
    std::vector<float> features;
};

ScoringInput make_scoring_input(const Procedure& query, const std::vector<ClipRef>& clips,
                                const Corpus& corpus, const EvaluatorConfig& config);

double bce_loss(double p, int label);

// Reusable forward pass; const and safe to share across threads.
class Scorer {
public:
    explicit Scorer(const EvaluatorModel& model);
    ~Scorer();
    Scorer(Scorer&&) noexcept;
    double score(const ScoringInput& input) const;
    double score(const Procedure& query, const std::vector<ClipRef>& clips,
                 const Corpus& corpus) const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    EvaluatorConfig config_;
};

double score(const EvaluatorModel& model, const Procedure& query,
             const CandidateSequence& candidate, const Corpus& corpus);

struct TrainResult {
    EvaluatorModel model;
    std::vector<double> epoch_mean_loss;
};

// Adam over seeded shuffled batches mixing positives and negatives at the
// configured ratio. Fully reproducible given config.seed. Negatives are
// label-0 demonstrations in GroundTruthSample shape.
TrainResult train(const EvaluatorConfig& config, const Corpus& corpus,
                  const std::vector<GroundTruthSample>& positives,
                  const std::vector<GroundTruthSample>& negatives);

void write_loss_csv(const std::vector<double>& epoch_mean_loss,
                    const std::filesystem::path& path);

struct RankedCandidate {
    size_t index = 0;  // position in the input candidate list
    double score = 0.0;
};

// Indices sorted by descending score; ties keep input order.
std::vector<size_t> rank_by_scores(const std::vector<double>& scores);

std::vector<RankedCandidate> rank_candidates(const EvaluatorModel& model, const Procedure& query,
                                             const std::vector<CandidateSequence>& candidates,
                                             const Corpus& corpus, int threads = 1);

struct GradientCheckOptions {
    size_t subset_size = 200;
    double h = 1e-5;
    uint64_t seed = 1;
    bool corrupt_one = false;  // sign-flip one analytic gradient (negative control)
};

struct LabeledInput {
    ScoringInput input;
    int label = 0;
};

// Max relative error between analytic gradients and 64-bit central
// differences over a stratified random parameter subset covering every
// tensor.
double gradient_check(const EvaluatorModel& model, const std::vector<LabeledInput>& batch,
                      const GradientCheckOptions& options = {});

}  // namespace stitcher
