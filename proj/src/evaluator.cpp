#include "stitcher/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "stitcher/parallel.hpp"
#include "stitcher/rng.hpp"

namespace stitcher {

using nlohmann::ordered_json;

void EvaluatorConfig::validate() const {
    if (model_dim <= 0 || layers <= 0 || heads <= 0 || batch_size <= 0 || epochs < 0 ||
        resolved_mlp_hidden() <= 0 || learning_rate <= 0.0 || negatives_per_positive < 0)
        raise(ErrorCode::MalformedInput, "evaluator config fields must be positive");
    if (model_dim % heads != 0)
        raise(ErrorCode::MalformedInput, "model_dim must be divisible by heads");
}

// --- manifest ---------------------------------------------------------------

namespace {

std::vector<std::pair<std::string, std::vector<size_t>>> manifest_shapes(
    const EvaluatorConfig& c, int feature_dim) {
    const size_t d = static_cast<size_t>(c.model_dim);
    const size_t f = static_cast<size_t>(c.resolved_mlp_hidden());
    const size_t df2 = 2 * static_cast<size_t>(feature_dim);
    std::vector<std::pair<std::string, std::vector<size_t>>> out;
    out.push_back({"input_proj.w", {d, df2}});
    out.push_back({"input_proj.b", {d}});
    out.push_back({"cls", {d}});
    for (int l = 0; l < c.layers; ++l) {
        std::string p = "layer" + std::to_string(l) + ".";
        out.push_back({p + "ln1.gamma", {d}});
        out.push_back({p + "ln1.beta", {d}});
        out.push_back({p + "attn.wq", {d, d}});
        out.push_back({p + "attn.bq", {d}});
        out.push_back({p + "attn.wk", {d, d}});
        out.push_back({p + "attn.bk", {d}});
        out.push_back({p + "attn.wv", {d, d}});
        out.push_back({p + "attn.bv", {d}});
        out.push_back({p + "attn.wo", {d, d}});
        out.push_back({p + "attn.bo", {d}});
        out.push_back({p + "ln2.gamma", {d}});
        out.push_back({p + "ln2.beta", {d}});
        out.push_back({p + "ff1.w", {f, d}});
        out.push_back({p + "ff1.b", {f}});
        out.push_back({p + "ff2.w", {d, f}});
        out.push_back({p + "ff2.b", {d}});
    }
    out.push_back({"head.w", {d}});
    out.push_back({"head.b", {1}});
    return out;
}

void xavier_fill(std::vector<float>& w, size_t fan_out, size_t fan_in, Rng& rng) {
    double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (float& x : w) x = static_cast<float>(rng.uniform(-limit, limit));
}

}  // namespace

const Tensor& EvaluatorModel::tensor(const std::string& name) const {
    for (const Tensor& t : params)
        if (t.name == name) return t;
    raise(ErrorCode::MalformedInput, "no tensor named " + name);
}

EvaluatorModel init_model(const EvaluatorConfig& config, int feature_dim) {
    config.validate();
    if (feature_dim <= 0) raise(ErrorCode::MalformedInput, "feature_dim must be positive");
    EvaluatorModel m;
    m.config = config;
    m.feature_dim = feature_dim;
    Rng rng = Rng::fork(config.seed, 0xE7A1);
    for (const auto& [name, shape] : manifest_shapes(config, feature_dim)) {
        Tensor t;
        t.name = name;
        t.shape = shape;
        t.data.assign(t.count(), 0.0f);
        bool is_matrix = shape.size() == 2;
        bool is_gamma = name.size() >= 5 && name.substr(name.size() - 5) == "gamma";
        if (is_matrix) {
            xavier_fill(t.data, shape[0], shape[1], rng);
        } else if (is_gamma) {
            std::fill(t.data.begin(), t.data.end(), 1.0f);
        } else if (name == "cls") {
            for (float& x : t.data) x = static_cast<float>(0.02 * rng.gaussian());
        } else if (name == "head.w") {
            xavier_fill(t.data, 1, shape[0], rng);
        }
        // biases and ln beta stay zero
        m.params.push_back(std::move(t));
    }
    return m;
}

// --- checkpoint --------------------------------------------------------------

void save_model(const EvaluatorModel& model, const std::filesystem::path& json_path) {
    ordered_json j;
    j["config"] = {{"model_dim", model.config.model_dim},
                   {"layers", model.config.layers},
                   {"heads", model.config.heads},
                   {"mlp_hidden", model.config.mlp_hidden},
                   {"learning_rate", model.config.learning_rate},
                   {"batch_size", model.config.batch_size},
                   {"epochs", model.config.epochs},
                   {"seed", model.config.seed},
                   {"negatives_per_positive", model.config.negatives_per_positive},
                   {"interleave_inputs", model.config.interleave_inputs},
                   {"normalize_clip_features", model.config.normalize_clip_features}};
    j["feature_dim"] = model.feature_dim;
    j["tensors"] = ordered_json::array();
    size_t offset = 0;
    for (const Tensor& t : model.params) {
        j["tensors"].push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}});
        offset += t.count();
    }
    std::filesystem::path bin_path = json_path;
    bin_path.replace_extension(".bin");
    j["payload"] = bin_path.filename().string();

    std::ofstream jout(json_path, std::ios::trunc);
    if (!jout) raise(ErrorCode::MissingFile, "cannot write " + json_path.string());
    jout << j.dump(2) << "\n";

    std::ofstream bout(bin_path, std::ios::binary | std::ios::trunc);
    if (!bout) raise(ErrorCode::MissingFile, "cannot write " + bin_path.string());
    for (const Tensor& t : model.params)
        bout.write(reinterpret_cast<const char*>(t.data.data()),
                   static_cast<std::streamsize>(t.data.size() * 4));
}

EvaluatorModel load_model(const std::filesystem::path& json_path) {
    std::ifstream jin(json_path);
    if (!jin) raise(ErrorCode::MissingFile, "missing checkpoint " + json_path.string());
    ordered_json j;
    try {
        jin >> j;
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorCode::MalformedInput, json_path.string() + ": " + e.what());
    }
    EvaluatorModel m;
    const auto& c = j.at("config");
    m.config.model_dim = c.at("model_dim").get<int>();
    m.config.layers = c.at("layers").get<int>();
    m.config.heads = c.at("heads").get<int>();
    m.config.mlp_hidden = c.at("mlp_hidden").get<int>();
    m.config.learning_rate = c.at("learning_rate").get<double>();
    m.config.batch_size = c.at("batch_size").get<int>();
    m.config.epochs = c.at("epochs").get<int>();
    m.config.seed = c.at("seed").get<uint64_t>();
    m.config.negatives_per_positive = c.at("negatives_per_positive").get<int>();
    m.config.interleave_inputs = c.at("interleave_inputs").get<bool>();
    m.config.normalize_clip_features = c.at("normalize_clip_features").get<bool>();
    m.feature_dim = j.at("feature_dim").get<int>();

    auto expected = manifest_shapes(m.config, m.feature_dim);
    if (j.at("tensors").size() != expected.size())
        raise(ErrorCode::MalformedInput, json_path.string() + ": tensor manifest mismatch");

    std::filesystem::path bin_path = json_path.parent_path() / j.at("payload").get<std::string>();
    std::ifstream bin(bin_path, std::ios::binary);
    if (!bin) raise(ErrorCode::MissingFile, "missing payload " + bin_path.string());
    for (size_t i = 0; i < expected.size(); ++i) {
        Tensor t;
        t.name = j.at("tensors")[i].at("name").get<std::string>();
        t.shape = j.at("tensors")[i].at("shape").get<std::vector<size_t>>();
        if (t.name != expected[i].first || t.shape != expected[i].second)
            raise(ErrorCode::MalformedInput, json_path.string() + ": manifest entry " + t.name +
                                                 " does not match the config layout");
        t.data.assign(t.count(), 0.0f);
        bin.read(reinterpret_cast<char*>(t.data.data()),
                 static_cast<std::streamsize>(t.data.size() * 4));
        if (!bin) raise(ErrorCode::MalformedInput, bin_path.string() + ": truncated payload");
        m.params.push_back(std::move(t));
    }
    return m;
}

// --- scoring input ------------------------------------------------------------

ScoringInput make_scoring_input(const Procedure& query, const std::vector<ClipRef>& clips,
                                const Corpus& corpus, const EvaluatorConfig& config) {
    if (query.steps.size() != clips.size())
        raise(ErrorCode::MalformedInput, "candidate length != query steps");
    if (query.steps.empty()) raise(ErrorCode::EmptyInstance, "empty procedure");
    const size_t df = query.steps.front().emb.size();
    ScoringInput in;
    in.n_steps = clips.size();
    in.feature_dim = df;
    in.features.resize(in.n_steps * 2 * df);
    for (size_t t = 0; t < clips.size(); ++t) {
        const Embedding& step = query.steps[t].emb;
        if (step.size() != df) raise(ErrorCode::DimMismatch, "ragged step embeddings");
        Embedding clip = clip_embedding(corpus.at(clips[t].video_id), clips[t].t_start,
                                        clips[t].t_end);
        if (clip.size() != df)
            raise(ErrorCode::DimMismatch, "clip feature dim != step feature dim");
        if (config.normalize_clip_features) {
            double n = l2_norm(clip);
            if (n > 0.0)
                for (float& x : clip) x = static_cast<float>(x / n);
        }
        float* row = in.features.data() + t * 2 * df;
        if (config.interleave_inputs) {
            for (size_t k = 0; k < df; ++k) {
                row[2 * k] = step[k];
                row[2 * k + 1] = clip[k];
            }
        } else {
            std::memcpy(row, step.data(), df * 4);
            std::memcpy(row + df, clip.data(), df * 4);
        }
    }
    return in;
}

double bce_loss(double p, int label) {
    double q = std::min(1.0 - 1e-7, std::max(1e-7, p));
    return -(label * std::log(q) + (1 - label) * std::log(1.0 - q));
}

// --- engine --------------------------------------------------------------------

namespace {

double gelu_cdf(double x) { return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))); }
double gelu_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI); }

double positional_encoding(size_t pos, size_t i, size_t d) {
    double exponent = static_cast<double>(2 * (i / 2)) / static_cast<double>(d);
    double angle = static_cast<double>(pos) / std::pow(10000.0, exponent);
    return (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
}

template <typename T>
struct Engine {
    size_t d, H, dh, F, df2;
    bool interleave;  // affects only input layout, handled upstream
    std::vector<std::vector<T>> w;     // parameters, manifest order
    std::vector<std::vector<T>> grad;  // same shapes
    std::vector<std::string> names;
    size_t layers;

    // manifest indices
    size_t idx_proj_w = 0, idx_proj_b = 1, idx_cls = 2;
    size_t layer_base(size_t l) const { return 3 + l * 16; }
    size_t idx_head_w() const { return 3 + layers * 16; }
    size_t idx_head_b() const { return 3 + layers * 16 + 1; }

    explicit Engine(const EvaluatorModel& m) {
        d = static_cast<size_t>(m.config.model_dim);
        H = static_cast<size_t>(m.config.heads);
        dh = d / H;
        F = static_cast<size_t>(m.config.resolved_mlp_hidden());
        df2 = 2 * static_cast<size_t>(m.feature_dim);
        layers = static_cast<size_t>(m.config.layers);
        interleave = m.config.interleave_inputs;
        for (const Tensor& t : m.params) {
            std::vector<T> row(t.data.begin(), t.data.end());
            w.push_back(std::move(row));
            grad.emplace_back(t.data.size(), T(0));
            names.push_back(t.name);
        }
    }

    void zero_grad() {
        for (auto& g : grad) std::fill(g.begin(), g.end(), T(0));
    }

    void write_back(EvaluatorModel& m) const {
        for (size_t i = 0; i < w.size(); ++i)
            for (size_t k = 0; k < w[i].size(); ++k)
                m.params[i].data[k] = static_cast<float>(w[i][k]);
    }

    struct LayerCache {
        std::vector<T> x_in;        // L*d
        std::vector<T> ln1_xhat;    // L*d
        std::vector<T> ln1_rstd;    // L
        std::vector<T> q, k, v;     // L*d
        std::vector<T> probs;       // H*L*L
        std::vector<T> ctx;         // L*d
        std::vector<T> after_attn;  // L*d
        std::vector<T> ln2_xhat;    // L*d
        std::vector<T> ln2_rstd;    // L
        std::vector<T> f1;          // L*F (pre-activation)
        std::vector<T> g;           // L*F (activated)
    };

    struct Cache {
        size_t L = 0;
        std::vector<T> raw;  // (L-1)*df2 token features
        std::vector<T> x0;   // L*d embedded sequence
        std::vector<LayerCache> layer;
        std::vector<T> x_final;  // L*d
        T logit = 0;
        T prob = 0;
    };

    static constexpr double kLnEps = 1e-5;

    void layer_norm(const T* x, const T* gamma, const T* beta, T* out, T* xhat, T& rstd_out,
                    size_t n) const {
        T mean = 0;
        for (size_t i = 0; i < n; ++i) mean += x[i];
        mean /= static_cast<T>(n);
        T var = 0;
        for (size_t i = 0; i < n; ++i) {
            T c = x[i] - mean;
            var += c * c;
        }
        var /= static_cast<T>(n);
        T rstd = T(1) / std::sqrt(var + static_cast<T>(kLnEps));
        rstd_out = rstd;
        for (size_t i = 0; i < n; ++i) {
            xhat[i] = (x[i] - mean) * rstd;
            out[i] = gamma[i] * xhat[i] + beta[i];
        }
    }

    // y = W x + b with W row-major (rows x cols)
    static void affine(const T* W, const T* b, const T* x, T* y, size_t rows, size_t cols) {
        for (size_t i = 0; i < rows; ++i) {
            T acc = b ? b[i] : T(0);
            const T* row = W + i * cols;
            for (size_t j = 0; j < cols; ++j) acc += row[j] * x[j];
            y[i] = acc;
        }
    }

    T forward(const ScoringInput& in, Cache& cache) const {
        const size_t n = in.n_steps;
        const size_t L = n + 1;
        if (in.features.size() != n * df2)
            raise(ErrorCode::DimMismatch, "scoring input width does not match the model");
        cache.L = L;
        cache.raw.assign(in.features.begin(), in.features.end());
        cache.x0.assign(L * d, T(0));

        const auto& pw = w[idx_proj_w];
        const auto& pb = w[idx_proj_b];
        const auto& cls = w[idx_cls];
        for (size_t i = 0; i < d; ++i) cache.x0[i] = cls[i];
        for (size_t t = 1; t < L; ++t) {
            const T* raw = cache.raw.data() + (t - 1) * df2;
            T* x = cache.x0.data() + t * d;
            affine(pw.data(), pb.data(), raw, x, d, df2);
            for (size_t i = 0; i < d; ++i) x[i] += static_cast<T>(positional_encoding(t, i, d));
        }

        std::vector<T> x = cache.x0;
        cache.layer.assign(layers, LayerCache{});
        const T inv_sqrt_dh = T(1) / std::sqrt(static_cast<T>(dh));

        for (size_t l = 0; l < layers; ++l) {
            LayerCache& lc = cache.layer[l];
            const size_t b = layer_base(l);
            lc.x_in = x;
            lc.ln1_xhat.assign(L * d, T(0));
            lc.ln1_rstd.assign(L, T(0));
            std::vector<T> a(L * d);
            for (size_t t = 0; t < L; ++t)
                layer_norm(x.data() + t * d, w[b + 0].data(), w[b + 1].data(), a.data() + t * d,
                           lc.ln1_xhat.data() + t * d, lc.ln1_rstd[t], d);

            lc.q.assign(L * d, T(0));
            lc.k.assign(L * d, T(0));
            lc.v.assign(L * d, T(0));
            for (size_t t = 0; t < L; ++t) {
                affine(w[b + 2].data(), w[b + 3].data(), a.data() + t * d, lc.q.data() + t * d, d,
                       d);
                affine(w[b + 4].data(), w[b + 5].data(), a.data() + t * d, lc.k.data() + t * d, d,
                       d);
                affine(w[b + 6].data(), w[b + 7].data(), a.data() + t * d, lc.v.data() + t * d, d,
                       d);
            }

            lc.probs.assign(H * L * L, T(0));
            lc.ctx.assign(L * d, T(0));
            std::vector<T> scores(L);
            for (size_t h = 0; h < H; ++h) {
                const size_t off = h * dh;
                for (size_t t = 0; t < L; ++t) {
                    T maxs = -std::numeric_limits<T>::infinity();
                    for (size_t u = 0; u < L; ++u) {
                        T s = 0;
                        const T* qt = lc.q.data() + t * d + off;
                        const T* ku = lc.k.data() + u * d + off;
                        for (size_t e = 0; e < dh; ++e) s += qt[e] * ku[e];
                        s *= inv_sqrt_dh;
                        scores[u] = s;
                        maxs = std::max(maxs, s);
                    }
                    T denom = 0;
                    T* prow = lc.probs.data() + (h * L + t) * L;
                    for (size_t u = 0; u < L; ++u) {
                        prow[u] = std::exp(scores[u] - maxs);
                        denom += prow[u];
                    }
                    for (size_t u = 0; u < L; ++u) prow[u] /= denom;
                    T* ctx = lc.ctx.data() + t * d + off;
                    for (size_t u = 0; u < L; ++u) {
                        const T* vu = lc.v.data() + u * d + off;
                        for (size_t e = 0; e < dh; ++e) ctx[e] += prow[u] * vu[e];
                    }
                }
            }

            for (size_t t = 0; t < L; ++t) {
                std::vector<T> o(d);
                affine(w[b + 8].data(), w[b + 9].data(), lc.ctx.data() + t * d, o.data(), d, d);
                for (size_t i = 0; i < d; ++i) x[t * d + i] += o[i];
            }
            lc.after_attn = x;

            lc.ln2_xhat.assign(L * d, T(0));
            lc.ln2_rstd.assign(L, T(0));
            lc.f1.assign(L * F, T(0));
            lc.g.assign(L * F, T(0));
            std::vector<T> bvec(d), f2(d);
            for (size_t t = 0; t < L; ++t) {
                layer_norm(x.data() + t * d, w[b + 10].data(), w[b + 11].data(), bvec.data(),
                           lc.ln2_xhat.data() + t * d, lc.ln2_rstd[t], d);
                affine(w[b + 12].data(), w[b + 13].data(), bvec.data(), lc.f1.data() + t * F, F,
                       d);
                for (size_t j = 0; j < F; ++j) {
                    T z = lc.f1[t * F + j];
                    lc.g[t * F + j] = z * static_cast<T>(gelu_cdf(static_cast<double>(z)));
                }
                affine(w[b + 14].data(), w[b + 15].data(), lc.g.data() + t * F, f2.data(), d, F);
                for (size_t i = 0; i < d; ++i) x[t * d + i] += f2[i];
            }
        }

        cache.x_final = x;
        T z = w[idx_head_b()][0];
        for (size_t i = 0; i < d; ++i) z += w[idx_head_w()][i] * x[i];
        cache.logit = z;
        cache.prob = T(1) / (T(1) + std::exp(-z));
        return cache.prob;
    }

    void ln_backward(const T* dout, const T* gamma, const T* xhat, T rstd, T* dgamma, T* dbeta,
                     T* dx, size_t n) const {
        T m1 = 0, m2 = 0;
        std::vector<T> dxhat(n);
        for (size_t i = 0; i < n; ++i) {
            dgamma[i] += dout[i] * xhat[i];
            dbeta[i] += dout[i];
            dxhat[i] = dout[i] * gamma[i];
            m1 += dxhat[i];
            m2 += dxhat[i] * xhat[i];
        }
        m1 /= static_cast<T>(n);
        m2 /= static_cast<T>(n);
        for (size_t i = 0; i < n; ++i) dx[i] += rstd * (dxhat[i] - m1 - xhat[i] * m2);
    }

    // dz is dLoss/dlogit; accumulates parameter gradients.
    void backward(const Cache& cache, T dz) {
        const size_t L = cache.L;
        const T inv_sqrt_dh = T(1) / std::sqrt(static_cast<T>(dh));

        grad[idx_head_b()][0] += dz;
        std::vector<T> dx(L * d, T(0));
        for (size_t i = 0; i < d; ++i) {
            grad[idx_head_w()][i] += dz * cache.x_final[i];
            dx[i] += dz * w[idx_head_w()][i];
        }

        std::vector<T> a(L * d);  // recomputed LN1 output per layer
        for (size_t l = layers; l-- > 0;) {
            const LayerCache& lc = cache.layer[l];
            const size_t b = layer_base(l);

            // FFN block backward: x_out = after_attn + ff2(gelu(ff1(ln2(after_attn))))
            std::vector<T> dafter(L * d, T(0));
            std::vector<T> dg(F), df1(F), dby(d);
            for (size_t t = 0; t < L; ++t) {
                const T* dxt = dx.data() + t * d;
                for (size_t i = 0; i < d; ++i) dafter[t * d + i] += dxt[i];  // residual
                // through ff2
                std::fill(dg.begin(), dg.end(), T(0));
                for (size_t i = 0; i < d; ++i) {
                    T gi = dxt[i];
                    grad[b + 15][i] += gi;
                    const T* row = w[b + 14].data() + i * F;
                    T* grow = grad[b + 14].data() + i * F;
                    const T* gt = lc.g.data() + t * F;
                    for (size_t j = 0; j < F; ++j) {
                        grow[j] += gi * gt[j];
                        dg[j] += gi * row[j];
                    }
                }
                // through gelu
                for (size_t j = 0; j < F; ++j) {
                    double z = static_cast<double>(lc.f1[t * F + j]);
                    df1[j] = dg[j] * static_cast<T>(gelu_cdf(z) + z * gelu_pdf(z));
                }
                // through ff1: need ln2 output; recompute from xhat
                std::fill(dby.begin(), dby.end(), T(0));
                const T* xhat2 = lc.ln2_xhat.data() + t * d;
                for (size_t j = 0; j < F; ++j) {
                    T gj = df1[j];
                    grad[b + 13][j] += gj;
                    const T* row = w[b + 12].data() + j * d;
                    T* grow = grad[b + 12].data() + j * d;
                    for (size_t i = 0; i < d; ++i) {
                        grow[i] += gj * (w[b + 10][i] * xhat2[i] + w[b + 11][i]);
                        dby[i] += gj * row[i];
                    }
                }
                ln_backward(dby.data(), w[b + 10].data(), xhat2, lc.ln2_rstd[t],
                            grad[b + 10].data(), grad[b + 11].data(), dafter.data() + t * d, d);
            }

            // attention block backward: after_attn = x_in + Wo ctx + bo.
            // LN1 output rebuilt from the cached normalized values.
            for (size_t t = 0; t < L; ++t) {
                const T* xhat = lc.ln1_xhat.data() + t * d;
                T* at = a.data() + t * d;
                for (size_t i = 0; i < d; ++i) at[i] = w[b + 0][i] * xhat[i] + w[b + 1][i];
            }

            std::vector<T> dctx(L * d, T(0));
            for (size_t t = 0; t < L; ++t) {
                const T* dat = dafter.data() + t * d;
                for (size_t i = 0; i < d; ++i) {
                    T gi = dat[i];
                    grad[b + 9][i] += gi;
                    const T* row = w[b + 8].data() + i * d;
                    T* grow = grad[b + 8].data() + i * d;
                    const T* ct = lc.ctx.data() + t * d;
                    for (size_t j = 0; j < d; ++j) {
                        grow[j] += gi * ct[j];
                        dctx[t * d + j] += gi * row[j];
                    }
                }
            }

            std::vector<T> dq(L * d, T(0)), dk(L * d, T(0)), dv(L * d, T(0));
            std::vector<T> dprobs(L), ds(L);
            for (size_t h = 0; h < H; ++h) {
                const size_t off = h * dh;
                for (size_t t = 0; t < L; ++t) {
                    const T* prow = lc.probs.data() + (h * L + t) * L;
                    const T* dctx_t = dctx.data() + t * d + off;
                    T dot = 0;
                    for (size_t u = 0; u < L; ++u) {
                        T acc = 0;
                        const T* vu = lc.v.data() + u * d + off;
                        for (size_t e = 0; e < dh; ++e) acc += dctx_t[e] * vu[e];
                        dprobs[u] = acc;
                        dot += prow[u] * acc;
                        T* dvu = dv.data() + u * d + off;
                        for (size_t e = 0; e < dh; ++e) dvu[e] += prow[u] * dctx_t[e];
                    }
                    for (size_t u = 0; u < L; ++u) ds[u] = prow[u] * (dprobs[u] - dot);
                    T* dqt = dq.data() + t * d + off;
                    const T* qt = lc.q.data() + t * d + off;
                    for (size_t u = 0; u < L; ++u) {
                        const T* ku = lc.k.data() + u * d + off;
                        T* dku = dk.data() + u * d + off;
                        T su = ds[u] * inv_sqrt_dh;
                        for (size_t e = 0; e < dh; ++e) {
                            dqt[e] += su * ku[e];
                            dku[e] += su * qt[e];
                        }
                    }
                }
            }

            std::vector<T> da(L * d, T(0));
            auto back_proj = [&](size_t wi, size_t bi, const std::vector<T>& dout) {
                for (size_t t = 0; t < L; ++t) {
                    const T* dt = dout.data() + t * d;
                    const T* at = a.data() + t * d;
                    T* dat = da.data() + t * d;
                    for (size_t i = 0; i < d; ++i) {
                        T gi = dt[i];
                        if (gi == T(0)) continue;
                        grad[bi][i] += gi;
                        const T* row = w[wi].data() + i * d;
                        T* grow = grad[wi].data() + i * d;
                        for (size_t j = 0; j < d; ++j) {
                            grow[j] += gi * at[j];
                            dat[j] += gi * row[j];
                        }
                    }
                }
            };
            back_proj(b + 2, b + 3, dq);
            back_proj(b + 4, b + 5, dk);
            back_proj(b + 6, b + 7, dv);

            std::vector<T> dx_in(L * d, T(0));
            for (size_t t = 0; t < L; ++t) {
                for (size_t i = 0; i < d; ++i) dx_in[t * d + i] += dafter[t * d + i];  // residual
                ln_backward(da.data() + t * d, w[b + 0].data(), lc.ln1_xhat.data() + t * d,
                            lc.ln1_rstd[t], grad[b + 0].data(), grad[b + 1].data(),
                            dx_in.data() + t * d, d);
            }
            dx = std::move(dx_in);
        }

        // embedding layer
        for (size_t i = 0; i < d; ++i) grad[idx_cls][i] += dx[i];
        for (size_t t = 1; t < L; ++t) {
            const T* dxt = dx.data() + t * d;
            const T* raw = cache.raw.data() + (t - 1) * df2;
            for (size_t i = 0; i < d; ++i) {
                T gi = dxt[i];
                grad[idx_proj_b][i] += gi;
                T* grow = grad[idx_proj_w].data() + i * df2;
                for (size_t j = 0; j < df2; ++j) grow[j] += gi * raw[j];
            }
        }
    }
};

}  // namespace

// --- Scorer -----------------------------------------------------------------

struct Scorer::Impl {
    Engine<float> engine;
    explicit Impl(const EvaluatorModel& m) : engine(m) {}
};

Scorer::Scorer(const EvaluatorModel& model)
    : impl_(std::make_unique<Impl>(model)), config_(model.config) {}
Scorer::~Scorer() = default;
Scorer::Scorer(Scorer&&) noexcept = default;

double Scorer::score(const ScoringInput& input) const {
    Engine<float>::Cache cache;
    return static_cast<double>(impl_->engine.forward(input, cache));
}

double Scorer::score(const Procedure& query, const std::vector<ClipRef>& clips,
                     const Corpus& corpus) const {
    return score(make_scoring_input(query, clips, corpus, config_));
}

double score(const EvaluatorModel& model, const Procedure& query,
             const CandidateSequence& candidate, const Corpus& corpus) {
    Scorer scorer(model);
    return scorer.score(query, candidate.clips, corpus);
}

// --- training -----------------------------------------------------------------

namespace {

struct AdamState {
    std::vector<std::vector<float>> m, v;
    long step = 0;
};

void adam_step(Engine<float>& eng, AdamState& st, double lr) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    st.step += 1;
    double c1 = 1.0 - std::pow(b1, static_cast<double>(st.step));
    double c2 = 1.0 - std::pow(b2, static_cast<double>(st.step));
    for (size_t ti = 0; ti < eng.w.size(); ++ti) {
        auto& wv = eng.w[ti];
        auto& gv = eng.grad[ti];
        auto& mv = st.m[ti];
        auto& vv = st.v[ti];
        for (size_t i = 0; i < wv.size(); ++i) {
            double g = gv[i];
            double m = b1 * mv[i] + (1.0 - b1) * g;
            double v = b2 * vv[i] + (1.0 - b2) * g * g;
            mv[i] = static_cast<float>(m);
            vv[i] = static_cast<float>(v);
            wv[i] = static_cast<float>(wv[i] - lr * (m / c1) / (std::sqrt(v / c2) + eps));
        }
    }
}

}  // namespace

TrainResult train(const EvaluatorConfig& config, const Corpus& corpus,
                  const std::vector<GroundTruthSample>& positives,
                  const std::vector<GroundTruthSample>& negatives) {
    config.validate();
    if (positives.empty()) raise(ErrorCode::EmptyInstance, "training needs >= 1 positive");

    TrainResult result;
    result.model = init_model(config, static_cast<int>(corpus.dim()));
    if (config.epochs == 0) return result;

    std::vector<ScoringInput> pos_in, neg_in;
    pos_in.reserve(positives.size());
    for (const auto& s : positives)
        pos_in.push_back(make_scoring_input(s.procedure, s.clips, corpus, config));
    neg_in.reserve(negatives.size());
    for (const auto& s : negatives)
        neg_in.push_back(make_scoring_input(s.procedure, s.clips, corpus, config));

    Engine<float> eng(result.model);
    AdamState adam;
    for (const auto& t : eng.w) {
        adam.m.emplace_back(t.size(), 0.0f);
        adam.v.emplace_back(t.size(), 0.0f);
    }

    const int ratio = config.negatives_per_positive;
    size_t pos_per_batch =
        std::max<size_t>(1, static_cast<size_t>(config.batch_size) / (1 + ratio));
    size_t neg_per_batch = neg_in.empty()
                               ? 0
                               : static_cast<size_t>(config.batch_size) - pos_per_batch;

    Engine<float>::Cache cache;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        Rng rng = Rng::fork(config.seed, 0x7281 + static_cast<uint64_t>(epoch));
        std::vector<size_t> pos_order(pos_in.size()), neg_order(neg_in.size());
        std::iota(pos_order.begin(), pos_order.end(), 0);
        std::iota(neg_order.begin(), neg_order.end(), 0);
        rng.shuffle(pos_order);
        rng.shuffle(neg_order);

        double epoch_loss = 0.0;
        size_t epoch_count = 0;
        size_t neg_cursor = 0;
        size_t batches = (pos_in.size() + pos_per_batch - 1) / pos_per_batch;
        for (size_t bi = 0; bi < batches; ++bi) {
            std::vector<std::pair<const ScoringInput*, int>> batch;
            for (size_t p = bi * pos_per_batch;
                 p < std::min(pos_in.size(), (bi + 1) * pos_per_batch); ++p)
                batch.push_back({&pos_in[pos_order[p]], 1});
            for (size_t q = 0; q < neg_per_batch; ++q) {
                batch.push_back({&neg_in[neg_order[neg_cursor]], 0});
                neg_cursor = (neg_cursor + 1) % neg_order.size();
            }
            eng.zero_grad();
            double batch_loss = 0.0;
            for (const auto& [input, label] : batch) {
                float p = eng.forward(*input, cache);
                batch_loss += bce_loss(p, label);
                float dz = (p - static_cast<float>(label)) / static_cast<float>(batch.size());
                eng.backward(cache, dz);
            }
            if (!std::isfinite(batch_loss))
                raise(ErrorCode::NumericFailure,
                      "NaN training loss at epoch " + std::to_string(epoch) +
                          "; try a smaller --lr (current " +
                          std::to_string(config.learning_rate) + ")");
            adam_step(eng, adam, config.learning_rate);
            epoch_loss += batch_loss;
            epoch_count += batch.size();
        }
        result.epoch_mean_loss.push_back(epoch_loss / static_cast<double>(epoch_count));
    }
    eng.write_back(result.model);
    return result;
}

void write_loss_csv(const std::vector<double>& epoch_mean_loss,
                    const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) raise(ErrorCode::MissingFile, "cannot write " + path.string());
    out << "epoch,mean_loss\n";
    out.precision(17);
    for (size_t e = 0; e < epoch_mean_loss.size(); ++e)
        out << e << "," << epoch_mean_loss[e] << "\n";
}

// --- ranking -------------------------------------------------------------------

std::vector<size_t> rank_by_scores(const std::vector<double>& scores) {
    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return scores[a] > scores[b]; });
    return order;
}

std::vector<RankedCandidate> rank_candidates(const EvaluatorModel& model, const Procedure& query,
                                             const std::vector<CandidateSequence>& candidates,
                                             const Corpus& corpus, int threads) {
    if (candidates.empty()) raise(ErrorCode::NoCandidates, "no candidates to rank");
    Scorer scorer(model);
    std::vector<double> scores(candidates.size());
    parallel_for(candidates.size(), threads, [&](size_t i) {
        scores[i] = scorer.score(query, candidates[i].clips, corpus);
    });
    std::vector<RankedCandidate> out;
    out.reserve(candidates.size());
    for (size_t idx : rank_by_scores(scores)) out.push_back({idx, scores[idx]});
    return out;
}

// --- gradient check --------------------------------------------------------------

double gradient_check(const EvaluatorModel& model, const std::vector<LabeledInput>& batch,
                      const GradientCheckOptions& options) {
    if (batch.empty()) raise(ErrorCode::EmptyInstance, "gradient check needs a batch");
    Engine<double> eng(model);

    auto batch_loss = [&]() {
        Engine<double>::Cache cache;
        double loss = 0.0;
        for (const LabeledInput& s : batch)
            loss += bce_loss(eng.forward(s.input, cache), s.label);
        return loss / static_cast<double>(batch.size());
    };

    eng.zero_grad();
    {
        Engine<double>::Cache cache;
        for (const LabeledInput& s : batch) {
            double p = eng.forward(s.input, cache);
            double dz = (p - s.label) / static_cast<double>(batch.size());
            eng.backward(cache, dz);
        }
    }

    // stratified subset: every tensor contributes, so every layer type is hit
    Rng rng = Rng::fork(options.seed, 0x6D5C);
    std::vector<std::pair<size_t, size_t>> chosen;
    size_t per_tensor = std::max<size_t>(1, options.subset_size / eng.w.size());
    for (size_t ti = 0; ti < eng.w.size(); ++ti)
        for (size_t p = 0; p < per_tensor && p < eng.w[ti].size(); ++p)
            chosen.push_back({ti, rng.bounded(eng.w[ti].size())});

    std::vector<double> analytic(chosen.size());
    for (size_t c = 0; c < chosen.size(); ++c)
        analytic[c] = eng.grad[chosen[c].first][chosen[c].second];

    if (options.corrupt_one) {
        for (size_t c = 0; c < chosen.size(); ++c) {
            if (std::abs(analytic[c]) > 1e-6) {
                analytic[c] = -analytic[c];
                break;
            }
        }
    }

    double max_rel = 0.0;
    for (size_t c = 0; c < chosen.size(); ++c) {
        auto [ti, pi] = chosen[c];
        double saved = eng.w[ti][pi];
        eng.w[ti][pi] = saved + options.h;
        double up = batch_loss();
        eng.w[ti][pi] = saved - options.h;
        double down = batch_loss();
        eng.w[ti][pi] = saved;
        double fd = (up - down) / (2.0 * options.h);
        double denom = std::max({std::abs(analytic[c]), std::abs(fd), 1e-8});
        max_rel = std::max(max_rel, std::abs(analytic[c] - fd) / denom);
    }
    return max_rel;
}

}  // namespace stitcher
