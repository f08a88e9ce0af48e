#include "tvsurv/model.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "tvsurv/errors.hpp"
#include "tvsurv/rng.hpp"

namespace tvsurv {

using ad::Tensor;
using ad::Var;
using json = nlohmann::json;

namespace {

constexpr const char* kCheckpointTag = "tvsurv-checkpoint/1";
constexpr std::size_t kPredictChunk = 512;

}  // namespace

EncoderKind parse_encoder_kind(const std::string& s) {
    if (s == "gru") return EncoderKind::Gru;
    if (s == "flat") return EncoderKind::Flat;
    throw ConfigError("unknown encoder '" + s + "' (expected gru|flat)");
}

HazardLink parse_hazard_link(const std::string& s) {
    if (s == "sigmoid") return HazardLink::Sigmoid;
    if (s == "softmax") return HazardLink::Softmax;
    throw ConfigError("unknown hazard link '" + s + "' (expected sigmoid|softmax)");
}

std::string to_string(EncoderKind k) { return k == EncoderKind::Gru ? "gru" : "flat"; }
std::string to_string(HazardLink l) { return l == HazardLink::Sigmoid ? "sigmoid" : "softmax"; }

void ModelConfig::validate() const {
    if (d < 1 || K < 1 || hidden < 1 || repr_dim < 1 || head_hidden < 1 || treat_embed_dim < 1) {
        throw ConfigError("model: all sizes must be >= 1");
    }
    if (m < 2) throw ConfigError("model: m must be >= 2");
}

// ---------------------------------------------------------------------------

Batch Batch::from(std::span<const Trajectory* const> rows, std::size_t d, std::size_t K) {
    Batch b;
    b.size = rows.size();
    const std::size_t B = rows.size();
    Tensor flat(B, (K + 1) * d + K);
    for (std::size_t k = 0; k <= K; ++k) {
        Tensor x(B, d), prev(B, 3);
        for (std::size_t i = 0; i < B; ++i) {
            const Trajectory& t = *rows[i];
            if (t.covariates.size() != K + 1 || t.treatments.size() != K + 1) {
                throw ShapeError("batch: trajectory '" + t.id + "' has " + std::to_string(t.treatments.size()) +
                                 " steps, model expects " + std::to_string(K + 1));
            }
            if (t.covariates[k].size() != d) {
                throw ShapeError("batch: trajectory '" + t.id + "' has covariate dimension " +
                                 std::to_string(t.covariates[k].size()) + ", model expects " + std::to_string(d));
            }
            for (std::size_t j = 0; j < d; ++j) {
                x(i, j) = t.covariates[k][j];
                flat(i, k * d + j) = t.covariates[k][j];
            }
            const int p = t.previous_treatment(k);
            prev(i, p < 0 ? 2 : static_cast<std::size_t>(p)) = 1.0;
            if (k < K) flat(i, (K + 1) * d + k) = t.treatments[k];
        }
        b.x.push_back(std::move(x));
        b.prev_onehot.push_back(std::move(prev));
    }
    b.flat.push_back(std::move(flat));
    return b;
}

std::vector<Tensor> sequence_bits(std::span<const TreatmentSequence* const> seqs, std::size_t K) {
    std::vector<Tensor> out;
    for (std::size_t k = 0; k <= K; ++k) {
        Tensor t(seqs.size(), 1);
        for (std::size_t i = 0; i < seqs.size(); ++i) {
            if (seqs[i]->size() != K + 1) {
                throw ShapeError("sequence of length " + std::to_string(seqs[i]->size()) + ", expected " +
                                 std::to_string(K + 1));
            }
            t(i, 0) = (*seqs[i])[k];
        }
        out.push_back(std::move(t));
    }
    return out;
}

std::vector<Tensor> sequence_bits(const TreatmentSequence& seq, std::size_t rows, std::size_t K) {
    if (seq.size() != K + 1) {
        throw ShapeError("sequence of length " + std::to_string(seq.size()) + ", expected " + std::to_string(K + 1));
    }
    std::vector<Tensor> out;
    for (std::size_t k = 0; k <= K; ++k) out.emplace_back(rows, 1, static_cast<double>(seq[k]));
    return out;
}

// ---------------------------------------------------------------------------

Model::Model(ModelConfig config, TimeGrid grid) : config_(config), grid_(std::move(grid)) {
    config_.validate();
    grid_.validate();
    if (grid_.m() != config_.m) {
        throw ConfigError("model: grid has " + std::to_string(grid_.m()) + " intervals but model.m = " +
                          std::to_string(config_.m));
    }
    const auto d = config_.d, K = config_.K, H = config_.hidden, p = config_.repr_dim, te = config_.treat_embed_dim,
               hh = config_.head_hidden, m = config_.m;
    using G = ParamGroup;
    if (config_.encoder == EncoderKind::Gru) {
        add_param("enc_wx", G::Encoder, true, d + te, 3 * H, double(d + te));
        add_param("enc_wh", G::Encoder, true, H, 3 * H, double(H));
        add_param("enc_bx", G::Encoder, false, 1, 3 * H, 0.0);
        add_param("enc_bh", G::Encoder, false, 1, 3 * H, 0.0);
        add_param("emb_prev", G::Encoder, true, 2, te, 1.0);
        add_param("emb_start", G::Encoder, false, 1, te, 1.0);
    } else {
        const std::size_t in = (K + 1) * d + K;
        add_param("flat_w", G::Encoder, true, in, H, double(in));
        add_param("flat_b", G::Encoder, false, 1, H, 0.0);
    }
    add_param("phi_w1", G::Representation, true, H, p, double(H));
    add_param("phi_b1", G::Representation, false, 1, p, 0.0);
    add_param("phi_w2", G::Representation, true, p, p, double(p));
    add_param("phi_b2", G::Representation, false, 1, p, 0.0);
    add_param("seq_wx", G::Head, true, 1, 3 * te, 1.0);
    add_param("seq_wh", G::Head, true, te, 3 * te, double(te));
    add_param("seq_bx", G::Head, false, 1, 3 * te, 0.0);
    add_param("seq_bh", G::Head, false, 1, 3 * te, 0.0);
    add_param("head_w1", G::Head, true, p + te, hh, double(p + te));
    add_param("head_b1", G::Head, false, 1, hh, 0.0);
    add_param("head_w2", G::Head, true, hh, m, double(hh));
    add_param("head_b2", G::Head, false, 1, m, 0.0);
    initialize(config_.seed, nullptr);
}

void Model::add_param(const std::string& name, ParamGroup g, bool regularized, std::size_t rows, std::size_t cols,
                      double fan_in) {
    params_.push_back({name, g, regularized, ad::parameter(Tensor(rows, cols))});
    fan_in_.push_back(fan_in);
}

// Matrices and embeddings: uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases (fan_in 0): zero.
void Model::initialize(std::uint64_t seed, const ParamGroup* only) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (only && params_[i].group != *only) continue;
        Tensor& v = params_[i].var.mutable_value();
        if (fan_in_[i] <= 0.0) {
            v.fill(0.0);
            continue;
        }
        std::mt19937_64 rng(stream_seed(seed, i));
        const double bound = 1.0 / std::sqrt(fan_in_[i]);
        std::uniform_real_distribution<double> u(-bound, bound);
        for (auto& x : v.data()) x = u(rng);
    }
}

void Model::reinitialize(ParamGroup g, std::uint64_t seed) { initialize(seed, &g); }

std::vector<Var> Model::param_vars() const {
    std::vector<Var> out;
    for (const auto& p : params_) out.push_back(p.var);
    return out;
}

std::vector<Var> Model::group_vars(ParamGroup g) const {
    std::vector<Var> out;
    for (const auto& p : params_)
        if (p.group == g) out.push_back(p.var);
    return out;
}

Var& Model::param(const std::string& name) {
    for (auto& p : params_)
        if (p.name == name) return p.var;
    throw ConfigError("model has no parameter '" + name + "'");
}

const Var& Model::param(const std::string& name) const { return const_cast<Model*>(this)->param(name); }

// PyTorch gate layout: [reset | update | candidate].
Var Model::gru_step(const Var& x, const Var& h, const std::string& prefix, std::size_t H) const {
    const Var gx = ad::matmul(x, param(prefix + "_wx")) + param(prefix + "_bx");
    const Var gh = ad::matmul(h, param(prefix + "_wh")) + param(prefix + "_bh");
    const Var r = ad::sigmoid(ad::slice_cols(gx, 0, H) + ad::slice_cols(gh, 0, H));
    const Var u = ad::sigmoid(ad::slice_cols(gx, H, 2 * H) + ad::slice_cols(gh, H, 2 * H));
    const Var n = ad::tanh(ad::slice_cols(gx, 2 * H, 3 * H) + r * ad::slice_cols(gh, 2 * H, 3 * H));
    return n + u * (h - n);
}

Var Model::encode(const Batch& batch) const {
    const std::size_t H = config_.hidden;
    if (config_.encoder == EncoderKind::Flat) {
        if (batch.flat.empty() || batch.flat[0].cols() != (config_.K + 1) * config_.d + config_.K) {
            throw ShapeError("encode: flat input has wrong width");
        }
        return ad::tanh(ad::matmul(ad::constant(batch.flat[0]), param("flat_w")) + param("flat_b"));
    }
    if (batch.x.size() != config_.K + 1) throw ShapeError("encode: batch has wrong number of steps");
    const Var table = ad::concat(std::vector<Var>{param("emb_prev"), param("emb_start")}, 0);
    Var h = ad::constant(Tensor(batch.size, H));
    for (std::size_t k = 0; k <= config_.K; ++k) {
        if (batch.x[k].cols() != config_.d) {
            throw ShapeError("encode: covariate width " + std::to_string(batch.x[k].cols()) + ", model expects " +
                             std::to_string(config_.d));
        }
        const Var emb = ad::matmul(ad::constant(batch.prev_onehot[k]), table);
        const Var in = ad::concat(std::vector<Var>{ad::constant(batch.x[k]), emb}, 1);
        h = gru_step(in, h, "enc", H);
    }
    return h;
}

Var Model::represent(const Var& s) const {
    if (s.cols() != config_.hidden) throw ShapeError("represent: input width " + std::to_string(s.cols()));
    auto act = [&](const Var& v) { return config_.repr_activation == Activation::Tanh ? ad::tanh(v) : v; };
    const Var h1 = act(ad::matmul(s, param("phi_w1")) + param("phi_b1"));
    return act(ad::matmul(h1, param("phi_w2")) + param("phi_b2"));
}

Var Model::embed_sequence(std::span<const Tensor> bits) const {
    if (bits.size() != config_.K + 1) throw ShapeError("embed_sequence: wrong sequence length");
    Var h = ad::constant(Tensor(bits[0].rows(), config_.treat_embed_dim));
    for (const auto& b : bits) h = gru_step(ad::constant(b), h, "seq", config_.treat_embed_dim);
    return h;
}

Var Model::logits(const Var& z, const Var& seq_embedding) const {
    const Var in = ad::concat(std::vector<Var>{z, seq_embedding}, 1);
    const Var h = ad::tanh(ad::matmul(in, param("head_w1")) + param("head_b1"));
    return ad::matmul(h, param("head_w2")) + param("head_b2");
}

Var Model::hazards(const Var& z, const Var& seq_embedding) const {
    const Var l = logits(z, seq_embedding);
    return config_.link == HazardLink::Sigmoid ? ad::sigmoid(l) : ad::softmax(l);
}

std::pair<Var, Var> Model::log_hazards(const Var& z, const Var& seq_embedding) const {
    const Var l = logits(z, seq_embedding);
    if (config_.link == HazardLink::Sigmoid) {
        return {ad::log(ad::sigmoid(l)), ad::log(ad::sigmoid(ad::scale(l, -1.0)))};
    }
    const Var lam = ad::softmax(l);
    return {ad::log(lam), ad::log(ad::add_scalar(ad::scale(lam, -1.0), 1.0))};
}

namespace {

std::vector<SurvivalCurve> curves_from(const Tensor& lam) {
    std::vector<SurvivalCurve> out;
    out.reserve(lam.rows());
    for (std::size_t i = 0; i < lam.rows(); ++i) {
        std::vector<double> h(lam.cols());
        for (std::size_t j = 0; j < lam.cols(); ++j) h[j] = lam(i, j);
        out.push_back(SurvivalCurve::from_hazards(std::move(h)));
    }
    return out;
}

}  // namespace

SurvivalCurve Model::predict(const Trajectory& t, std::span<const int> sequence) const {
    return predict(std::span<const Trajectory>(&t, 1), sequence).front();
}

std::vector<SurvivalCurve> Model::predict(std::span<const Trajectory> rows, std::span<const int> sequence) const {
    ad::NoGradGuard guard;
    const TreatmentSequence seq(sequence.begin(), sequence.end());
    std::vector<SurvivalCurve> out;
    out.reserve(rows.size());
    for (std::size_t start = 0; start < rows.size(); start += kPredictChunk) {
        const std::size_t end = std::min(rows.size(), start + kPredictChunk);
        std::vector<const Trajectory*> ptrs;
        for (std::size_t i = start; i < end; ++i) ptrs.push_back(&rows[i]);
        const Var z = represent(encode(Batch::from(ptrs, config_.d, config_.K)));
        const Var e = embed_sequence(sequence_bits(seq, ptrs.size(), config_.K));
        auto part = curves_from(hazards(z, e).value());
        std::move(part.begin(), part.end(), std::back_inserter(out));
    }
    return out;
}

std::vector<SurvivalCurve> Model::predict_factual(std::span<const Trajectory> rows) const {
    ad::NoGradGuard guard;
    std::vector<SurvivalCurve> out;
    out.reserve(rows.size());
    for (std::size_t start = 0; start < rows.size(); start += kPredictChunk) {
        const std::size_t end = std::min(rows.size(), start + kPredictChunk);
        std::vector<const Trajectory*> ptrs;
        std::vector<const TreatmentSequence*> seqs;
        for (std::size_t i = start; i < end; ++i) {
            ptrs.push_back(&rows[i]);
            seqs.push_back(&rows[i].treatments);
        }
        const Var z = represent(encode(Batch::from(ptrs, config_.d, config_.K)));
        const Var e = embed_sequence(sequence_bits(seqs, config_.K));
        auto part = curves_from(hazards(z, e).value());
        std::move(part.begin(), part.end(), std::back_inserter(out));
    }
    return out;
}

Tensor Model::representations(std::span<const Trajectory> rows) const {
    ad::NoGradGuard guard;
    Tensor out(rows.size(), config_.repr_dim);
    for (std::size_t start = 0; start < rows.size(); start += kPredictChunk) {
        const std::size_t end = std::min(rows.size(), start + kPredictChunk);
        std::vector<const Trajectory*> ptrs;
        for (std::size_t i = start; i < end; ++i) ptrs.push_back(&rows[i]);
        const Var z = represent(encode(Batch::from(ptrs, config_.d, config_.K)));
        for (std::size_t i = start; i < end; ++i)
            for (std::size_t j = 0; j < config_.repr_dim; ++j) out(i, j) = z.value()(i - start, j);
    }
    return out;
}

// ---------------------------------------------------------------------------

void Model::save(const std::filesystem::path& path) const {
    json cfg = {{"d", config_.d},
                {"K", config_.K},
                {"hidden", config_.hidden},
                {"repr_dim", config_.repr_dim},
                {"head_hidden", config_.head_hidden},
                {"m", config_.m},
                {"treat_embed_dim", config_.treat_embed_dim},
                {"seed", config_.seed},
                {"encoder", to_string(config_.encoder)},
                {"link", to_string(config_.link)},
                {"repr_activation", config_.repr_activation == Activation::Tanh ? "tanh" : "identity"}};
    json params = json::object();
    for (const auto& p : params_) {
        params[p.name] = {{"shape", {p.var.rows(), p.var.cols()}}, {"data", p.var.value().vec()}};
    }
    const json doc = {{"format", kCheckpointTag}, {"config", cfg}, {"grid", grid_.boundaries}, {"params", params}};
    std::ofstream out(path);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    out << doc.dump() << '\n';
}

Model Model::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read checkpoint " + path.string());
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw DataError("checkpoint " + path.string() + " is not valid JSON: " + e.what());
    }
    if (doc.value("format", "") != kCheckpointTag) {
        throw DataError("checkpoint " + path.string() + " has unknown format tag (expected " + kCheckpointTag + ")");
    }
    try {
        const json& c = doc.at("config");
        ModelConfig cfg;
        cfg.d = c.at("d");
        cfg.K = c.at("K");
        cfg.hidden = c.at("hidden");
        cfg.repr_dim = c.at("repr_dim");
        cfg.head_hidden = c.at("head_hidden");
        cfg.m = c.at("m");
        cfg.treat_embed_dim = c.at("treat_embed_dim");
        cfg.seed = c.at("seed");
        cfg.encoder = parse_encoder_kind(c.at("encoder"));
        cfg.link = parse_hazard_link(c.at("link"));
        cfg.repr_activation = c.at("repr_activation") == "identity" ? Activation::Identity : Activation::Tanh;
        TimeGrid grid{doc.at("grid").get<std::vector<double>>()};
        Model model(cfg, grid);
        const json& params = doc.at("params");
        for (auto& p : model.params_) {
            const json& entry = params.at(p.name);
            const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
            auto data = entry.at("data").get<std::vector<double>>();
            if (shape.size() != 2 || shape[0] != p.var.rows() || shape[1] != p.var.cols() ||
                data.size() != p.var.value().size()) {
                throw DataError("checkpoint parameter '" + p.name + "' has the wrong shape");
            }
            p.var.mutable_value() = Tensor(shape[0], shape[1], std::move(data));
        }
        return model;
    } catch (const json::exception& e) {
        throw DataError("checkpoint " + path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------

double rmst(const SurvivalCurve& curve, const TimeGrid& grid) {
    if (curve.intervals() != grid.m()) throw ShapeError("rmst: curve and grid disagree on m");
    const auto s = curve.on_boundaries();
    double area = 0.0;
    for (std::size_t j = 1; j < s.size(); ++j) {
        area += 0.5 * (s[j - 1] + s[j]) * (grid.boundaries[j] - grid.boundaries[j - 1]);
    }
    return area;
}

TvCate tv_cate(const SurvivalCurve& a, const SurvivalCurve& b, const TimeGrid& grid) {
    if (a.intervals() != grid.m() || b.intervals() != grid.m()) throw ShapeError("tv_cate: curve/grid mismatch");
    TvCate out;
    const auto sa = a.on_boundaries(), sb = b.on_boundaries();
    for (std::size_t j = 0; j < sa.size(); ++j) out.effect.push_back(sa[j] - sb[j]);
    for (std::size_t j = 1; j < sa.size(); ++j) {
        out.delta_rmst += 0.5 * (out.effect[j - 1] + out.effect[j]) * (grid.boundaries[j] - grid.boundaries[j - 1]);
    }
    return out;
}

TvCate tv_cate(const Model& model, const Trajectory& t, std::span<const int> a, std::span<const int> b) {
    return tv_cate(model.predict(t, a), model.predict(t, b), model.grid());
}

}  // namespace tvsurv
