#pragma once

// History encoder -> representation -> treatment-conditioned discrete hazard head.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tvsurv/autodiff.hpp"
#include "tvsurv/data.hpp"

namespace tvsurv {

enum class EncoderKind { Gru, Flat };
enum class HazardLink { Sigmoid, Softmax };
enum class Activation { Tanh, Identity };

EncoderKind parse_encoder_kind(const std::string& s);
HazardLink parse_hazard_link(const std::string& s);
std::string to_string(EncoderKind k);
std::string to_string(HazardLink l);

struct ModelConfig {
    std::size_t d = 1;
    std::size_t K = 1;
    std::size_t hidden = 16;
    std::size_t repr_dim = 8;
    std::size_t head_hidden = 32;
    std::size_t m = 20;
    std::size_t treat_embed_dim = 4;
    std::uint64_t seed = 0;
    EncoderKind encoder = EncoderKind::Gru;
    HazardLink link = HazardLink::Sigmoid;
    // Identity turns phi into a linear map (used by tests).
    Activation repr_activation = Activation::Tanh;

    void validate() const;
};

enum class ParamGroup { Encoder, Representation, Head };

struct NamedParam {
    std::string name;
    ParamGroup group;
    bool regularized;  // false for biases and the "no previous treatment" row
    ad::Var var;
};

/// Batched inputs for a set of trajectories, laid out step by step.
struct Batch {
    std::size_t size = 0;
    std::vector<ad::Tensor> x;          // per k: [B, d]
    std::vector<ad::Tensor> prev_onehot;  // per k: [B, 3] over {T(k-1)=0, T(k-1)=1, none}
    std::vector<ad::Tensor> flat;       // [B, (K+1)d + K] for the flat encoder (single entry)

    static Batch from(std::span<const Trajectory* const> rows, std::size_t d, std::size_t K);
};

/// Bits of target sequences, per step: [B, 1].
std::vector<ad::Tensor> sequence_bits(std::span<const TreatmentSequence* const> seqs, std::size_t K);
std::vector<ad::Tensor> sequence_bits(const TreatmentSequence& seq, std::size_t rows, std::size_t K);

class Model {
public:
    Model(ModelConfig config, TimeGrid grid);

    const ModelConfig& config() const { return config_; }
    const TimeGrid& grid() const { return grid_; }

    std::vector<NamedParam>& params() { return params_; }
    const std::vector<NamedParam>& params() const { return params_; }
    std::vector<ad::Var> param_vars() const;
    std::vector<ad::Var> group_vars(ParamGroup g) const;
    ad::Var& param(const std::string& name);
    const ad::Var& param(const std::string& name) const;

    /// Final encoder state s, [B, hidden].
    ad::Var encode(const Batch& batch) const;
    /// z = phi(s), [B, repr_dim].
    ad::Var represent(const ad::Var& s) const;
    /// Target-sequence embedding, [B, treat_embed_dim].
    ad::Var embed_sequence(std::span<const ad::Tensor> bits) const;
    /// Head logits [B, m].
    ad::Var logits(const ad::Var& z, const ad::Var& seq_embedding) const;
    /// Discrete hazards [B, m].
    ad::Var hazards(const ad::Var& z, const ad::Var& seq_embedding) const;
    /// log(lambda) and log(1 - lambda), [B, m] each; numerically safe for either link.
    std::pair<ad::Var, ad::Var> log_hazards(const ad::Var& z, const ad::Var& seq_embedding) const;

    /// Predicted curve for one trajectory under a target sequence.
    SurvivalCurve predict(const Trajectory& t, std::span<const int> sequence) const;
    /// Predictions for a whole cohort under one fixed sequence (no gradients).
    std::vector<SurvivalCurve> predict(std::span<const Trajectory> rows, std::span<const int> sequence) const;
    /// Predictions under each individual's factual sequence.
    std::vector<SurvivalCurve> predict_factual(std::span<const Trajectory> rows) const;
    /// Representations z without gradients, [n, repr_dim].
    ad::Tensor representations(std::span<const Trajectory> rows) const;

    /// Re-draws the parameters of the given groups from the initializer.
    void reinitialize(ParamGroup g, std::uint64_t seed);

    void save(const std::filesystem::path& path) const;
    static Model load(const std::filesystem::path& path);

private:
    void add_param(const std::string& name, ParamGroup g, bool regularized, std::size_t rows, std::size_t cols,
                   double fan_in);
    void initialize(std::uint64_t seed, const ParamGroup* only);
    ad::Var gru_step(const ad::Var& x, const ad::Var& h, const std::string& prefix, std::size_t hidden) const;

    ModelConfig config_;
    TimeGrid grid_;
    std::vector<NamedParam> params_;
    std::vector<double> fan_in_;
};

struct TvCate {
    std::vector<double> effect;  // S_a - S_b on every grid boundary (first entry 0)
    double delta_rmst = 0.0;     // trapezoidal, up to tau_m
};

/// Restricted mean survival time up to tau_m by the trapezoidal rule over the boundaries.
double rmst(const SurvivalCurve& curve, const TimeGrid& grid);

TvCate tv_cate(const Model& model, const Trajectory& t, std::span<const int> a, std::span<const int> b);
TvCate tv_cate(const SurvivalCurve& a, const SurvivalCurve& b, const TimeGrid& grid);

}  // namespace tvsurv
