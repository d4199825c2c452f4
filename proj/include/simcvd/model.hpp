#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "simcvd/synth_data.hpp"
#include "simcvd/tensors.hpp"

namespace simcvd {

/// Capacity and layout of the dual-branch network plus its projection head.
struct ArchDescriptor {
    int base_width = 8;                 // channels at full resolution
    int levels = 3;                     // number of stride-2 downsamplings
    double leak = 0.01;                 // leaky-ReLU slope used throughout
    int pool_size = 128;                // per-slice adaptive average pooling output (pool_size^2)
    std::vector<int> mlp_hidden{512, 256};
    int d_h = 128;                      // embedding width per slice

    [[nodiscard]] int downsampling() const { return 1 << levels; }
    [[nodiscard]] int encoded_channels() const { return base_width << levels; }
    friend bool operator==(const ArchDescriptor&, const ArchDescriptor&) = default;
};

void to_json(nlohmann::json& j, const ArchDescriptor& a);
void from_json(const nlohmann::json& j, ArchDescriptor& a);

struct Tensor {
    std::string name;
    std::vector<int> shape;     // {rows, cols}; column-major storage
    std::vector<double> values;

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Named parameters for one network (student or teacher), including its projection head.
class ParamSet {
public:
    ParamSet() = default;
    explicit ParamSet(ArchDescriptor arch);

    [[nodiscard]] const ArchDescriptor& arch() const { return arch_; }
    [[nodiscard]] std::vector<Tensor>& tensors() { return tensors_; }
    [[nodiscard]] const std::vector<Tensor>& tensors() const { return tensors_; }
    [[nodiscard]] const Tensor& at(const std::string& name) const;
    [[nodiscard]] Tensor& at(const std::string& name);
    [[nodiscard]] std::size_t parameter_count() const;

    /// Same architecture and tensor layout, all entries zero.
    [[nodiscard]] ParamSet zeros_like() const;
    /// Order-sensitive FNV-1a hash over every value's bit pattern.
    [[nodiscard]] std::uint64_t checksum() const;
    [[nodiscard]] bool all_finite() const;

    friend bool operator==(const ParamSet&, const ParamSet&) = default;

private:
    ArchDescriptor arch_;
    std::vector<Tensor> tensors_;
};

/// He-normal weights, zero biases; deterministic in `seed`.
ParamSet init_params(const ArchDescriptor& arch, std::uint64_t seed);

/// Throws naming the first mismatching tensor unless `a` and `b` have identical layout.
void require_compatible(const ParamSet& a, const ParamSet& b, const std::string& what);

/// teacher <- decay * teacher + (1 - decay) * student, entrywise.
ParamSet ema_update(const ParamSet& teacher, const ParamSet& student, double decay);
void ema_update_inplace(ParamSet& teacher, const ParamSet& student, double decay);

// ---------------------------------------------------------------------------------------------
// Backbone

/// Cached intermediates of one forward pass, consumed by `backward`.
struct ForwardTape {
    struct Layer {
        Matrix input;    // im2col / gathered input of the convolution
        Matrix output;   // post-activation output (for activation derivatives)
        Shape3 shape;    // spatial shape of the layer input
    };
    Shape3 input_shape;
    std::vector<Layer> layers;
    Matrix final_features;  // decoder output feeding both heads
};

struct ForwardResult {
    DualOutput out;
    HiddenPattern hidden;
};

/// Dual-branch forward pass. Requires every spatial dim divisible by 2^levels.
ForwardResult forward(const ParamSet& params, const Volume& x, ForwardTape* tape = nullptr);
ForwardResult forward(const ParamSet& params, const RealGrid& x, ForwardTape* tape = nullptr);

/// Accumulates parameter gradients into `grads` given upstream gradients of the probability map,
/// the SDM map and the hidden pattern. Empty grids/matrices mean zero upstream gradient.
void backward(const ParamSet& params, const ForwardTape& tape, const ForwardResult& result, const RealGrid& d_prob,
              const RealGrid& d_sdm, const Matrix& d_hidden, ParamSet& grads);

// ---------------------------------------------------------------------------------------------
// Projection head

/// Seed and rate of one alpha-dropout mask.
struct DropoutMask {
    std::uint64_t seed = 0;
    double p = 0.0;
};

/// Alpha-dropout affine constants for rate p: y = a * (x*m + alpha'*(1-m)) + b.
struct AlphaDropoutCoeffs {
    double a = 1.0;
    double b = 0.0;
    double alpha_prime = 0.0;
};
AlphaDropoutCoeffs alpha_dropout_coeffs(double p);

/// Keep-indicators (1 = kept) for `n` units; deterministic in (seed, p).
std::vector<std::uint8_t> dropout_keep(const DropoutMask& mask, std::size_t n);

RealGrid alpha_dropout(const RealGrid& x, const DropoutMask& mask);

/// (out x in) averaging matrix of 1D adaptive average pooling.
Matrix adaptive_pool_matrix(int in, int out);

struct ProjectionTape {
    Shape3 shape;
    std::vector<double> scale;   // d(dropped)/d(input) per voxel
    Matrix pooled;               // slices x pool^2
    std::vector<Matrix> hidden;  // post-activation MLP layers
};

/// Alpha dropout -> per-slice adaptive average pooling -> flatten -> 3-layer MLP.
SliceEmbeddingMatrix project(const RealGrid& q_ba, const DropoutMask& mask, const ParamSet& params,
                             ProjectionTape* tape = nullptr);

/// Accumulates projection-head parameter gradients and returns d loss / d q_ba.
RealGrid project_backward(const ParamSet& params, const ProjectionTape& tape, const Matrix& d_embedding,
                          ParamSet& grads);

// ---------------------------------------------------------------------------------------------
// Checkpoints

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    ParamSet student;
    ParamSet teacher;
    ParamSet momentum;
    nlohmann::json state;   // trainer scalars and config
};

/// Layout: "SIMCVDCK" magic, u32 version, u64 header length, JSON header (architecture, state,
/// tensor directory), then every tensor's values as little-endian f64.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// As above, but rejects checkpoints whose architecture differs from `expected`.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ArchDescriptor& expected);

}  // namespace simcvd
