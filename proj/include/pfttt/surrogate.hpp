#pragma once

#include <span>
#include <vector>

#include "pfttt/case_io.hpp"
#include "pfttt/grid.hpp"

namespace pfttt {

/// Per-feature input standardization and per-target output scaling.
struct NormStats {
    Vec in_mean, in_scale;
    Vec out_mean, out_scale;

    static NormStats identity(int in_dim, int out_dim);
};

struct Layer {
    Mat w;
    Vec b;
};

/// Affine-tanh stack: tanh after every layer except the last, which is
/// affine. The final layer is the adaptable subset; everything before it is
/// frozen during test-time refinement.
struct SurrogateParams {
    std::vector<Layer> layers;
    int adapt_boundary = 0;  // index of the adaptable layer (always the last)
    NormStats stats;
    std::string case_name;
    std::string training_echo_json = "{}";

    int input_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.front().w.cols()); }
    int output_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.back().w.rows()); }
    int adapt_size() const;

    /// Adaptable parameters flattened as [W row-major, b].
    Vec adapt_flat() const;
    void validate() const;
};

/// Intermediate activations kept for gradient computation: the normalized
/// input followed by every post-tanh hidden activation.
struct ForwardCache {
    std::vector<Vec> acts;  // acts[0] = normalized input, acts[i] = hidden i output
    Vec out_norm;           // final affine output before de-normalization
};

/// Flatten an operating condition into the fixed per-bus layout
/// [p_spec, q_spec, v_setpoint, onehot(slack, pv, pq)] and standardize with
/// the given stats (pass nullptr for raw features).
Vec encode_input(const OperatingCondition& cond, const GridCase& grid, const NormStats* stats);

Vec forward(const SurrogateParams& params, const Vec& features, ForwardCache* cache = nullptr);

/// Re-evaluate the output with a perturbation phi = [dW row-major, db] applied
/// to the final layer, reusing the frozen-prefix activations from `cache`.
Vec forward_adapted(const SurrogateParams& params, const ForwardCache& cache, const Vec& phi);

/// Exact gradient of the final affine layer: for loss gradient dl_du on the
/// de-normalized output, returns [dL/dW row-major, dL/db] including the output
/// scale factors. Layout matches adapt_flat()/forward_adapted().
Vec backward_output_to_adapt(const SurrogateParams& params, const ForwardCache& cache,
                             const Vec& dl_du);

/// Full reverse-mode pass; returns one gradient Layer per parameter Layer.
std::vector<Layer> backward_full(const SurrogateParams& params, const ForwardCache& cache,
                                 const Vec& dl_du);

struct TrainOptions {
    std::vector<int> hidden;  // empty = default two layers of width max(64, 4n)
    double learning_rate = 0.05;
    double momentum = 0.9;
    int batch_size = 32;
    int epochs = 200;
    std::uint64_t seed = 1;
};

struct TrainResult {
    SurrogateParams params;
    std::vector<double> loss_curve;  // mean squared error per epoch
};

/// Supervised pre-training: minimizes the MSE between the predicted and
/// labeled unknown vectors with seeded mini-batch gradient descent plus
/// momentum. Throws InvalidDataError on an empty split and NumericalError if
/// the loss turns non-finite.
TrainResult train(const GridCase& grid, std::span<const DatasetRecord> train_split,
                  const TrainOptions& opts);

}  // namespace pfttt
