#include "pfttt/surrogate.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "pfttt/rng.hpp"

namespace pfttt {

NormStats NormStats::identity(int in_dim, int out_dim) {
    NormStats s;
    s.in_mean = Vec::Zero(in_dim);
    s.in_scale = Vec::Ones(in_dim);
    s.out_mean = Vec::Zero(out_dim);
    s.out_scale = Vec::Ones(out_dim);
    return s;
}

int SurrogateParams::adapt_size() const {
    if (layers.empty()) return 0;
    const Layer& last = layers.back();
    return static_cast<int>(last.w.size() + last.b.size());
}

Vec SurrogateParams::adapt_flat() const {
    const Layer& last = layers.back();
    Vec flat(adapt_size());
    Eigen::Index k = 0;
    for (Eigen::Index r = 0; r < last.w.rows(); ++r)
        for (Eigen::Index c = 0; c < last.w.cols(); ++c) flat[k++] = last.w(r, c);
    for (Eigen::Index r = 0; r < last.b.size(); ++r) flat[k++] = last.b[r];
    return flat;
}

void SurrogateParams::validate() const {
    if (layers.empty()) throw InvalidDataError("surrogate has no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].w.rows() != layers[i].b.size())
            throw InvalidDataError("layer " + std::to_string(i) + ": bias/weight rows disagree");
        if (i > 0 && layers[i].w.cols() != layers[i - 1].w.rows())
            throw InvalidDataError("layer " + std::to_string(i) + ": input dimension does not chain");
    }
    if (adapt_boundary != static_cast<int>(layers.size()) - 1)
        throw InvalidDataError("adapt_boundary must address exactly the final layer");
    if (stats.in_mean.size() != input_dim() || stats.in_scale.size() != input_dim())
        throw InvalidDataError("input normalization stats have wrong dimension");
    if (stats.out_mean.size() != output_dim() || stats.out_scale.size() != output_dim())
        throw InvalidDataError("output normalization stats have wrong dimension");
}

Vec encode_input(const OperatingCondition& cond, const GridCase& grid, const NormStats* stats) {
    const int n = grid.n_bus();
    if (cond.size() != n) throw DimensionError("condition does not match case dimension");
    Vec f(6 * n);
    for (const Bus& b : grid.buses) {
        const int base = 6 * b.index;
        f[base + 0] = cond.p_spec[b.index];
        f[base + 1] = cond.q_spec[b.index];
        f[base + 2] = cond.v_setpoints[b.index];
        f[base + 3] = b.kind == BusKind::Slack ? 1.0 : 0.0;
        f[base + 4] = b.kind == BusKind::PV ? 1.0 : 0.0;
        f[base + 5] = b.kind == BusKind::PQ ? 1.0 : 0.0;
    }
    if (stats) {
        if (stats->in_mean.size() != f.size()) throw DimensionError("stats do not match feature length");
        f = (f - stats->in_mean).cwiseQuotient(stats->in_scale);
    }
    return f;
}

namespace {

// Batched core: columns are samples. The single-sample API wraps these so the
// training loop and the per-sample refinement path share one implementation.
struct BatchCache {
    std::vector<Mat> acts;
    Mat out_norm;
};

Mat forward_batch(const SurrogateParams& params, const Mat& x_norm, BatchCache* cache) {
    Mat a = x_norm;
    if (cache) {
        cache->acts.clear();
        cache->acts.push_back(a);
    }
    for (std::size_t l = 0; l + 1 < params.layers.size(); ++l) {
        a = ((params.layers[l].w * a).colwise() + params.layers[l].b).array().tanh().matrix();
        if (cache) cache->acts.push_back(a);
    }
    Mat out_norm = (params.layers.back().w * a).colwise() + params.layers.back().b;
    if (cache) cache->out_norm = out_norm;
    Mat out = (out_norm.array().colwise() * params.stats.out_scale.array()).matrix();
    out.colwise() += params.stats.out_mean;
    return out;
}

std::vector<Layer> backward_batch(const SurrogateParams& params, const BatchCache& cache,
                                  const Mat& dl_du) {
    const std::size_t n_layers = params.layers.size();
    if (cache.acts.size() != n_layers)
        throw InvalidDataError("stale forward cache: activation count mismatch");
    if (dl_du.rows() != params.stats.out_scale.size() || dl_du.cols() != cache.acts[0].cols())
        throw DimensionError("output gradient dimensions disagree with cache");

    std::vector<Layer> grads(n_layers);
    Mat delta = (dl_du.array().colwise() * params.stats.out_scale.array()).matrix();
    for (std::size_t l = n_layers; l-- > 0;) {
        grads[l].w = delta * cache.acts[l].transpose();
        grads[l].b = delta.rowwise().sum();
        if (l > 0) {
            Mat back = params.layers[l].w.transpose() * delta;
            delta = (back.array() * (1.0 - cache.acts[l].array().square())).matrix();
        }
    }
    return grads;
}

}  // namespace

Vec forward(const SurrogateParams& params, const Vec& features, ForwardCache* cache) {
    if (features.size() != params.input_dim())
        throw DimensionError("feature vector does not match model input dimension");
    BatchCache bc;
    Mat out = forward_batch(params, features, cache ? &bc : nullptr);
    if (cache) {
        cache->acts.clear();
        for (Mat& a : bc.acts) cache->acts.push_back(a.col(0));
        cache->out_norm = bc.out_norm.col(0);
    }
    return out.col(0);
}

Vec forward_adapted(const SurrogateParams& params, const ForwardCache& cache, const Vec& phi) {
    const Layer& last = params.layers.back();
    const Eigen::Index rows = last.w.rows(), cols = last.w.cols();
    if (phi.size() != rows * cols + rows) throw DimensionError("phi does not match the adaptable layer");
    if (cache.acts.empty() || cache.acts.back().size() != cols)
        throw InvalidDataError("stale forward cache for adapted evaluation");
    const Vec& h = cache.acts.back();
    Eigen::Map<const MatRowMajor> dw(phi.data(), rows, cols);
    Vec out_norm = (last.w * h + last.b) + (dw * h + phi.tail(rows));
    return params.stats.out_mean + params.stats.out_scale.cwiseProduct(out_norm);
}

Vec backward_output_to_adapt(const SurrogateParams& params, const ForwardCache& cache,
                             const Vec& dl_du) {
    const Layer& last = params.layers.back();
    const Eigen::Index rows = last.w.rows(), cols = last.w.cols();
    if (dl_du.size() != rows) throw DimensionError("output gradient has wrong dimension");
    if (cache.acts.empty() || cache.acts.back().size() != cols)
        throw InvalidDataError("stale forward cache for adapt gradient");
    const Vec& h = cache.acts.back();
    const Vec delta = dl_du.cwiseProduct(params.stats.out_scale);
    Vec grad(rows * cols + rows);
    Eigen::Map<MatRowMajor>(grad.data(), rows, cols) = delta * h.transpose();
    grad.tail(rows) = delta;
    return grad;
}

std::vector<Layer> backward_full(const SurrogateParams& params, const ForwardCache& cache,
                                 const Vec& dl_du) {
    BatchCache bc;
    for (const Vec& a : cache.acts) bc.acts.push_back(a);
    bc.out_norm = cache.out_norm;
    return backward_batch(params, bc, dl_du);
}

namespace {

SurrogateParams init_params(const GridCase& grid, const std::vector<int>& hidden,
                            std::uint64_t seed) {
    const int in_dim = 6 * grid.n_bus();
    const int out_dim = grid.n_unknowns();
    std::vector<int> dims;
    dims.push_back(in_dim);
    for (int h : hidden) dims.push_back(h);
    dims.push_back(out_dim);

    SurrogateParams params;
    Rng rng(seed, /*stream=*/0xA11CE);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        Layer layer;
        layer.w.resize(dims[l + 1], dims[l]);
        layer.b = Vec::Zero(dims[l + 1]);
        const double bound = std::sqrt(6.0 / (dims[l] + dims[l + 1]));
        for (Eigen::Index r = 0; r < layer.w.rows(); ++r)
            for (Eigen::Index c = 0; c < layer.w.cols(); ++c)
                layer.w(r, c) = rng.uniform(-bound, bound);
        params.layers.push_back(std::move(layer));
    }
    params.adapt_boundary = static_cast<int>(params.layers.size()) - 1;
    params.stats = NormStats::identity(in_dim, out_dim);
    params.case_name = grid.name;
    return params;
}

NormStats fit_stats(const Mat& features, const Mat& targets) {
    NormStats s;
    const double n = static_cast<double>(features.cols());
    s.in_mean = features.rowwise().mean();
    Vec var = (features.colwise() - s.in_mean).array().square().matrix().rowwise().sum() / n;
    s.in_scale = var.array().sqrt().matrix();
    s.out_mean = targets.rowwise().mean();
    Vec ovar = (targets.colwise() - s.out_mean).array().square().matrix().rowwise().sum() / n;
    s.out_scale = ovar.array().sqrt().matrix();
    // constant channels (one-hots, fixed setpoints) stay unscaled
    for (Eigen::Index i = 0; i < s.in_scale.size(); ++i)
        if (s.in_scale[i] < 1e-8) s.in_scale[i] = 1.0;
    for (Eigen::Index i = 0; i < s.out_scale.size(); ++i)
        if (s.out_scale[i] < 1e-8) s.out_scale[i] = 1.0;
    return s;
}

}  // namespace

TrainResult train(const GridCase& grid, std::span<const DatasetRecord> train_split,
                  const TrainOptions& opts) {
    if (train_split.empty()) throw InvalidDataError("training split is empty");
    if (opts.batch_size < 1 || opts.epochs < 0) throw InvalidDataError("invalid training options");

    std::vector<int> hidden = opts.hidden;
    if (hidden.empty()) {
        const int width = std::max(64, 4 * grid.n_bus());
        hidden = {width, width};
    }

    const int n_samples = static_cast<int>(train_split.size());
    const int in_dim = 6 * grid.n_bus();
    const int out_dim = grid.n_unknowns();

    Mat features(in_dim, n_samples);
    Mat targets(out_dim, n_samples);
    for (int s = 0; s < n_samples; ++s) {
        features.col(s) = encode_input(train_split[s].condition, grid, nullptr);
        targets.col(s) = extract_unknowns(grid, train_split[s].label);
    }

    SurrogateParams params = init_params(grid, hidden, opts.seed);
    params.stats = fit_stats(features, targets);
    Mat x_norm = ((features.colwise() - params.stats.in_mean).array().colwise() /
                  params.stats.in_scale.array())
                     .matrix();
    // optimize in normalized target space: scale-free steps across channels
    Mat t_norm = ((targets.colwise() - params.stats.out_mean).array().colwise() /
                  params.stats.out_scale.array())
                     .matrix();

    std::vector<Layer> velocity;
    for (const Layer& l : params.layers)
        velocity.push_back({Mat::Zero(l.w.rows(), l.w.cols()), Vec::Zero(l.b.size())});

    std::vector<int> order(static_cast<std::size_t>(n_samples));
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(opts.seed, /*stream=*/0x5BAFF1E);

    TrainResult result;
    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double epoch_sse = 0.0;
        for (int start = 0; start < n_samples; start += opts.batch_size) {
            const int bsz = std::min(opts.batch_size, n_samples - start);
            Mat xb(in_dim, bsz), tb(out_dim, bsz);
            for (int k = 0; k < bsz; ++k) {
                xb.col(k) = x_norm.col(order[static_cast<std::size_t>(start + k)]);
                tb.col(k) = t_norm.col(order[static_cast<std::size_t>(start + k)]);
            }
            BatchCache cache;
            forward_batch(params, xb, &cache);
            Mat err = cache.out_norm - tb;
            epoch_sse += err.squaredNorm();
            // backward_batch rescales by out_scale; dividing here keeps the
            // update the plain normalized-space MSE gradient
            Mat dl_du = (2.0 / (static_cast<double>(bsz) * out_dim)) *
                        (err.array().colwise() / params.stats.out_scale.array()).matrix();
            std::vector<Layer> grads = backward_batch(params, cache, dl_du);
            for (std::size_t l = 0; l < params.layers.size(); ++l) {
                velocity[l].w = opts.momentum * velocity[l].w - opts.learning_rate * grads[l].w;
                velocity[l].b = opts.momentum * velocity[l].b - opts.learning_rate * grads[l].b;
                params.layers[l].w += velocity[l].w;
                params.layers[l].b += velocity[l].b;
            }
        }
        const double mse = epoch_sse / (static_cast<double>(n_samples) * out_dim);
        if (!std::isfinite(mse))
            throw NumericalError("training diverged: non-finite loss at epoch " +
                                 std::to_string(epoch));
        result.loss_curve.push_back(mse);
    }

    nlohmann::json echo;
    echo["optimizer"] = "sgd_momentum";
    echo["learning_rate"] = opts.learning_rate;
    echo["momentum"] = opts.momentum;
    echo["batch_size"] = opts.batch_size;
    echo["epochs"] = opts.epochs;
    echo["seed"] = opts.seed;
    echo["hidden"] = hidden;
    params.training_echo_json = echo.dump();

    result.params = std::move(params);
    return result;
}

}  // namespace pfttt
