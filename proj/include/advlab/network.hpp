#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "advlab/datasets.hpp"
#include "advlab/random.hpp"
#include "advlab/targets.hpp"
#include "advlab/tensor.hpp"

namespace advlab {

struct LayerSpec {
    enum class Kind { conv2d, relu, maxpool2x2, flatten, dense };

    Kind kind = Kind::relu;
    std::size_t out = 0;     // conv2d: out_channels, dense: out_features
    std::size_t kernel = 0;  // conv2d only
    std::size_t stride = 1;  // conv2d only

    static LayerSpec conv2d(std::size_t out_channels, std::size_t kernel_size, std::size_t stride = 1) {
        return {Kind::conv2d, out_channels, kernel_size, stride};
    }
    static LayerSpec relu() { return {Kind::relu}; }
    static LayerSpec maxpool2x2() { return {Kind::maxpool2x2}; }
    static LayerSpec flatten() { return {Kind::flatten}; }
    static LayerSpec dense(std::size_t out_features) { return {Kind::dense, out_features}; }

    bool has_params() const noexcept { return kind == Kind::conv2d || kind == Kind::dense; }

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

inline std::string_view kind_name(LayerSpec::Kind k) {
    switch (k) {
        case LayerSpec::Kind::conv2d: return "conv2d";
        case LayerSpec::Kind::relu: return "relu";
        case LayerSpec::Kind::maxpool2x2: return "maxpool2x2";
        case LayerSpec::Kind::flatten: return "flatten";
        case LayerSpec::Kind::dense: return "dense";
    }
    return "?";
}

inline LayerSpec::Kind parse_kind(std::string_view name) {
    for (auto k : {LayerSpec::Kind::conv2d, LayerSpec::Kind::relu, LayerSpec::Kind::maxpool2x2,
                   LayerSpec::Kind::flatten, LayerSpec::Kind::dense}) {
        if (kind_name(k) == name) {
            return k;
        }
    }
    throw std::invalid_argument("unknown layer kind '" + std::string(name) + "'");
}

/// conv(8,3) relu pool conv(16,3) relu pool flatten dense(K).
inline std::vector<LayerSpec> desk_architecture(std::size_t class_count = 10) {
    return {LayerSpec::conv2d(8, 3, 1), LayerSpec::relu(),    LayerSpec::maxpool2x2(),
            LayerSpec::conv2d(16, 3, 1), LayerSpec::relu(),   LayerSpec::maxpool2x2(),
            LayerSpec::flatten(),        LayerSpec::dense(class_count)};
}

using ParamMap = std::map<std::string, Tensor>;

/// Gradient of a scalar loss w.r.t. every parameter and the input image.
struct GradientBundle {
    ParamMap param_grads;
    Tensor input_grad;
};

/// Activations recorded by a forward pass; activations[0] is the input, back() the logits.
struct ForwardTrace {
    std::vector<Tensor> activations;

    const Tensor& logits() const { return activations.back(); }
};

class Network {
public:
    Network(std::vector<LayerSpec> layers, Shape input_shape, std::size_t class_count, ParamMap params)
        : layers_(std::move(layers)),
          input_shape_(std::move(input_shape)),
          class_count_(class_count),
          params_(std::move(params)) {
        shapes_ = propagate_shapes(layers_, input_shape_, class_count_);
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            if (!layers_[i].has_params()) {
                continue;
            }
            const auto [w, b] = param_shapes(i);
            check_param(weight_name(i), w);
            check_param(bias_name(i), b);
        }
        if (params_.size() != 2 * static_cast<std::size_t>(std::count_if(
                                      layers_.begin(), layers_.end(), [](auto& l) { return l.has_params(); }))) {
            throw std::invalid_argument("Network: unexpected extra parameters");
        }
    }

    /// Weights uniform in +-sqrt(6/(fan_in+fan_out)), biases zero.
    static Network initialized(std::vector<LayerSpec> layers, Shape input_shape, std::size_t class_count,
                               std::uint64_t seed) {
        const auto shapes = propagate_shapes(layers, input_shape, class_count);
        Rng rng(mix_seed(seed, 0x1417));
        ParamMap params;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const auto& l = layers[i];
            if (!l.has_params()) {
                continue;
            }
            Shape w_shape, b_shape{l.out};
            double fan_in = 0, fan_out = 0;
            if (l.kind == LayerSpec::Kind::conv2d) {
                const std::size_t in_c = shapes[i][2];
                w_shape = Shape{l.out, l.kernel, l.kernel, in_c};
                fan_in = static_cast<double>(l.kernel * l.kernel * in_c);
                fan_out = static_cast<double>(l.kernel * l.kernel * l.out);
            } else {
                w_shape = Shape{l.out, shapes[i][0]};
                fan_in = static_cast<double>(shapes[i][0]);
                fan_out = static_cast<double>(l.out);
            }
            const double limit = std::sqrt(6.0 / (fan_in + fan_out));
            Tensor w(w_shape);
            for (double& v : w) {
                v = rng.uniform(-limit, limit);
            }
            params.emplace(weight_name(i), std::move(w));
            params.emplace(bias_name(i), Tensor(b_shape));
        }
        return Network(std::move(layers), std::move(input_shape), class_count, std::move(params));
    }

    static std::string weight_name(std::size_t layer) { return "layer" + std::to_string(layer) + ".weight"; }
    static std::string bias_name(std::size_t layer) { return "layer" + std::to_string(layer) + ".bias"; }

    const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
    const Shape& input_shape() const noexcept { return input_shape_; }
    std::size_t class_count() const noexcept { return class_count_; }
    const ParamMap& params() const noexcept { return params_; }
    const Tensor& param(const std::string& name) const { return params_.at(name); }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& [_, t] : params_) {
            n += t.size();
        }
        return n;
    }

    /// Overwrites one parameter tensor; the shape must not change.
    void set_param(const std::string& name, Tensor value) {
        auto it = params_.find(name);
        if (it == params_.end()) {
            throw std::invalid_argument("Network: no parameter named " + name);
        }
        require_same_shape(it->second, value, "Network::set_param");
        it->second = std::move(value);
    }

    /// params -= step * grads, for every parameter.
    void apply_step(const ParamMap& grads, double step) {
        for (auto& [name, p] : params_) {
            const Tensor& g = grads.at(name);
            require_same_shape(p, g, "Network::apply_step");
            for (std::size_t i = 0; i < p.size(); ++i) {
                p[i] -= step * g[i];
            }
        }
    }

    ParamMap zero_grads() const {
        ParamMap g;
        for (const auto& [name, p] : params_) {
            g.emplace(name, Tensor(p.shape()));
        }
        return g;
    }

    void check_input(const Tensor& x) const {
        if (x.shape() != input_shape_) {
            throw std::invalid_argument("Network: input shape " + x.shape().str() + " does not match expected " +
                                        input_shape_.str());
        }
    }

    ForwardTrace forward_trace(const Tensor& x) const {
        check_input(x);
        ForwardTrace tr;
        tr.activations.reserve(layers_.size() + 1);
        tr.activations.push_back(x);
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            tr.activations.push_back(forward_layer(i, tr.activations.back()));
        }
        return tr;
    }

    Tensor logits(const Tensor& x) const { return forward_trace(x).logits(); }

    /// Softmax of logits / temperature.
    Tensor probabilities(const Tensor& x, double temperature = 1.0) const;

    /// d cost(x, y) / dx, skipping parameter gradients.
    Tensor loss_gradient(const Tensor& x, std::size_t y) const;

    /// Back-propagates d(loss)/d(logits). Parameter gradients are added into `param_grads`
    /// when non-null; the input gradient is returned.
    Tensor backward(const ForwardTrace& tr, std::span<const double> dlogits, ParamMap* param_grads) const {
        if (dlogits.size() != class_count_) {
            throw std::invalid_argument("Network::backward: expected " + std::to_string(class_count_) +
                                        " logit gradients");
        }
        Tensor grad(shapes_.back(), std::vector<double>(dlogits.begin(), dlogits.end()));
        for (std::size_t i = layers_.size(); i-- > 0;) {
            grad = backward_layer(i, tr.activations[i], grad, param_grads);
        }
        return grad;
    }

private:
    static std::vector<Shape> propagate_shapes(const std::vector<LayerSpec>& layers, const Shape& input,
                                               std::size_t class_count) {
        if (class_count < 2) {
            throw std::invalid_argument("Network: class_count must be >= 2");
        }
        if (layers.empty() || layers.back().kind != LayerSpec::Kind::dense || layers.back().out != class_count) {
            throw std::invalid_argument("Network: final layer must be dense with out_features = class_count");
        }
        std::vector<Shape> shapes{input};
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const auto& l = layers[i];
            const Shape& in = shapes.back();
            auto fail = [&](const std::string& why) {
                return std::invalid_argument("Network: layer " + std::to_string(i) + " (" +
                                             std::string(kind_name(l.kind)) + ") " + why + ", input " + in.str());
            };
            switch (l.kind) {
                case LayerSpec::Kind::conv2d:
                    if (in.rank() != 3) throw fail("needs a (height, width, channels) input");
                    if (l.out == 0 || l.kernel == 0 || l.stride == 0) throw fail("has a zero size parameter");
                    if (in[0] < l.kernel || in[1] < l.kernel) throw fail("kernel larger than input");
                    shapes.push_back(Shape{(in[0] - l.kernel) / l.stride + 1, (in[1] - l.kernel) / l.stride + 1, l.out});
                    break;
                case LayerSpec::Kind::relu:
                    shapes.push_back(in);
                    break;
                case LayerSpec::Kind::maxpool2x2:
                    if (in.rank() != 3 || in[0] < 2 || in[1] < 2) throw fail("needs a rank-3 input of at least 2x2");
                    shapes.push_back(Shape{in[0] / 2, in[1] / 2, in[2]});
                    break;
                case LayerSpec::Kind::flatten:
                    shapes.push_back(Shape{in.count()});
                    break;
                case LayerSpec::Kind::dense:
                    if (in.rank() != 1) throw fail("needs a flattened input");
                    if (l.out == 0) throw fail("has zero outputs");
                    shapes.push_back(Shape{l.out});
                    break;
            }
        }
        return shapes;
    }

    std::pair<Shape, Shape> param_shapes(std::size_t i) const {
        const auto& l = layers_[i];
        if (l.kind == LayerSpec::Kind::conv2d) {
            return {Shape{l.out, l.kernel, l.kernel, shapes_[i][2]}, Shape{l.out}};
        }
        return {Shape{l.out, shapes_[i][0]}, Shape{l.out}};
    }

    void check_param(const std::string& name, const Shape& expected) const {
        auto it = params_.find(name);
        if (it == params_.end()) {
            throw std::invalid_argument("Network: missing parameter " + name);
        }
        if (it->second.shape() != expected) {
            throw std::invalid_argument("Network: parameter " + name + " has shape " + it->second.shape().str() +
                                        ", expected " + expected.str());
        }
    }

    Tensor forward_layer(std::size_t i, const Tensor& in) const {
        const auto& l = layers_[i];
        const Shape& os = shapes_[i + 1];
        switch (l.kind) {
            case LayerSpec::Kind::conv2d: {
                const Tensor& w = params_.at(weight_name(i));
                const Tensor& b = params_.at(bias_name(i));
                const std::size_t W = in.shape()[1], C = in.shape()[2], k = l.kernel, s = l.stride;
                Tensor out(os);
                std::size_t o_idx = 0;
                for (std::size_t oy = 0; oy < os[0]; ++oy) {
                    for (std::size_t ox = 0; ox < os[1]; ++ox) {
                        for (std::size_t o = 0; o < l.out; ++o, ++o_idx) {
                            double acc = b[o];
                            for (std::size_t ky = 0; ky < k; ++ky) {
                                const double* src = &in[((oy * s + ky) * W + ox * s) * C];
                                const double* wk = &w[(o * k + ky) * k * C];
                                for (std::size_t j = 0; j < k * C; ++j) {
                                    acc += wk[j] * src[j];
                                }
                            }
                            out[o_idx] = acc;
                        }
                    }
                }
                return out;
            }
            case LayerSpec::Kind::relu:
                return map(in, [](double v) { return v > 0.0 ? v : 0.0; });
            case LayerSpec::Kind::maxpool2x2: {
                const std::size_t W = in.shape()[1], C = in.shape()[2];
                Tensor out(os);
                for (std::size_t oy = 0; oy < os[0]; ++oy) {
                    for (std::size_t ox = 0; ox < os[1]; ++ox) {
                        for (std::size_t c = 0; c < C; ++c) {
                            out[(oy * os[1] + ox) * C + c] = in[pool_argmax(in, W, C, oy, ox, c)];
                        }
                    }
                }
                return out;
            }
            case LayerSpec::Kind::flatten:
                return Tensor(os, in.data());
            case LayerSpec::Kind::dense: {
                const Tensor& w = params_.at(weight_name(i));
                const Tensor& b = params_.at(bias_name(i));
                const std::size_t n_in = in.size();
                Tensor out(os);
                for (std::size_t o = 0; o < l.out; ++o) {
                    double acc = b[o];
                    const double* row = &w[o * n_in];
                    for (std::size_t j = 0; j < n_in; ++j) {
                        acc += row[j] * in[j];
                    }
                    out[o] = acc;
                }
                return out;
            }
        }
        throw std::logic_error("unreachable");
    }

    // First maximum in row-major window order wins.
    static std::size_t pool_argmax(const Tensor& in, std::size_t W, std::size_t C, std::size_t oy, std::size_t ox,
                                   std::size_t c) {
        std::size_t best = (2 * oy * W + 2 * ox) * C + c;
        for (std::size_t dy = 0; dy < 2; ++dy) {
            for (std::size_t dx = 0; dx < 2; ++dx) {
                const std::size_t idx = ((2 * oy + dy) * W + 2 * ox + dx) * C + c;
                if (in[idx] > in[best]) {
                    best = idx;
                }
            }
        }
        return best;
    }

    Tensor backward_layer(std::size_t i, const Tensor& in, const Tensor& dout, ParamMap* grads) const {
        const auto& l = layers_[i];
        const Shape& os = shapes_[i + 1];
        switch (l.kind) {
            case LayerSpec::Kind::conv2d: {
                const Tensor& w = params_.at(weight_name(i));
                const std::size_t W = in.shape()[1], C = in.shape()[2], k = l.kernel, s = l.stride;
                Tensor din(in.shape());
                Tensor* dw = grads ? &grads->at(weight_name(i)) : nullptr;
                Tensor* db = grads ? &grads->at(bias_name(i)) : nullptr;
                std::size_t o_idx = 0;
                for (std::size_t oy = 0; oy < os[0]; ++oy) {
                    for (std::size_t ox = 0; ox < os[1]; ++ox) {
                        for (std::size_t o = 0; o < l.out; ++o, ++o_idx) {
                            const double g = dout[o_idx];
                            if (g == 0.0) {
                                continue;
                            }
                            if (db) {
                                (*db)[o] += g;
                            }
                            for (std::size_t ky = 0; ky < k; ++ky) {
                                const std::size_t in_off = ((oy * s + ky) * W + ox * s) * C;
                                const std::size_t w_off = (o * k + ky) * k * C;
                                for (std::size_t j = 0; j < k * C; ++j) {
                                    din[in_off + j] += g * w[w_off + j];
                                }
                                if (dw) {
                                    for (std::size_t j = 0; j < k * C; ++j) {
                                        (*dw)[w_off + j] += g * in[in_off + j];
                                    }
                                }
                            }
                        }
                    }
                }
                return din;
            }
            case LayerSpec::Kind::relu: {
                Tensor din(in.shape());
                for (std::size_t j = 0; j < in.size(); ++j) {
                    din[j] = in[j] > 0.0 ? dout[j] : 0.0;
                }
                return din;
            }
            case LayerSpec::Kind::maxpool2x2: {
                const std::size_t W = in.shape()[1], C = in.shape()[2];
                Tensor din(in.shape());
                for (std::size_t oy = 0; oy < os[0]; ++oy) {
                    for (std::size_t ox = 0; ox < os[1]; ++ox) {
                        for (std::size_t c = 0; c < C; ++c) {
                            din[pool_argmax(in, W, C, oy, ox, c)] += dout[(oy * os[1] + ox) * C + c];
                        }
                    }
                }
                return din;
            }
            case LayerSpec::Kind::flatten:
                return Tensor(in.shape(), dout.data());
            case LayerSpec::Kind::dense: {
                const Tensor& w = params_.at(weight_name(i));
                const std::size_t n_in = in.size();
                Tensor din(in.shape());
                Tensor* dw = grads ? &grads->at(weight_name(i)) : nullptr;
                Tensor* db = grads ? &grads->at(bias_name(i)) : nullptr;
                for (std::size_t o = 0; o < l.out; ++o) {
                    const double g = dout[o];
                    const double* row = &w[o * n_in];
                    for (std::size_t j = 0; j < n_in; ++j) {
                        din[j] += g * row[j];
                    }
                    if (dw) {
                        double* drow = &(*dw)[o * n_in];
                        for (std::size_t j = 0; j < n_in; ++j) {
                            drow[j] += g * in[j];
                        }
                        (*db)[o] += g;
                    }
                }
                return din;
            }
        }
        throw std::logic_error("unreachable");
    }

    std::vector<LayerSpec> layers_;
    Shape input_shape_;
    std::size_t class_count_;
    ParamMap params_;
    std::vector<Shape> shapes_;  // shapes_[i] is the input of layer i; back() the logits
};

// ---------------------------------------------------------------------------
// Probabilities, cost and gradients
// ---------------------------------------------------------------------------

inline Tensor softmax(std::span<const double> logits, double temperature = 1.0) {
    if (!(temperature > 0.0)) {
        throw std::invalid_argument("softmax: temperature must be positive");
    }
    const double m = *std::max_element(logits.begin(), logits.end());
    Tensor p(Shape{logits.size()});
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp((logits[i] - m) / temperature);
        sum += p[i];
    }
    for (double& v : p) {
        v /= sum;
    }
    return p;
}

/// Softmax of logits / temperature.
inline Tensor forward_probs(const Network& net, const Tensor& x, double temperature = 1.0) {
    return softmax(net.logits(x).values(), temperature);
}

namespace detail {

inline void check_label(const Network& net, std::size_t y) {
    if (y >= net.class_count()) {
        throw std::invalid_argument("class index " + std::to_string(y) + " out of range for " +
                                    std::to_string(net.class_count()) + " classes");
    }
}

/// -log softmax(z)[y] via log-sum-exp.
inline double nll_from_logits(std::span<const double> z, std::size_t y) {
    const double m = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z) {
        s += std::exp(v - m);
    }
    return std::log(s) + (m - z[y]);
}

}  // namespace detail

/// Negative log-likelihood of class y.
inline double cost(const Network& net, const Tensor& x, std::size_t y) {
    detail::check_label(net, y);
    return detail::nll_from_logits(net.logits(x).values(), y);
}

/// Exact gradient of cost(net, x, y) w.r.t. every parameter and x.
inline GradientBundle input_gradient(const Network& net, const Tensor& x, std::size_t y) {
    detail::check_label(net, y);
    const auto tr = net.forward_trace(x);
    Tensor d = softmax(tr.logits().values());
    d[y] -= 1.0;
    GradientBundle out;
    out.param_grads = net.zero_grads();
    out.input_grad = net.backward(tr, d.values(), &out.param_grads);
    return out;
}

/// Gradient of cost w.r.t. x only; skips the parameter gradients.
inline Tensor cost_input_gradient(const Network& net, const Tensor& x, std::size_t y) {
    detail::check_label(net, y);
    const auto tr = net.forward_trace(x);
    Tensor d = softmax(tr.logits().values());
    d[y] -= 1.0;
    return net.backward(tr, d.values(), nullptr);
}

inline Tensor Network::probabilities(const Tensor& x, double temperature) const {
    return forward_probs(*this, x, temperature);
}

inline Tensor Network::loss_gradient(const Tensor& x, std::size_t y) const { return cost_input_gradient(*this, x, y); }

inline std::size_t predict(const Network& net, const Tensor& x) { return argmax(net.logits(x).values()); }

inline double accuracy(const Network& net, const Dataset& data) {
    if (data.empty()) {
        throw std::invalid_argument("accuracy: empty dataset");
    }
    std::size_t hits = 0;
    for (const auto& it : data.items) {
        hits += predict(net, it.pixels) == it.label;
    }
    return static_cast<double>(hits) / static_cast<double>(data.size());
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
    double learning_rate = 0.1;
    std::size_t epochs = 12;
    std::size_t batch_size = 32;
    std::uint64_t seed = 1;
    /// Global parameter-gradient norm cap per batch (gradient masking).
    std::optional<double> grad_norm_limit;
    double label_smoothing = 0.0;

    void validate(std::size_t dataset_size) const {
        if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
        if (epochs == 0) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
        if (batch_size == 0) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
        if (batch_size > dataset_size) {
            throw std::invalid_argument("TrainConfig: batch_size " + std::to_string(batch_size) +
                                        " exceeds dataset size " + std::to_string(dataset_size));
        }
        if (grad_norm_limit && !(*grad_norm_limit >= 0.0)) {
            throw std::invalid_argument("TrainConfig: grad_norm_limit must be >= 0");
        }
        if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) {
            throw std::invalid_argument("TrainConfig: label_smoothing must lie in [0,1)");
        }
    }
};

struct EpochStats {
    double loss = 0.0;      // mean cross-entropy over the epoch's examples, before each update
    double accuracy = 0.0;  // fraction of those examples predicted correctly
};

struct TrainResult {
    Network net;
    std::vector<EpochStats> history;
};

/// A training example as seen by the update: image, hard label and soft target.
struct TrainExample {
    Tensor pixels;
    std::size_t label = 0;
    std::vector<double> target;
};

/// Hook run on each shuffled batch before the gradient step; may rewrite pixels.
using BatchHook = std::function<void(const Network& current, std::vector<TrainExample>& batch, Rng& rng)>;

struct LoopOptions {
    /// Softmax temperature applied to the logits inside the loss.
    double temperature = 1.0;
    /// Multiplier on the loss gradient (T^2 for distillation).
    double grad_scale = 1.0;
    BatchHook hook;
};

namespace detail {

inline double global_norm(const ParamMap& g) {
    double s = 0.0;
    for (const auto& [_, t] : g) {
        s += squared_norm(t);
    }
    return std::sqrt(s);
}

/// Mini-batch SGD over `examples`. Shuffling uses its own stream of cfg.seed, and the
/// hook gets another, so hooks that draw nothing leave the run bit-identical to no hook.
inline TrainResult sgd_loop(Network net, std::vector<TrainExample> examples, const TrainConfig& cfg,
                            const LoopOptions& opt) {
    if (examples.empty()) {
        throw std::invalid_argument("train: empty dataset");
    }
    cfg.validate(examples.size());
    for (const auto& e : examples) {
        net.check_input(e.pixels);
        if (e.target.size() != net.class_count()) {
            throw std::invalid_argument("train: target length does not match class_count");
        }
    }
    Rng shuffle_rng(mix_seed(cfg.seed, 1));
    Rng hook_rng(mix_seed(cfg.seed, 2));
    std::vector<std::size_t> order(examples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<EpochStats> history;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(std::span(order));
        double loss_sum = 0.0;
        std::size_t hits = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
            std::vector<TrainExample> batch;
            batch.reserve(stop - start);
            for (std::size_t j = start; j < stop; ++j) {
                batch.push_back(examples[order[j]]);
            }
            if (opt.hook) {
                opt.hook(net, batch, hook_rng);
            }
            ParamMap grads = net.zero_grads();
            for (const auto& ex : batch) {
                const auto tr = net.forward_trace(ex.pixels);
                const auto& z = tr.logits();
                Tensor p = softmax(z.values(), opt.temperature);
                hits += argmax(z.values()) == ex.label;
                std::vector<double> d(p.size());
                for (std::size_t c = 0; c < p.size(); ++c) {
                    if (ex.target[c] > 0.0) {
                        loss_sum -= ex.target[c] * std::log(std::max(p[c], 1e-300));
                    }
                    d[c] = opt.grad_scale * (p[c] - ex.target[c]) / opt.temperature;
                }
                net.backward(tr, d, &grads);
            }
            const double inv = 1.0 / static_cast<double>(batch.size());
            double step = cfg.learning_rate * inv;
            if (cfg.grad_norm_limit) {
                const double norm = global_norm(grads) * inv;
                if (norm > *cfg.grad_norm_limit) {
                    step *= *cfg.grad_norm_limit / norm;
                }
            }
            net.apply_step(grads, step);
        }
        const double n = static_cast<double>(examples.size());
        history.push_back({loss_sum / n, static_cast<double>(hits) / n});
    }
    return {std::move(net), std::move(history)};
}

inline std::vector<TrainExample> hard_examples(const Dataset& data, double smoothing) {
    std::vector<TrainExample> out;
    out.reserve(data.size());
    for (const auto& it : data.items) {
        out.push_back({it.pixels, it.label, smooth_labels(it.label, data.class_count, smoothing)});
    }
    return out;
}

}  // namespace detail

/// Plain SGD from the given parameters. Shuffling and batching derive from cfg.seed;
/// targets are smoothed when cfg.label_smoothing > 0.
inline TrainResult train_sgd(Network init, const Dataset& data, const TrainConfig& cfg) {
    if (data.empty()) {
        throw std::invalid_argument("train_sgd: empty dataset");
    }
    if (data.class_count != init.class_count()) {
        throw std::invalid_argument("train_sgd: dataset has " + std::to_string(data.class_count) +
                                    " classes, network " + std::to_string(init.class_count()));
    }
    return detail::sgd_loop(std::move(init), detail::hard_examples(data, cfg.label_smoothing), cfg, {});
}

/// Initializes `layers` from cfg.seed and trains them on `data`.
inline TrainResult train_new(const std::vector<LayerSpec>& layers, const Dataset& data, const TrainConfig& cfg) {
    if (data.empty()) {
        throw std::invalid_argument("train_new: empty dataset");
    }
    return train_sgd(Network::initialized(layers, data.image_shape(), data.class_count, cfg.seed), data, cfg);
}

}  // namespace advlab
