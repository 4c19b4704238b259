#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <limits>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "advlab/datasets.hpp"
#include "advlab/random.hpp"
#include "advlab/tensor.hpp"

namespace advlab {

/// Anything the gradient-sign attacks can be run against.
template <typename M>
concept DifferentiableClassifier = requires(const M& m, const Tensor& x, std::size_t y) {
    { m.class_count() } -> std::convertible_to<std::size_t>;
    { m.probabilities(x) } -> std::same_as<Tensor>;
    { m.loss_gradient(x, y) } -> std::same_as<Tensor>;
};

enum class AttackMethod { fast_gradient_sign, iterative_nontargeted, iterative_targeted };

inline constexpr AttackMethod kAllAttackMethods[] = {AttackMethod::fast_gradient_sign,
                                                     AttackMethod::iterative_nontargeted,
                                                     AttackMethod::iterative_targeted};

inline std::string_view method_name(AttackMethod m) {
    switch (m) {
        case AttackMethod::fast_gradient_sign: return "fast_gradient_sign";
        case AttackMethod::iterative_nontargeted: return "iterative_nontargeted";
        case AttackMethod::iterative_targeted: return "iterative_targeted";
    }
    return "?";
}

/// Accepts the canonical names plus the short forms fgsm / nontargeted / targeted.
inline AttackMethod parse_method(std::string_view s) {
    if (s == "fast_gradient_sign" || s == "fgsm") return AttackMethod::fast_gradient_sign;
    if (s == "iterative_nontargeted" || s == "nontargeted") return AttackMethod::iterative_nontargeted;
    if (s == "iterative_targeted" || s == "targeted") return AttackMethod::iterative_targeted;
    throw std::invalid_argument("unknown attack method '" + std::string(s) + "'");
}

struct TargetSpec {
    enum class Kind { none, random, fixed };

    Kind kind = Kind::none;
    std::uint64_t seed = 0;    // random
    std::size_t class_id = 0;  // fixed

    static TargetSpec none() { return {}; }
    static TargetSpec random(std::uint64_t seed) { return {Kind::random, seed, 0}; }
    static TargetSpec fixed(std::size_t c) { return {Kind::fixed, 0, c}; }

    friend bool operator==(const TargetSpec&, const TargetSpec&) = default;
};

struct AttackConfig {
    AttackMethod method = AttackMethod::fast_gradient_sign;
    double epsilon = 0.1;        // L-inf budget, [0,1] pixel units
    double alpha = 1.0 / 255.0;  // per-step size for the iterative methods
    std::size_t iterations = 10; // ignored by fast_gradient_sign
    TargetSpec target;           // required by iterative_targeted

    void validate() const {
        if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) {
            throw std::invalid_argument("AttackConfig: epsilon must be a finite value >= 0");
        }
        if (!(alpha > 0.0) || !std::isfinite(alpha)) {
            throw std::invalid_argument("AttackConfig: alpha must be a finite value > 0");
        }
        if (method == AttackMethod::iterative_targeted && target.kind == TargetSpec::Kind::none) {
            throw std::invalid_argument("AttackConfig: iterative_targeted needs a target");
        }
    }
};

struct AttackOutcome {
    LabeledImage original;
    Tensor adversarial;
    Tensor clean_probs;
    Tensor adv_probs;
    std::optional<std::size_t> target;
    double linf_norm = 0.0;
    std::size_t iterations_run = 0;
    bool success_flipped_top1 = false;
    std::optional<bool> success_hit_target;
};

/// Slack allowed on ||adv - x||_inf above epsilon: one ulp at the pixel scale, which
/// bounds the rounding of x + epsilon for x in [0,1].
inline bool within_ball(double linf, double epsilon) {
    return linf <= epsilon + std::numeric_limits<double>::epsilon();
}

/// Clips `candidate` into [max(0, x - eps), min(1, x + eps)] elementwise.
inline Tensor epsilon_clamp(const Tensor& candidate, const Tensor& original, double epsilon) {
    require_same_shape(candidate, original, "epsilon_clamp");
    if (!(epsilon >= 0.0)) {
        throw std::invalid_argument("epsilon_clamp: epsilon must be >= 0");
    }
    Tensor out(candidate.shape());
    for (std::size_t i = 0; i < candidate.size(); ++i) {
        const double lo = std::max(0.0, original[i] - epsilon);
        const double hi = std::min(1.0, original[i] + epsilon);
        out[i] = std::min(hi, std::max(lo, candidate[i]));
    }
    return out;
}

/// Uniform over the classes other than y_true.
inline std::size_t pick_random_target(std::uint64_t seed, std::size_t class_count, std::size_t y_true) {
    if (class_count < 2) {
        throw std::invalid_argument("pick_random_target: class_count must be >= 2");
    }
    if (y_true >= class_count) {
        throw std::invalid_argument("pick_random_target: y_true out of range");
    }
    Rng rng(mix_seed(seed, 0x7a67));
    const auto r = static_cast<std::size_t>(rng.below(class_count - 1));
    return r >= y_true ? r + 1 : r;
}

namespace detail {

template <DifferentiableClassifier M>
AttackOutcome finish_outcome(const M& model, const LabeledImage& item, Tensor adversarial, Tensor clean_probs,
                             std::size_t iterations, std::optional<std::size_t> target) {
    AttackOutcome o;
    o.original = item;
    o.adv_probs = model.probabilities(adversarial);
    o.linf_norm = linf_distance(adversarial, item.pixels);
    o.adversarial = std::move(adversarial);
    o.clean_probs = std::move(clean_probs);
    o.iterations_run = iterations;
    o.target = target;
    o.success_flipped_top1 = argmax(o.adv_probs.values()) != argmax(o.clean_probs.values());
    if (target) {
        o.success_hit_target = argmax(o.adv_probs.values()) == *target;
    }
    return o;
}

inline void check_item(std::size_t class_count, const LabeledImage& item) {
    if (item.label >= class_count) {
        throw std::invalid_argument("attack: item label out of range");
    }
}

}  // namespace detail

/// One step of epsilon * sign(grad cost(x, y_true)), clipped to [0,1].
template <DifferentiableClassifier M>
AttackOutcome fgsm(const M& model, const LabeledImage& item, double epsilon) {
    if (!(epsilon >= 0.0)) {
        throw std::invalid_argument("fgsm: epsilon must be >= 0");
    }
    detail::check_item(model.class_count(), item);
    Tensor clean = model.probabilities(item.pixels);
    const Tensor g = model.loss_gradient(item.pixels, item.label);
    Tensor adv(item.pixels.shape());
    for (std::size_t i = 0; i < adv.size(); ++i) {
        adv[i] = std::clamp(item.pixels[i] + epsilon * sign(g[i]), 0.0, 1.0);
    }
    return detail::finish_outcome(model, item, std::move(adv), std::move(clean), 1, std::nullopt);
}

/// N steps of x <- clamp(x + alpha * sign(grad cost(x, y_true))) inside the epsilon ball.
template <DifferentiableClassifier M>
AttackOutcome iterative_nontargeted(const M& model, const LabeledImage& item, const AttackConfig& cfg) {
    cfg.validate();
    detail::check_item(model.class_count(), item);
    Tensor clean = model.probabilities(item.pixels);
    Tensor x = item.pixels;
    for (std::size_t n = 0; n < cfg.iterations; ++n) {
        const Tensor g = model.loss_gradient(x, item.label);
        for (std::size_t i = 0; i < x.size(); ++i) {
            x[i] += cfg.alpha * sign(g[i]);
        }
        x = epsilon_clamp(x, item.pixels, cfg.epsilon);
    }
    return detail::finish_outcome(model, item, std::move(x), std::move(clean), cfg.iterations, std::nullopt);
}

inline std::size_t resolve_target(const TargetSpec& t, std::size_t class_count, std::size_t y_true) {
    switch (t.kind) {
        case TargetSpec::Kind::fixed:
            if (t.class_id >= class_count) {
                throw std::invalid_argument("attack: target class " + std::to_string(t.class_id) + " out of range");
            }
            return t.class_id;
        case TargetSpec::Kind::random:
            return pick_random_target(t.seed, class_count, y_true);
        case TargetSpec::Kind::none:
            break;
    }
    throw std::invalid_argument("attack: no target class given");
}

/// N steps of x <- clamp(x - alpha * sign(grad cost(x, y_target))), raising p(y_target).
template <DifferentiableClassifier M>
AttackOutcome iterative_targeted(const M& model, const LabeledImage& item, const AttackConfig& cfg) {
    cfg.validate();
    detail::check_item(model.class_count(), item);
    const std::size_t target = resolve_target(cfg.target, model.class_count(), item.label);
    Tensor clean = model.probabilities(item.pixels);
    Tensor x = item.pixels;
    for (std::size_t n = 0; n < cfg.iterations; ++n) {
        const Tensor g = model.loss_gradient(x, target);
        for (std::size_t i = 0; i < x.size(); ++i) {
            x[i] -= cfg.alpha * sign(g[i]);
        }
        x = epsilon_clamp(x, item.pixels, cfg.epsilon);
    }
    return detail::finish_outcome(model, item, std::move(x), std::move(clean), cfg.iterations, target);
}

template <DifferentiableClassifier M>
AttackOutcome run_attack(const M& model, const LabeledImage& item, const AttackConfig& cfg) {
    cfg.validate();
    switch (cfg.method) {
        case AttackMethod::fast_gradient_sign: return fgsm(model, item, cfg.epsilon);
        case AttackMethod::iterative_nontargeted: return iterative_nontargeted(model, item, cfg);
        case AttackMethod::iterative_targeted: return iterative_targeted(model, item, cfg);
    }
    throw std::logic_error("unreachable");
}

}  // namespace advlab
