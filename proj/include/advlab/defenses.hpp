#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "advlab/attacks.hpp"
#include "advlab/network.hpp"
#include "advlab/targets.hpp"

namespace advlab {

// ---------------------------------------------------------------------------
// Adversarial training
// ---------------------------------------------------------------------------

struct AdvTrainConfig {
    TrainConfig base;
    AttackConfig attack;
    /// Fraction of every batch replaced by adversarial counterparts.
    double mix_ratio = 0.5;

    void validate() const {
        if (!(mix_ratio >= 0.0 && mix_ratio <= 1.0)) {
            throw std::invalid_argument("AdvTrainConfig: mix_ratio must lie in [0,1]");
        }
        attack.validate();
    }
};

/// SGD where round(mix_ratio * |batch|) examples of each shuffled batch are swapped
/// for attacks against the current weights. Labels are kept.
inline TrainResult adversarial_train(Network init, const Dataset& data, const AdvTrainConfig& cfg) {
    cfg.validate();
    if (data.empty()) {
        throw std::invalid_argument("adversarial_train: empty dataset");
    }
    if (data.class_count != init.class_count()) {
        throw std::invalid_argument("adversarial_train: class count mismatch");
    }
    LoopOptions opt;
    if (cfg.mix_ratio > 0.0) {
        opt.hook = [&cfg](const Network& current, std::vector<TrainExample>& batch, Rng& rng) {
            const auto n_adv = static_cast<std::size_t>(
                std::lround(cfg.mix_ratio * static_cast<double>(batch.size())));
            for (std::size_t i = 0; i < std::min(n_adv, batch.size()); ++i) {
                AttackConfig a = cfg.attack;
                if (a.target.kind == TargetSpec::Kind::random) {
                    a.target.seed = rng.next();
                }
                auto& ex = batch[i];
                ex.pixels = run_attack(current, LabeledImage{ex.pixels, ex.label}, a).adversarial;
            }
        };
    }
    return detail::sgd_loop(std::move(init), detail::hard_examples(data, cfg.base.label_smoothing), cfg.base, opt);
}

// ---------------------------------------------------------------------------
// Defensive distillation
// ---------------------------------------------------------------------------

/// conv(4,3) relu pool conv(8,3) relu pool flatten dense(K); about half the desk model.
inline std::vector<LayerSpec> compact_architecture(std::size_t class_count = 10) {
    return {LayerSpec::conv2d(4, 3, 1), LayerSpec::relu(),  LayerSpec::maxpool2x2(),
            LayerSpec::conv2d(8, 3, 1), LayerSpec::relu(),  LayerSpec::maxpool2x2(),
            LayerSpec::flatten(),       LayerSpec::dense(class_count)};
}

struct DistillConfig {
    TrainConfig teacher_train;
    std::vector<LayerSpec> teacher_layers = desk_architecture();
    std::vector<LayerSpec> student_layers = compact_architecture();
    double temperature = 20.0;
};

struct DistillResult {
    Network teacher;
    Network student;
};

/// Teacher fit on hard labels; student fit on the teacher's softmax at cfg.temperature
/// with the same temperature in its own loss (gradient scaled by T^2). The student is
/// used at temperature 1 afterwards. Seeds: teacher uses `seed`, student mix_seed(seed, 1).
inline DistillResult distill(const Dataset& data, const DistillConfig& cfg, std::uint64_t seed) {
    if (data.empty()) {
        throw std::invalid_argument("distill: empty dataset");
    }
    if (!(cfg.temperature > 0.0)) {
        throw std::invalid_argument("distill: temperature must be positive");
    }
    const Shape& in = data.image_shape();
    TrainConfig tcfg = cfg.teacher_train;
    tcfg.seed = seed;
    Network teacher_init = Network::initialized(cfg.teacher_layers, in, data.class_count, tcfg.seed);
    TrainConfig scfg = cfg.teacher_train;
    scfg.seed = mix_seed(seed, 1);
    scfg.label_smoothing = 0.0;
    Network student_init = Network::initialized(cfg.student_layers, in, data.class_count, scfg.seed);
    if (student_init.parameter_count() >= teacher_init.parameter_count()) {
        throw std::invalid_argument("distill: student has " + std::to_string(student_init.parameter_count()) +
                                    " parameters, teacher " + std::to_string(teacher_init.parameter_count()) +
                                    "; the student must be strictly smaller");
    }
    Network teacher = train_sgd(std::move(teacher_init), data, tcfg).net;

    std::vector<TrainExample> soft;
    soft.reserve(data.size());
    for (const auto& it : data.items) {
        const Tensor p = forward_probs(teacher, it.pixels, cfg.temperature);
        soft.push_back({it.pixels, it.label, p.data()});
    }
    LoopOptions opt;
    opt.temperature = cfg.temperature;
    opt.grad_scale = cfg.temperature * cfg.temperature;
    Network student = detail::sgd_loop(std::move(student_init), std::move(soft), scfg, opt).net;
    return {std::move(teacher), std::move(student)};
}

// ---------------------------------------------------------------------------
// Adversarial-input detector
// ---------------------------------------------------------------------------

/// Binary classifier over raw images: class 0 = clean, 1 = adversarial.
struct Detector {
    Network net;

    explicit Detector(Network n) : net(std::move(n)) {
        if (net.class_count() != 2) {
            throw std::invalid_argument("Detector: network must have exactly 2 outputs");
        }
    }

    /// Probability that x is adversarial.
    double score(const Tensor& x) const { return forward_probs(net, x)[1]; }
    bool flags(const Tensor& x) const { return predict(net, x) == 1; }
};

struct DetectorReport {
    Detector detector;
    double heldout_accuracy = 0.0;
    /// Fraction of held-out clean images classified as adversarial.
    double false_flag_rate = 0.0;
    std::vector<std::size_t> train_pairs;
    std::vector<std::size_t> heldout_pairs;
};

/// Trains on pairs (clean[i], adversarial[i]); a seeded `heldout_fraction` of the pair
/// indices is kept out of training and used for the reported metrics.
inline DetectorReport train_detector(const Dataset& clean, const Dataset& adversarial,
                                     const std::vector<LayerSpec>& arch, const TrainConfig& cfg,
                                     double heldout_fraction = 0.25) {
    if (clean.size() != adversarial.size()) {
        throw std::invalid_argument("train_detector: unbalanced inputs (" + std::to_string(clean.size()) +
                                    " clean vs " + std::to_string(adversarial.size()) + " adversarial)");
    }
    if (clean.size() < 2) {
        throw std::invalid_argument("train_detector: need at least 2 pairs");
    }
    if (!(heldout_fraction > 0.0 && heldout_fraction < 1.0)) {
        throw std::invalid_argument("train_detector: heldout_fraction must lie in (0,1)");
    }
    std::vector<std::size_t> pairs(clean.size());
    std::iota(pairs.begin(), pairs.end(), std::size_t{0});
    Rng rng(mix_seed(cfg.seed, 0xde7));
    rng.shuffle(std::span(pairs));
    auto n_held = static_cast<std::size_t>(std::lround(heldout_fraction * static_cast<double>(pairs.size())));
    n_held = std::clamp<std::size_t>(n_held, 1, pairs.size() - 1);
    std::vector<std::size_t> held(pairs.begin(), pairs.begin() + static_cast<std::ptrdiff_t>(n_held));
    std::vector<std::size_t> train(pairs.begin() + static_cast<std::ptrdiff_t>(n_held), pairs.end());
    std::sort(held.begin(), held.end());
    std::sort(train.begin(), train.end());

    std::vector<std::size_t> overlap;
    std::set_intersection(held.begin(), held.end(), train.begin(), train.end(), std::back_inserter(overlap));
    if (!overlap.empty()) {
        throw std::logic_error("train_detector: held-out split overlaps training split");
    }

    auto build = [&](const std::vector<std::size_t>& idx) {
        Dataset d;
        d.class_count = 2;
        d.class_names = std::vector<std::string>{"clean", "adversarial"};
        for (std::size_t i : idx) {
            d.items.push_back({clean[i].pixels, 0});
            d.items.push_back({adversarial[i].pixels, 1});
        }
        return d;
    };
    const Dataset train_set = build(train);
    TrainConfig tc = cfg;
    tc.batch_size = std::min(tc.batch_size, train_set.size());
    Detector det(train_new(arch, train_set, tc).net);

    std::size_t hits = 0, false_flags = 0;
    for (std::size_t i : held) {
        const bool clean_flagged = det.flags(clean[i].pixels);
        false_flags += clean_flagged;
        hits += !clean_flagged;
        hits += det.flags(adversarial[i].pixels);
    }
    DetectorReport r{std::move(det), 0.0, 0.0, std::move(train), std::move(held)};
    r.heldout_accuracy = static_cast<double>(hits) / static_cast<double>(2 * r.heldout_pairs.size());
    r.false_flag_rate = static_cast<double>(false_flags) / static_cast<double>(r.heldout_pairs.size());
    return r;
}

struct Verdict {
    std::size_t image_id = 0;
    double score = 0.0;
    bool adversarial = false;
};

inline std::vector<Verdict> detect(const Detector& det, const Dataset& images) {
    std::vector<Verdict> out;
    out.reserve(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
        const double s = det.score(images[i].pixels);
        out.push_back({i, s, det.flags(images[i].pixels)});
    }
    return out;
}

/// CSV with header image_id,score,verdict; score has 6 fractional digits.
inline std::string verdicts_csv(const std::vector<Verdict>& verdicts) {
    std::string out = "image_id,score,verdict\n";
    char buf[96];
    for (const auto& v : verdicts) {
        std::snprintf(buf, sizeof buf, "%zu,%.6f,%s\n", v.image_id, v.score, v.adversarial ? "adversarial" : "clean");
        out += buf;
    }
    return out;
}

}  // namespace advlab
