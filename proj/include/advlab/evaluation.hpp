#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "advlab/attacks.hpp"
#include "advlab/datasets.hpp"
#include "advlab/network.hpp"
#include "advlab/parallel.hpp"

namespace advlab {

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Fraction of pairs whose clean top-1 class is among the adversarial top-k.
/// k is capped at the number of classes.
inline double relative_topk_from_probs(const std::vector<Tensor>& clean_probs, const std::vector<Tensor>& adv_probs,
                                       std::size_t k) {
    if (clean_probs.size() != adv_probs.size()) {
        throw std::invalid_argument("relative_topk: " + std::to_string(clean_probs.size()) + " clean vs " +
                                    std::to_string(adv_probs.size()) + " adversarial entries");
    }
    if (clean_probs.empty()) {
        throw std::invalid_argument("relative_topk: no pairs");
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < clean_probs.size(); ++i) {
        const std::size_t ref = argmax(clean_probs[i].values());
        const auto top = top_k(adv_probs[i].values(), std::min(k, adv_probs[i].size()));
        hits += std::find(top.begin(), top.end(), ref) != top.end();
    }
    return static_cast<double>(hits) / static_cast<double>(clean_probs.size());
}

inline double relative_topk_accuracy(const Network& net, const std::vector<Tensor>& clean_images,
                                     const std::vector<Tensor>& adv_images, std::size_t k) {
    if (clean_images.size() != adv_images.size()) {
        throw std::invalid_argument("relative_topk_accuracy: length mismatch");
    }
    std::vector<Tensor> cp, ap;
    for (std::size_t i = 0; i < clean_images.size(); ++i) {
        cp.push_back(forward_probs(net, clean_images[i]));
        ap.push_back(forward_probs(net, adv_images[i]));
    }
    return relative_topk_from_probs(cp, ap, k);
}

/// Fraction of items whose true label is among the top-k of `probs`.
inline double truth_topk(const std::vector<std::size_t>& labels, const std::vector<Tensor>& probs, std::size_t k) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto top = top_k(probs[i].values(), std::min(k, probs[i].size()));
        hits += std::find(top.begin(), top.end(), labels[i]) != top.end();
    }
    return labels.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(labels.size());
}

// ---------------------------------------------------------------------------
// Epsilon sweep
// ---------------------------------------------------------------------------

struct SweepConfig {
    std::vector<AttackMethod> methods{std::begin(kAllAttackMethods), std::end(kAllAttackMethods)};
    std::vector<double> eps_grid{0.0, 0.01, 0.02, 0.05, 0.1};
    std::size_t subset_size = 20;
    double alpha = 1.0 / 255.0;
    std::size_t iterations = 10;
    std::uint64_t seed = 7;
    std::size_t jobs = 1;  // worker cap; results do not depend on it
    /// false: each image keeps one random target across the grid; true: a fresh draw per epsilon.
    bool fresh_targets_per_epsilon = false;

    void validate() const {
        if (methods.empty()) throw std::invalid_argument("SweepConfig: no methods");
        if (eps_grid.empty()) throw std::invalid_argument("SweepConfig: empty eps grid");
        for (std::size_t i = 0; i < eps_grid.size(); ++i) {
            if (!(eps_grid[i] >= 0.0)) throw std::invalid_argument("SweepConfig: negative epsilon");
            if (i > 0 && !(eps_grid[i] > eps_grid[i - 1])) {
                throw std::invalid_argument("SweepConfig: eps grid must be strictly ascending");
            }
        }
        if (subset_size == 0) throw std::invalid_argument("SweepConfig: subset_size must be >= 1");
        if (!(alpha > 0.0)) throw std::invalid_argument("SweepConfig: alpha must be > 0");
    }
};

struct SweepRow {
    AttackMethod method = AttackMethod::fast_gradient_sign;
    double epsilon = 0.0;
    std::size_t n_samples = 0;
    double top1_rel = 0.0;
    double top5_rel = 0.0;
    double top1_gt = 0.0;
    double top5_gt = 0.0;
    double mean_linf = 0.0;
    double mean_iterations = 0.0;
    std::uint64_t seed = 0;

    friend bool operator==(const SweepRow&, const SweepRow&) = default;
};

struct SweepReport {
    std::vector<SweepRow> rows;

    friend bool operator==(const SweepReport&, const SweepReport&) = default;
};

/// Attacks every item of `items` under `cfg`; a random target gets a per-item seed
/// from `target_seeds`. Results come back in item order.
inline std::vector<AttackOutcome> attack_all(const Network& net, const std::vector<LabeledImage>& items,
                                             const AttackConfig& cfg, const std::vector<std::uint64_t>& target_seeds,
                                             std::size_t jobs) {
    std::vector<AttackOutcome> out(items.size());
    parallel_for(items.size(), jobs, [&](std::size_t i) {
        AttackConfig c = cfg;
        if (c.target.kind == TargetSpec::Kind::random) {
            c.target.seed = target_seeds.at(i);
        }
        out[i] = run_attack(net, items[i], c);
    });
    return out;
}

/// One seeded subset attacked with every (method, epsilon). Targeted runs take per-image
/// random targets from the sweep seed, held across the grid unless fresh_targets_per_epsilon.
inline SweepReport run_sweep(const Network& net, const Dataset& data, const SweepConfig& cfg) {
    cfg.validate();
    const Dataset subset = sample_subset(data, cfg.subset_size, cfg.seed);
    std::vector<std::size_t> labels;
    for (const auto& it : subset.items) {
        labels.push_back(it.label);
    }
    Rng target_stream(mix_seed(cfg.seed, 0x7a));
    SweepReport report;
    for (AttackMethod m : cfg.methods) {
        for (double eps : cfg.eps_grid) {
            AttackConfig ac;
            ac.method = m;
            ac.epsilon = eps;
            ac.alpha = cfg.alpha;
            ac.iterations = cfg.iterations;
            std::vector<std::uint64_t> seeds(subset.size(), 0);
            if (m == AttackMethod::iterative_targeted) {
                ac.target = TargetSpec::random(0);
                for (std::size_t i = 0; i < seeds.size(); ++i) {
                    seeds[i] = cfg.fresh_targets_per_epsilon ? target_stream.next()
                                                             : mix_seed(mix_seed(cfg.seed, 0x7a), i);
                }
            }
            const auto outcomes = attack_all(net, subset.items, ac, seeds, cfg.jobs);
            std::vector<Tensor> clean, adv;
            double linf = 0.0, iters = 0.0;
            for (const auto& o : outcomes) {
                clean.push_back(o.clean_probs);
                adv.push_back(o.adv_probs);
                linf += o.linf_norm;
                iters += static_cast<double>(o.iterations_run);
            }
            const double n = static_cast<double>(outcomes.size());
            report.rows.push_back({m, eps, outcomes.size(), relative_topk_from_probs(clean, adv, 1),
                                   relative_topk_from_probs(clean, adv, 5), truth_topk(labels, adv, 1),
                                   truth_topk(labels, adv, 5), linf / n, iters / n, cfg.seed});
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// Transferability
// ---------------------------------------------------------------------------

struct TransferRow {
    std::string source_model_id;
    std::string target_model_id;
    AttackMethod method = AttackMethod::fast_gradient_sign;
    double epsilon = 0.0;
    std::size_t n_samples = 0;
    double transfer_top1_rel = 0.0;
    /// Same L-inf budget, random +-epsilon signs instead of the attack.
    double noise_control_top1_rel = 0.0;

    friend bool operator==(const TransferRow&, const TransferRow&) = default;
};

struct TransferReport {
    std::vector<TransferRow> rows;
};

struct ModelIds {
    std::string source = "source";
    std::string target = "target";
};

/// Adversarial images are crafted on `source` and scored on `target` against target's
/// own clean predictions. The control perturbs each pixel by a seeded +-epsilon.
inline TransferRow transfer_row(const Network& source, const Network& target, const AttackConfig& attack,
                                const Dataset& data, std::uint64_t seed, const ModelIds& ids = {},
                                std::size_t jobs = 1) {
    attack.validate();
    if (source.input_shape() != target.input_shape()) {
        throw std::invalid_argument("run_transfer: models take different input shapes");
    }
    if (data.empty()) {
        throw std::invalid_argument("run_transfer: empty dataset");
    }
    std::vector<std::uint64_t> seeds(data.size());
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        seeds[i] = mix_seed(seed, 0x1000 + i);
    }
    const auto outcomes = attack_all(source, data.items, attack, seeds, jobs);
    Rng noise_rng(mix_seed(seed, 0x401));
    std::vector<Tensor> clean, adv, noisy;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const Tensor& x = data[i].pixels;
        Tensor n(x.shape());
        for (std::size_t p = 0; p < x.size(); ++p) {
            const double s = (noise_rng.next() >> 63) ? 1.0 : -1.0;
            n[p] = std::clamp(x[p] + attack.epsilon * s, 0.0, 1.0);
        }
        clean.push_back(forward_probs(target, x));
        adv.push_back(forward_probs(target, outcomes[i].adversarial));
        noisy.push_back(forward_probs(target, n));
    }
    return {ids.source, ids.target, attack.method, attack.epsilon, data.size(),
            relative_topk_from_probs(clean, adv, 1), relative_topk_from_probs(clean, noisy, 1)};
}

/// One row per epsilon in `eps_grid` (the attack's own epsilon is replaced).
inline TransferReport run_transfer(const Network& source, const Network& target, AttackConfig attack,
                                   const Dataset& data, std::uint64_t seed, const std::vector<double>& eps_grid,
                                   const ModelIds& ids = {}, std::size_t jobs = 1) {
    TransferReport r;
    for (std::size_t e = 0; e < eps_grid.size(); ++e) {
        attack.epsilon = eps_grid[e];
        r.rows.push_back(transfer_row(source, target, attack, data, mix_seed(seed, e), ids, jobs));
    }
    return r;
}

inline TransferReport run_transfer(const Network& source, const Network& target, const AttackConfig& attack,
                                   const Dataset& data, std::uint64_t seed, const ModelIds& ids = {},
                                   std::size_t jobs = 1) {
    return run_transfer(source, target, attack, data, seed, {attack.epsilon}, ids, jobs);
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

inline constexpr std::string_view kSweepCsvHeader =
    "method,epsilon,n_samples,top1_rel,top5_rel,top1_gt,top5_gt,mean_linf,mean_iterations,seed";
inline constexpr std::string_view kTransferCsvHeader =
    "source_model_id,target_model_id,method,epsilon,n_samples,transfer_top1_rel,noise_control_top1_rel";

namespace detail {

inline std::string fixed6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) {
        out.push_back(field);
    }
    if (!line.empty() && line.back() == ',') {
        out.emplace_back();
    }
    return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) {
        throw std::runtime_error("write failed for " + path.string());
    }
}

}  // namespace detail

inline std::string report_csv(const SweepReport& report) {
    std::string out(kSweepCsvHeader);
    out += '\n';
    for (const auto& r : report.rows) {
        out += std::string(method_name(r.method)) + ',' + detail::fixed6(r.epsilon) + ',' +
               std::to_string(r.n_samples) + ',' + detail::fixed6(r.top1_rel) + ',' + detail::fixed6(r.top5_rel) +
               ',' + detail::fixed6(r.top1_gt) + ',' + detail::fixed6(r.top5_gt) + ',' +
               detail::fixed6(r.mean_linf) + ',' + detail::fixed6(r.mean_iterations) + ',' +
               std::to_string(r.seed) + '\n';
    }
    return out;
}

/// Writes report_csv(report); returns the byte count.
inline std::size_t write_report_csv(const SweepReport& report, const std::filesystem::path& destination) {
    const auto text = report_csv(report);
    detail::write_text(destination, text);
    return text.size();
}

inline SweepReport parse_report_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kSweepCsvHeader) {
        throw std::runtime_error("parse_report_csv: missing or unexpected header");
    }
    SweepReport rep;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        const auto f = detail::split_csv_line(line);
        if (f.size() != 10) {
            throw std::runtime_error("parse_report_csv: line " + std::to_string(lineno) + " has " +
                                     std::to_string(f.size()) + " fields, expected 10");
        }
        rep.rows.push_back({parse_method(f[0]), std::stod(f[1]), std::stoul(f[2]), std::stod(f[3]), std::stod(f[4]),
                            std::stod(f[5]), std::stod(f[6]), std::stod(f[7]), std::stod(f[8]), std::stoull(f[9])});
    }
    return rep;
}

inline std::string transfer_csv(const TransferReport& report) {
    std::string out(kTransferCsvHeader);
    out += '\n';
    for (const auto& r : report.rows) {
        out += r.source_model_id + ',' + r.target_model_id + ',' + std::string(method_name(r.method)) + ',' +
               detail::fixed6(r.epsilon) + ',' + std::to_string(r.n_samples) + ',' +
               detail::fixed6(r.transfer_top1_rel) + ',' + detail::fixed6(r.noise_control_top1_rel) + '\n';
    }
    return out;
}

// ---------------------------------------------------------------------------
// SVG plot
// ---------------------------------------------------------------------------

enum class Metric { top1_rel, top5_rel, top1_gt, top5_gt };

inline std::string_view metric_name(Metric m) {
    switch (m) {
        case Metric::top1_rel: return "top1_rel";
        case Metric::top5_rel: return "top5_rel";
        case Metric::top1_gt: return "top1_gt";
        case Metric::top5_gt: return "top5_gt";
    }
    return "?";
}

inline Metric parse_metric(std::string_view s) {
    for (auto m : {Metric::top1_rel, Metric::top5_rel, Metric::top1_gt, Metric::top5_gt}) {
        if (metric_name(m) == s) return m;
    }
    throw std::invalid_argument("unknown metric '" + std::string(s) + "'");
}

inline double metric_value(const SweepRow& r, Metric m) {
    switch (m) {
        case Metric::top1_rel: return r.top1_rel;
        case Metric::top5_rel: return r.top5_rel;
        case Metric::top1_gt: return r.top1_gt;
        case Metric::top5_gt: return r.top5_gt;
    }
    return 0.0;
}

/// Pixel geometry of the plot; x maps [eps_min, eps_max] linearly onto [plot_left, plot_right],
/// y maps [0, 1] onto [plot_bottom, plot_top]. The same mapping is written on the <svg> root.
struct PlotLayout {
    double width = 720;
    double height = 440;
    double plot_left = 70;
    double plot_right = 520;
    double plot_top = 40;
    double plot_bottom = 380;
};

inline std::string render_plot_svg(const SweepReport& report, Metric metric, const PlotLayout& L = {}) {
    if (report.rows.empty()) {
        throw std::invalid_argument("render_plot_svg: empty report");
    }
    double eps_min = std::numeric_limits<double>::infinity(), eps_max = -eps_min;
    std::vector<AttackMethod> methods;
    std::vector<double> ticks;
    for (const auto& r : report.rows) {
        eps_min = std::min(eps_min, r.epsilon);
        eps_max = std::max(eps_max, r.epsilon);
        if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
        if (std::find(ticks.begin(), ticks.end(), r.epsilon) == ticks.end()) ticks.push_back(r.epsilon);
    }
    std::sort(ticks.begin(), ticks.end());
    const bool flat = eps_max == eps_min;
    auto px = [&](double eps) {
        return flat ? (L.plot_left + L.plot_right) / 2.0
                    : L.plot_left + (eps - eps_min) / (eps_max - eps_min) * (L.plot_right - L.plot_left);
    };
    auto py = [&](double v) { return L.plot_bottom - v * (L.plot_bottom - L.plot_top); };
    auto num = [](double v) {
        char buf[48];
        std::snprintf(buf, sizeof buf, "%.2f", v);
        return std::string(buf);
    };
    auto label = [](double v) {
        char buf[48];
        std::snprintf(buf, sizeof buf, "%g", v);
        return std::string(buf);
    };
    static constexpr const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

    std::ostringstream s;
    s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << num(L.width) << "\" height=\""
      << num(L.height) << "\" data-metric=\"" << metric_name(metric) << "\" data-x-domain=\"" << label(eps_min) << ' '
      << label(eps_max) << "\" data-x-range=\"" << num(flat ? px(eps_min) : L.plot_left) << ' '
      << num(flat ? px(eps_min) : L.plot_right) << "\" data-y-domain=\"0 1\" data-y-range=\"" << num(L.plot_bottom)
      << ' ' << num(L.plot_top) << "\">\n";
    s << "<rect x=\"0\" y=\"0\" width=\"" << num(L.width) << "\" height=\"" << num(L.height) << "\" fill=\"white\"/>\n";
    s << "<text x=\"" << num((L.plot_left + L.plot_right) / 2) << "\" y=\"24\" text-anchor=\"middle\" "
      << "font-family=\"sans-serif\" font-size=\"15\">" << metric_name(metric) << " versus epsilon</text>\n";
    // axes
    s << "<g stroke=\"black\" stroke-width=\"1\">\n"
      << "<line x1=\"" << num(L.plot_left) << "\" y1=\"" << num(L.plot_bottom) << "\" x2=\"" << num(L.plot_right)
      << "\" y2=\"" << num(L.plot_bottom) << "\"/>\n"
      << "<line x1=\"" << num(L.plot_left) << "\" y1=\"" << num(L.plot_bottom) << "\" x2=\"" << num(L.plot_left)
      << "\" y2=\"" << num(L.plot_top) << "\"/>\n</g>\n";
    s << "<g font-family=\"sans-serif\" font-size=\"11\">\n";
    for (double t : ticks) {
        s << "<line x1=\"" << num(px(t)) << "\" y1=\"" << num(L.plot_bottom) << "\" x2=\"" << num(px(t)) << "\" y2=\""
          << num(L.plot_bottom + 5) << "\" stroke=\"black\"/>"
          << "<text x=\"" << num(px(t)) << "\" y=\"" << num(L.plot_bottom + 18) << "\" text-anchor=\"middle\">"
          << label(t) << "</text>\n";
    }
    for (int i = 0; i <= 5; ++i) {
        const double v = i / 5.0;
        s << "<line x1=\"" << num(L.plot_left - 5) << "\" y1=\"" << num(py(v)) << "\" x2=\"" << num(L.plot_left)
          << "\" y2=\"" << num(py(v)) << "\" stroke=\"black\"/>"
          << "<text x=\"" << num(L.plot_left - 8) << "\" y=\"" << num(py(v) + 4) << "\" text-anchor=\"end\">"
          << label(v) << "</text>\n";
    }
    s << "<text x=\"" << num((L.plot_left + L.plot_right) / 2) << "\" y=\"" << num(L.plot_bottom + 40)
      << "\" text-anchor=\"middle\">epsilon</text>\n"
      << "<text x=\"18\" y=\"" << num((L.plot_top + L.plot_bottom) / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
      << num((L.plot_top + L.plot_bottom) / 2) << ")\">" << metric_name(metric) << "</text>\n</g>\n";

    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
        std::vector<const SweepRow*> rows;
        for (const auto& r : report.rows) {
            if (r.method == methods[mi]) rows.push_back(&r);
        }
        std::stable_sort(rows.begin(), rows.end(), [](auto a, auto b) { return a->epsilon < b->epsilon; });
        const char* color = palette[mi % std::size(palette)];
        s << "<polyline class=\"series\" data-method=\"" << method_name(methods[mi]) << "\" fill=\"none\" stroke=\""
          << color << "\" stroke-width=\"2\" points=\"";
        for (std::size_t j = 0; j < rows.size(); ++j) {
            s << (j ? " " : "") << num(px(rows[j]->epsilon)) << ',' << num(py(metric_value(*rows[j], metric)));
        }
        s << "\"/>\n";
        const double ly = L.plot_top + 10 + 22.0 * static_cast<double>(mi);
        s << "<line x1=\"" << num(L.plot_right + 20) << "\" y1=\"" << num(ly) << "\" x2=\"" << num(L.plot_right + 45)
          << "\" y2=\"" << num(ly) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>"
          << "<text x=\"" << num(L.plot_right + 52) << "\" y=\"" << num(ly + 4)
          << "\" font-family=\"sans-serif\" font-size=\"12\">" << method_name(methods[mi]) << "</text>\n";
    }
    s << "</svg>\n";
    return s.str();
}

}  // namespace advlab
