// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
// Every model is trained from scratch here; nothing is read from the test cache.

#include <chrono>
#include <cstring>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <unistd.h>

#include "advlab/advlab.hpp"

using namespace advlab;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Result {
    int id = 0;
    std::string name;
    bool ok = false;
    std::string detail;
    double seconds = 0.0;
    double limit = 0.0;  // 0 means no runtime bound
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

constexpr std::uint64_t kTrainSeed = 1, kTestSeed = 2, kModelSeed = 3, kSecondModelSeed = 4;

TrainConfig desk_config(std::uint64_t seed) {
    TrainConfig c;
    c.seed = seed;
    return c;
}

/// Central differences on sampled input and parameter coordinates.
Result gradient_check(const Network& net, const Dataset& data) {
    const auto t0 = Clock::now();
    constexpr double h = 1e-5, tol = 1e-4, floor = 1e-7;
    Rng rng(mix_seed(kModelSeed, 0x9c));
    std::size_t checked = 0, bad = 0;
    double worst = 0.0;
    auto judge = [&](double analytic, double numeric) {
        const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
        worst = std::max(worst, rel);
        bad += rel >= tol;
        ++checked;
    };
    for (std::size_t s = 0; s < 60; ++s) {
        const auto& it = data[rng.below(data.size())];
        const auto g = input_gradient(net, it.pixels, it.label);
        const std::size_t p = rng.below(it.pixels.size());
        Tensor up = it.pixels, down = it.pixels;
        up[p] += h;
        down[p] -= h;
        judge(g.input_grad[p], (cost(net, up, it.label) - cost(net, down, it.label)) / (2 * h));

        const auto& [name, grad] = *std::next(g.param_grads.begin(),
                                              static_cast<std::ptrdiff_t>(rng.below(g.param_grads.size())));
        const std::size_t q = rng.below(grad.size());
        Network plus = net, minus = net;
        Tensor w = net.param(name);
        const double w0 = w[q];
        w[q] = w0 + h;
        plus.set_param(name, w);
        w[q] = w0 - h;
        minus.set_param(name, w);
        judge(grad[q], (cost(plus, it.pixels, it.label) - cost(minus, it.pixels, it.label)) / (2 * h));
    }
    const double secs = seconds_since(t0);
    return {1, "gradient correctness", bad == 0 && checked >= 100,
            fmt("%zu coordinates, %zu over 1e-4, worst relative error %.2e", checked, bad, worst), secs, 30};
}

Result epsilon_ball(const Network& net, const Dataset& data) {
    const auto t0 = Clock::now();
    Rng rng(mix_seed(kModelSeed, 0xba11));
    std::size_t violations = 0, zero_cases = 0;
    double worst_excess = 0.0;
    for (std::size_t c = 0; c < 200; ++c) {
        const auto& it = data[rng.below(data.size())];
        AttackConfig a;
        a.method = kAllAttackMethods[c % 3];
        a.epsilon = c % 10 == 0 ? 0.0 : rng.uniform(0.0, 0.3);
        a.iterations = 1 + rng.below(10);
        if (a.method == AttackMethod::iterative_targeted) a.target = TargetSpec::random(rng.next());
        const auto o = run_attack(net, it, a);
        const double linf = linf_distance(o.adversarial, it.pixels);
        worst_excess = std::max(worst_excess, linf - a.epsilon);
        bool ok = within_ball(linf, a.epsilon);
        for (double v : o.adversarial) ok = ok && v >= 0.0 && v <= 1.0;
        if (a.epsilon == 0.0) {
            ++zero_cases;
            ok = ok && std::memcmp(o.adversarial.data().data(), it.pixels.data().data(),
                                   it.pixels.size() * sizeof(double)) == 0;
        }
        violations += !ok;
    }
    return {2, "epsilon-ball suite", violations == 0,
            fmt("200 cases (%zu at eps=0), %zu violations, max linf-eps %.3g", zero_cases, violations, worst_excess),
            seconds_since(t0), 120};
}

Result trend(const Network& net, double train_seconds, const Dataset& test, SweepReport& report) {
    const auto t0 = Clock::now();
    const double clean = accuracy(net, test);
    report = run_sweep(net, test, SweepConfig{});
    bool ok = clean >= 0.95;
    std::string detail = fmt("clean accuracy %.3f;", clean);
    for (auto m : kAllAttackMethods) {
        std::vector<const SweepRow*> rows;
        for (const auto& r : report.rows) {
            if (r.method == m) rows.push_back(&r);
        }
        ok = ok && rows.front()->epsilon == 0.0 && rows.front()->top1_rel == 1.0;
        ok = ok && rows.back()->epsilon == 0.1 && rows.back()->top1_rel <= 0.2;
        for (std::size_t i = 1; i < rows.size(); ++i) ok = ok && rows[i]->top1_rel <= rows[i - 1]->top1_rel + 0.05;
        for (const auto* r : rows) ok = ok && r->top1_rel <= r->top5_rel;
        detail += fmt(" %s", std::string(method_name(m)).c_str());
        for (const auto* r : rows) detail += fmt(" %.2f", r->top1_rel);
        detail += ";";
    }
    return {3, "trend reproduction", ok, detail, train_seconds + seconds_since(t0), 600};
}

Result targeted(const Network& net, const Dataset& test) {
    const auto t0 = Clock::now();
    const Dataset batch = sample_subset(test, 20, 7);
    AttackConfig a;
    a.method = AttackMethod::iterative_targeted;
    a.epsilon = 0.1;
    a.iterations = 20;
    std::vector<std::uint64_t> seeds(batch.size());
    for (std::size_t i = 0; i < seeds.size(); ++i) seeds[i] = mix_seed(7, 0x1000 + i);
    a.target = TargetSpec::random(0);
    const auto outcomes = attack_all(net, batch.items, a, seeds, 1);
    std::size_t raised = 0, hit = 0;
    for (const auto& o : outcomes) {
        raised += o.adv_probs[*o.target] > o.clean_probs[*o.target];
        hit += *o.success_hit_target;
    }
    return {4, "targeted success", raised >= 16 && hit >= 10,
            fmt("p(target) raised on %zu/20, argmax = target on %zu/20", raised, hit), seconds_since(t0), 180};
}

double fgsm_accuracy(const Network& net, const Dataset& data, double eps) {
    std::size_t correct = 0;
    for (const auto& it : data.items) correct += predict(net, fgsm(net, it, eps).adversarial) == it.label;
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

Result adversarial_training(const Network& plain, double plain_seconds, const Dataset& train, const Dataset& test) {
    const auto t0 = Clock::now();
    AdvTrainConfig c;
    c.base = desk_config(kModelSeed);
    c.attack.method = AttackMethod::fast_gradient_sign;
    c.attack.epsilon = 0.1;
    c.mix_ratio = 0.5;
    const auto init = Network::initialized(desk_architecture(), train.image_shape(), train.class_count, kModelSeed);
    const Network defended = adversarial_train(init, train, c).net;
    const double pc = accuracy(plain, test), dc = accuracy(defended, test);
    const double pa = fgsm_accuracy(plain, test, 0.1), da = fgsm_accuracy(defended, test, 0.1);
    return {5, "adversarial-training benefit", da - pa >= 0.15 && std::abs(pc - dc) <= 0.10,
            fmt("FGSM accuracy defended %.3f vs twin %.3f; clean %.3f vs %.3f", da, pa, dc, pc),
            plain_seconds + seconds_since(t0), 900};
}

Result transferability(const Network& a, double a_seconds, const Dataset& train, const Dataset& test) {
    const auto t0 = Clock::now();
    const Network b = train_new(desk_architecture(), train, desk_config(kSecondModelSeed)).net;
    AttackConfig atk;
    atk.epsilon = 0.1;
    const auto row = transfer_row(a, b, atk, sample_subset(test, 100, 11), 11, {"seed3", "seed4"});
    return {6, "transferability", row.transfer_top1_rel < row.noise_control_top1_rel,
            fmt("model B keeps top-1 on %.2f under transferred FGSM vs %.2f under +-eps noise",
                row.transfer_top1_rel, row.noise_control_top1_rel),
            a_seconds + seconds_since(t0), 300};
}

Result determinism(const Network& net, const SweepReport& report, const Dataset& train, const Dataset& test) {
    const auto t0 = Clock::now();
    const SweepReport again = run_sweep(net, test, SweepConfig{});
    const bool csv = report_csv(report) == report_csv(again);
    const bool svg = render_plot_svg(report, Metric::top1_rel) == render_plot_svg(again, Metric::top1_rel);
    const Network twin = train_new(desk_architecture(), train, desk_config(kModelSeed)).net;
    const bool ckpt = checkpoint_json(net) == checkpoint_json(twin);
    return {7, "determinism", csv && svg && ckpt,
            fmt("CSV %s, SVG %s, checkpoint %s", csv ? "identical" : "differs", svg ? "identical" : "differs",
                ckpt ? "identical" : "differs"),
            seconds_since(t0), 0};
}

Result round_trips(const Network& net, const SweepReport& report, const Dataset& test) {
    const auto t0 = Clock::now();
    const fs::path dir = fs::temp_directory_path() / ("advlab_acceptance_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    save_idx(test, dir / "a-images", dir / "a-labels");
    const Dataset once = load_idx(dir / "a-images", dir / "a-labels");
    save_idx(once, dir / "b-images", dir / "b-labels");
    const Dataset twice = load_idx(dir / "b-images", dir / "b-labels");
    bool idx = once.size() == twice.size() && once.class_count == twice.class_count &&
               slurp(dir / "a-images") == slurp(dir / "b-images") && slurp(dir / "a-labels") == slurp(dir / "b-labels");
    for (std::size_t i = 0; idx && i < once.size(); ++i) {
        idx = once[i].pixels == twice[i].pixels && once[i].label == twice[i].label;
    }
    save_checkpoint(net, dir / "m1.json");
    save_checkpoint(load_checkpoint(dir / "m1.json"), dir / "m2.json");
    const bool ckpt = slurp(dir / "m1.json") == slurp(dir / "m2.json");
    const std::string text = report_csv(report);
    const bool csv = report_csv(parse_report_csv(text)) == text;
    fs::remove_all(dir);
    return {8, "format round-trips", idx && ckpt && csv,
            fmt("IDX %s, checkpoint %s, CSV %s", idx ? "identical" : "differs", ckpt ? "identical" : "differs",
                csv ? "identical" : "differs"),
            seconds_since(t0), 0};
}

}  // namespace

int main() {
    std::printf("advlab acceptance suite\n");
    std::fflush(stdout);
    const Dataset train = generate_synthetic(3000, 28, 10, kTrainSeed);
    const Dataset test = generate_synthetic(500, 28, 10, kTestSeed);

    const auto t0 = Clock::now();
    const Network desk = train_new(desk_architecture(), train, desk_config(kModelSeed)).net;
    const double train_seconds = seconds_since(t0);

    std::vector<Result> results;
    SweepReport report;
    auto run = [&](const std::function<Result()>& f) {
        try {
            results.push_back(f());
        } catch (const std::exception& e) {
            results.push_back({static_cast<int>(results.size()) + 1, "exception", false, e.what(), 0, 0});
        }
    };
    run([&] { return gradient_check(desk, test); });
    run([&] { return epsilon_ball(desk, test); });
    run([&] { return trend(desk, train_seconds, test, report); });
    run([&] { return targeted(desk, test); });
    run([&] { return adversarial_training(desk, train_seconds, train, test); });
    run([&] { return transferability(desk, train_seconds, train, test); });
    run([&] { return determinism(desk, report, train, test); });
    run([&] { return round_trips(desk, report, test); });

    int failures = 0;
    for (auto& r : results) {
        const bool in_time = r.limit == 0.0 || r.seconds < r.limit;
        const bool pass = r.ok && in_time;
        failures += !pass;
        std::string bound = r.limit > 0.0 ? fmt(" (limit %.0f s)", r.limit) : "";
        std::printf("%s criterion %d %s: %s [%.1f s%s]\n", pass ? "PASS" : "FAIL", r.id, r.name.c_str(),
                    r.detail.c_str(), r.seconds, bound.c_str());
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(results.size()) - failures, results.size());
    return failures == 0 ? 0 : 1;
}
