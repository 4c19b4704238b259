// advlab: command-line front end for training, attacking, sweeping, defending and
// transfer-testing the desk classifier.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "advlab/advlab.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace advlab;

namespace {

constexpr const char* kTrainImages = "train-images-idx3-ubyte";
constexpr const char* kTrainLabels = "train-labels-idx1-ubyte";
constexpr const char* kTestImages = "t10k-images-idx3-ubyte";
constexpr const char* kTestLabels = "t10k-labels-idx1-ubyte";
// 1/255 with enough digits to round-trip through the sidecar
constexpr const char* kAlphaText = "0.0039215686274509803";

void require_file(const fs::path& p) {
    if (!fs::is_regular_file(p)) {
        throw std::runtime_error("file not found: " + p.string());
    }
}

Dataset load_split(const std::string& dir, bool train) {
    const fs::path images = fs::path(dir) / (train ? kTrainImages : kTestImages);
    const fs::path labels = fs::path(dir) / (train ? kTrainLabels : kTestLabels);
    require_file(images);
    require_file(labels);
    return load_idx(images, labels);
}

Network load_model(const std::string& path) {
    require_file(path);
    return load_checkpoint(path);
}

std::vector<double> parse_eps_list(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != item.size()) {
            throw CLI::ValidationError("--eps", "not a number: '" + item + "'");
        }
        out.push_back(v);
    }
    if (out.empty()) {
        throw CLI::ValidationError("--eps", "empty list");
    }
    return out;
}

std::vector<AttackMethod> parse_methods(const std::string& text) {
    if (text == "all") {
        return {std::begin(kAllAttackMethods), std::end(kAllAttackMethods)};
    }
    std::vector<AttackMethod> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            out.push_back(parse_method(item));
        } catch (const std::invalid_argument& e) {
            throw CLI::ValidationError("--methods", e.what());
        }
    }
    return out;
}

AttackMethod parse_method_flag(const std::string& text) {
    try {
        return parse_method(text);
    } catch (const std::invalid_argument& e) {
        throw CLI::ValidationError("--method", e.what());
    }
}

/// Writes every option of `sub` (flag name -> resolved value) next to `artifact`.
void write_sidecar(const CLI::App& sub, const fs::path& artifact) {
    ordered_json j;
    j["subcommand"] = sub.get_name();
    for (const CLI::Option* opt : sub.get_options()) {
        const auto& names = opt->get_lnames();
        if (names.empty() || names[0] == "help" || names[0] == "config") continue;
        std::string value;
        if (opt->count() > 0) {
            const auto& res = opt->reduced_results();
            for (std::size_t i = 0; i < res.size(); ++i) value += (i ? "," : "") + res[i];
        } else {
            value = opt->get_default_str();
        }
        j[names[0]] = value;
    }
    detail::write_text(artifact.string() + ".config.json", j.dump(2) + "\n");
}

/// Expands a JSON object into "--key value" arguments.
std::vector<std::string> config_arguments(const std::string& path) {
    require_file(path);
    std::ifstream in(path);
    ordered_json j;
    try {
        j = ordered_json::parse(in);
    } catch (const ordered_json::parse_error& e) {
        throw std::runtime_error("bad config " + path + ": " + e.what());
    }
    if (!j.is_object()) {
        throw std::runtime_error("bad config " + path + ": expected a JSON object");
    }
    std::vector<std::string> args;
    for (const auto& [key, value] : j.items()) {
        if (key == "subcommand" || key == "config") continue;
        std::string text;
        if (value.is_string()) {
            text = value.get<std::string>();
        } else if (value.is_array()) {
            for (std::size_t i = 0; i < value.size(); ++i) {
                text += (i ? "," : "") + (value[i].is_string() ? value[i].get<std::string>() : value[i].dump());
            }
        } else {
            text = value.dump();
        }
        args.push_back("--" + key);
        args.push_back(text);
    }
    return args;
}

struct Options {
    // shared
    std::string config;
    std::string data_dir = "data";
    std::string model;
    std::string out;
    std::uint64_t seed = 7;
    std::size_t jobs = 1;
    // data generation
    std::size_t n_train = 3000;
    std::size_t n_test = 500;
    std::size_t size = 28;
    std::size_t classes = 10;
    // training
    std::size_t epochs = 12;
    double lr = 0.1;
    std::size_t batch = 32;
    double grad_norm_limit = -1.0;
    double label_smoothing = 0.0;
    // attacks
    std::string method = "fgsm";
    std::string methods = "all";
    std::string eps = "0,0.01,0.02,0.05,0.1";
    double epsilon = 0.1;
    double alpha = 1.0 / 255.0;
    std::size_t iterations = 10;
    long target = -1;
    std::size_t index = 0;
    std::size_t n = 20;
    std::string metric = "top1_rel";
    std::string plot;
    bool fresh_targets = false;
    // defenses
    std::string mode = "adv-train";
    double mix_ratio = 0.5;
    double temperature = 20.0;
    double heldout = 0.25;
    std::string verdicts;
    // transfer
    std::string source;
    std::string target_model;
};

TrainConfig train_config(const Options& o) {
    TrainConfig c;
    c.learning_rate = o.lr;
    c.epochs = o.epochs;
    c.batch_size = o.batch;
    c.seed = o.seed;
    if (o.grad_norm_limit >= 0.0) c.grad_norm_limit = o.grad_norm_limit;
    c.label_smoothing = o.label_smoothing;
    return c;
}

AttackConfig attack_config(const Options& o, AttackMethod m) {
    AttackConfig c;
    c.method = m;
    c.epsilon = o.epsilon;
    c.alpha = o.alpha;
    c.iterations = o.iterations;
    if (m == AttackMethod::iterative_targeted) {
        c.target = o.target >= 0 ? TargetSpec::fixed(static_cast<std::size_t>(o.target)) : TargetSpec::random(o.seed);
    }
    return c;
}

void print_epochs(const TrainResult& r) {
    for (std::size_t e = 0; e < r.history.size(); ++e) {
        std::printf("epoch %zu loss %.4f accuracy %.4f\n", e + 1, r.history[e].loss, r.history[e].accuracy);
    }
}

int cmd_gen_data(const Options& o, const CLI::App& sub) {
    fs::create_directories(o.out);
    const Dataset train = generate_synthetic(o.n_train, o.size, o.classes, o.seed);
    const Dataset test = generate_synthetic(o.n_test, o.size, o.classes, o.seed + 1);
    const fs::path dir(o.out);
    save_idx(train, dir / kTrainImages, dir / kTrainLabels);
    save_idx(test, dir / kTestImages, dir / kTestLabels);
    write_sidecar(sub, dir / "gen-data");
    std::printf("wrote %zu train and %zu test images to %s\n", train.size(), test.size(), o.out.c_str());
    return 0;
}

int cmd_train(const Options& o, const CLI::App& sub) {
    const Dataset train = load_split(o.data_dir, true);
    const auto result = train_new(desk_architecture(train.class_count), train, train_config(o));
    print_epochs(result);
    const fs::path test_images = fs::path(o.data_dir) / kTestImages;
    if (fs::exists(test_images)) {
        std::printf("test accuracy %.4f\n", accuracy(result.net, load_split(o.data_dir, false)));
    }
    save_checkpoint(result.net, o.out);
    write_sidecar(sub, o.out);
    return 0;
}

int cmd_attack(const Options& o, const CLI::App& sub) {
    const Network net = load_model(o.model);
    const Dataset test = load_split(o.data_dir, false);
    if (o.index >= test.size()) {
        throw std::runtime_error("--index " + std::to_string(o.index) + " out of range (" +
                                 std::to_string(test.size()) + " test images)");
    }
    const auto cfg = attack_config(o, parse_method_flag(o.method));
    const auto outcome = run_attack(net, test[o.index], cfg);
    const fs::path dir(o.out);
    fs::create_directories(dir);
    const char* ext = test[o.index].pixels.shape()[2] == 1 ? ".pgm" : ".ppm";
    write_pnm(test[o.index].pixels, dir / (std::string("clean") + ext));
    write_pnm(outcome.adversarial, dir / (std::string("adversarial") + ext));
    ordered_json j;
    j["index"] = o.index;
    j["label"] = test[o.index].label;
    j["method"] = method_name(cfg.method);
    j["epsilon"] = cfg.epsilon;
    j["clean_prediction"] = argmax(outcome.clean_probs.values());
    j["adversarial_prediction"] = argmax(outcome.adv_probs.values());
    j["target"] = outcome.target ? ordered_json(*outcome.target) : ordered_json(nullptr);
    j["linf"] = outcome.linf_norm;
    j["flipped_top1"] = outcome.success_flipped_top1;
    j["clean_probs"] = outcome.clean_probs.data();
    j["adversarial_probs"] = outcome.adv_probs.data();
    detail::write_text(dir / "prediction.json", j.dump(2) + "\n");
    write_sidecar(sub, dir / "attack");
    std::printf("prediction %zu -> %zu\n", static_cast<std::size_t>(j["clean_prediction"]),
                static_cast<std::size_t>(j["adversarial_prediction"]));
    return 0;
}

int cmd_sweep(const Options& o, const CLI::App& sub) {
    SweepConfig c;
    c.methods = parse_methods(o.methods);
    c.eps_grid = parse_eps_list(o.eps);
    c.subset_size = o.n;
    c.alpha = o.alpha;
    c.iterations = o.iterations;
    c.seed = o.seed;
    c.jobs = o.jobs;
    c.fresh_targets_per_epsilon = o.fresh_targets;
    c.validate();
    Metric metric = Metric::top1_rel;
    try {
        metric = parse_metric(o.metric);
    } catch (const std::invalid_argument& e) {
        throw CLI::ValidationError("--metric", e.what());
    }
    const Network net = load_model(o.model);
    const Dataset test = load_split(o.data_dir, false);
    const SweepReport rep = run_sweep(net, test, c);
    write_report_csv(rep, o.out);
    const fs::path plot = o.plot.empty() ? fs::path(o.out).replace_extension(".svg") : fs::path(o.plot);
    detail::write_text(plot, render_plot_svg(rep, metric));
    write_sidecar(sub, o.out);
    std::fputs(report_csv(rep).c_str(), stdout);
    return 0;
}

int cmd_defend(const Options& o, const CLI::App& sub) {
    const Dataset train = load_split(o.data_dir, true);
    const std::size_t k = train.class_count;
    if (o.mode == "adv-train") {
        AdvTrainConfig c;
        c.base = train_config(o);
        c.attack = attack_config(o, parse_method_flag(o.method));
        c.mix_ratio = o.mix_ratio;
        const auto init = Network::initialized(desk_architecture(k), train.image_shape(), k, o.seed);
        const auto r = adversarial_train(init, train, c);
        print_epochs(r);
        save_checkpoint(r.net, o.out);
    } else if (o.mode == "distill") {
        DistillConfig c;
        c.teacher_train = train_config(o);
        c.teacher_layers = desk_architecture(k);
        c.student_layers = compact_architecture(k);
        c.temperature = o.temperature;
        const auto r = distill(train, c, o.seed);
        std::printf("teacher parameters %zu student parameters %zu\n", r.teacher.parameter_count(),
                    r.student.parameter_count());
        save_checkpoint(r.student, o.out);
    } else {
        const Network net = load_model(o.model);
        const Dataset clean = sample_subset(train, o.n, o.seed);
        Dataset adv = clean;
        const auto c = attack_config(o, parse_method_flag(o.method));
        std::vector<std::uint64_t> seeds(clean.size());
        for (std::size_t i = 0; i < seeds.size(); ++i) seeds[i] = mix_seed(o.seed, 0x1000 + i);
        const auto outcomes = attack_all(net, clean.items, c, seeds, o.jobs);
        for (std::size_t i = 0; i < adv.size(); ++i) adv.items[i].pixels = outcomes[i].adversarial;
        const auto rep = train_detector(clean, adv, desk_architecture(2), train_config(o), o.heldout);
        std::printf("detector held-out accuracy %.4f false-flag rate %.4f\n", rep.heldout_accuracy,
                    rep.false_flag_rate);
        save_checkpoint(rep.detector.net, o.out);
        if (!o.verdicts.empty()) {
            detail::write_text(o.verdicts, verdicts_csv(detect(rep.detector, load_split(o.data_dir, false))));
        }
    }
    write_sidecar(sub, o.out);
    return 0;
}

int cmd_transfer(const Options& o, const CLI::App& sub) {
    const Network source = load_model(o.source);
    const Network target = load_model(o.target_model);
    const Dataset test = load_split(o.data_dir, false);
    const Dataset subset = sample_subset(test, o.n, o.seed);
    const auto rep = run_transfer(source, target, attack_config(o, parse_method_flag(o.method)), subset, o.seed,
                                  parse_eps_list(o.eps), {fs::path(o.source).stem().string(),
                                                          fs::path(o.target_model).stem().string()},
                                  o.jobs);
    const std::string csv = transfer_csv(rep);
    detail::write_text(o.out, csv);
    write_sidecar(sub, o.out);
    std::fputs(csv.c_str(), stdout);
    return 0;
}

/// Inserts the arguments from the subcommand's --config file right after the
/// subcommand name so explicit flags, which come later, take precedence.
std::vector<std::string> with_config(const std::vector<std::string>& argv) {
    std::vector<std::string> out = argv;
    for (std::size_t i = 1; i < argv.size(); ++i) {
        std::string path;
        if (argv[i] == "--config" && i + 1 < argv.size()) {
            path = argv[i + 1];
        } else if (argv[i].rfind("--config=", 0) == 0) {
            path = argv[i].substr(9);
        } else {
            continue;
        }
        const auto extra = config_arguments(path);
        out.insert(out.begin() + 2, extra.begin(), extra.end());
        break;
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    Options o;
    CLI::App app{"advlab: adversarial examples on a small convolutional classifier"};
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

    auto add_common = [&](CLI::App* s, const std::string& out_help) {
        s->add_option("--config", o.config, "JSON file whose keys mirror the flag names; flags win");
        s->add_option("--out", o.out, out_help)->required();
        s->add_option("--seed", o.seed, "Seed for every random choice in this run");
    };
    auto add_data = [&](CLI::App* s) { s->add_option("--data-dir", o.data_dir, "Directory holding the IDX files"); };
    auto add_jobs = [&](CLI::App* s) { s->add_option("--jobs", o.jobs, "Worker cap; results do not depend on it"); };
    auto add_train = [&](CLI::App* s) {
        s->add_option("--epochs", o.epochs, "Training epochs");
        s->add_option("--lr", o.lr, "SGD learning rate");
        s->add_option("--batch", o.batch, "Mini-batch size");
        s->add_option("--grad-norm-limit", o.grad_norm_limit, "Global gradient-norm clip (negative disables)");
        s->add_option("--label-smoothing", o.label_smoothing, "Label smoothing in [0,1)");
    };
    auto add_attack = [&](CLI::App* s) {
        s->add_option("--method", o.method, "fgsm | nontargeted | targeted");
        s->add_option("--epsilon", o.epsilon, "L-inf budget");
        s->add_option("--alpha", o.alpha, "Per-step size for iterative methods")->default_val(kAlphaText);
        s->add_option("--iterations", o.iterations, "Steps for iterative methods");
        s->add_option("--target", o.target, "Fixed target class (negative picks one at random)");
    };

    auto* gen = app.add_subcommand("gen-data", "Write the synthetic corpus as MNIST-named IDX files");
    add_common(gen, "Output directory");
    gen->add_option("--n-train", o.n_train, "Training images");
    gen->add_option("--n-test", o.n_test, "Test images");
    gen->add_option("--size", o.size, "Image side in pixels");
    gen->add_option("--classes", o.classes, "Class count");

    auto* train = app.add_subcommand("train", "Train the desk classifier and write a checkpoint");
    add_common(train, "Checkpoint path");
    add_data(train);
    add_train(train);

    auto* attack = app.add_subcommand("attack", "Attack one test image; writes images and prediction.json");
    add_common(attack, "Output directory");
    add_data(attack);
    attack->add_option("--model", o.model, "Checkpoint")->required();
    attack->add_option("--index", o.index, "Test image index");
    add_attack(attack);

    auto* sweep = app.add_subcommand("sweep", "Sweep methods and epsilons; writes CSV and SVG");
    add_common(sweep, "CSV report path");
    add_data(sweep);
    add_jobs(sweep);
    sweep->add_option("--model", o.model, "Checkpoint")->required();
    sweep->add_option("--eps", o.eps, "Comma-separated epsilon grid");
    sweep->add_option("--methods", o.methods, "all or a comma-separated method list");
    sweep->add_option("--n", o.n, "Images in the seeded subset");
    sweep->add_option("--alpha", o.alpha, "Per-step size for iterative methods")->default_val(kAlphaText);
    sweep->add_option("--iterations", o.iterations, "Steps for iterative methods");
    sweep->add_option("--metric", o.metric, "Plotted metric: top1_rel, top5_rel, top1_gt, top5_gt");
    sweep->add_option("--plot", o.plot, "SVG path (default: CSV path with .svg)");
    sweep->add_option("--fresh-targets", o.fresh_targets, "Redraw targeted-attack targets for every epsilon");

    auto* defend = app.add_subcommand("defend", "Adversarial training, distillation or a detector");
    add_common(defend, "Checkpoint path");
    add_data(defend);
    add_jobs(defend);
    add_train(defend);
    add_attack(defend);
    defend->add_option("--mode", o.mode, "adv-train | distill | detector")
        ->check(CLI::IsMember({"adv-train", "distill", "detector"}));
    defend->add_option("--mix-ratio", o.mix_ratio, "Adversarial share of each batch");
    defend->add_option("--temperature", o.temperature, "Distillation temperature");
    defend->add_option("--model", o.model, "Classifier to attack when training a detector");
    defend->add_option("--n", o.n, "Clean/adversarial pairs for the detector");
    defend->add_option("--heldout", o.heldout, "Held-out pair fraction for the detector");
    defend->add_option("--verdicts", o.verdicts, "Optional CSV of detector verdicts on the test split");

    auto* transfer = app.add_subcommand("transfer", "Craft on one model, score on another; writes CSV");
    add_common(transfer, "CSV path");
    add_data(transfer);
    add_jobs(transfer);
    add_attack(transfer);
    transfer->add_option("--source", o.source, "Checkpoint the attack is crafted on")->required();
    transfer->add_option("--target-model", o.target_model, "Checkpoint that is scored")->required();
    transfer->add_option("--eps", o.eps, "Comma-separated epsilon grid");
    transfer->add_option("--n", o.n, "Images in the seeded subset");

    std::vector<std::string> args(argv, argv + argc);
    try {
        args = with_config(args);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
    try {
        app.parse(std::move(reversed));
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        if (code != 0) {
            std::cerr << app.help();
            return 2;
        }
        return 0;
    }

    try {
        if (*gen) return cmd_gen_data(o, *gen);
        if (*train) return cmd_train(o, *train);
        if (*attack) return cmd_attack(o, *attack);
        if (*sweep) return cmd_sweep(o, *sweep);
        if (*defend) return cmd_defend(o, *defend);
        return cmd_transfer(o, *transfer);
    } catch (const CLI::ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        std::cerr << app.help();
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
