// lessnet: dataset generation, training, registration, evaluation, ablations
// and model profiling from the command line.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lessnet/lessnet.hpp"

namespace fs = std::filesystem;
using namespace lessnet;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Reports argument validation failures as usage errors.
template <typename Fn>
void as_usage(Fn&& fn)
{
    try {
        fn();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
}

std::vector<std::string> split(const std::string& s, char sep)
{
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, sep);)
        if (!item.empty()) out.push_back(item);
    return out;
}

std::size_t parse_count(const std::string& s, const std::string& what)
{
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
        v = std::stoull(s, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos != s.size() || s.empty() || s[0] == '-') throw UsageError("invalid " + what + ": '" + s + "'");
    return static_cast<std::size_t>(v);
}

Shape parse_size(const std::string& s, std::size_t dim)
{
    Shape shape;
    for (const auto& part : split(s, 'x')) shape.push_back(parse_count(part, "--size extent"));
    if (shape.size() != dim)
        throw UsageError("--size '" + s + "' has " + std::to_string(shape.size()) + " extents, expected " + std::to_string(dim));
    return shape;
}

std::vector<std::uint64_t> parse_seeds(const std::string& s)
{
    std::vector<std::uint64_t> out;
    for (const auto& part : split(s, ',')) out.push_back(parse_count(part, "seed"));
    return out;
}

PyramidConfig parse_pyramid(const std::string& modes, const std::string& levels, bool use_original)
{
    PyramidConfig p{false, false, false, false, false, false, use_original};
    for (const auto& m : split(modes, ',')) {
        if (m == "min") p.use_min = true;
        else if (m == "avg") p.use_avg = true;
        else if (m == "max") p.use_max = true;
        else throw UsageError("unknown pooling mode '" + m + "' (expected min, avg, max)");
    }
    for (const auto& l : split(levels, ',')) {
        if (l == "2") p.use_half = true;
        else if (l == "4") p.use_quarter = true;
        else if (l == "8") p.use_eighth = true;
        else throw UsageError("unknown pooling level '" + l + "' (expected 2, 4, 8)");
    }
    if (p.modes().empty()) throw UsageError("--pool-modes needs at least one mode");
    if (!p.use_eighth) throw UsageError("--pool-levels must include 8");
    return p;
}

bool parse_bool(const std::string& s)
{
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw UsageError("expected true or false, got '" + s + "'");
}

void write_text(const fs::path& path, const std::string& text)
{
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

template <typename Fn>
std::string to_text(Fn&& fn)
{
    std::ostringstream os;
    fn(os);
    return os.str();
}

/// Options shared by train and ablate that describe the model and loss.
struct ModelOptions {
    std::size_t dim = 2;
    std::size_t channels = 8;
    std::size_t convs_per_block = 1;
    std::string loss = "mse";
    std::optional<double> lambda;
    std::size_t ncc_window = 9;
    bool diffeo = false;
    std::string pool_modes = "min,avg,max";
    std::string pool_levels = "2,4,8";
    std::string use_original = "true";

    void add_to(CLI::App* app)
    {
        app->add_option("--dim", dim, "spatial rank")->check(CLI::IsMember({2, 3}));
        app->add_option("--channels", channels, "width multiplier C")->check(CLI::PositiveNumber);
        app->add_option("--convs-per-block", convs_per_block, "convolutions per decoder block")->check(CLI::PositiveNumber);
        app->add_option("--loss", loss, "similarity term")->check(CLI::IsMember({"mse", "ncc"}));
        app->add_option("--lambda", lambda, "regularization weight (default 0.01 mse, 5 ncc, 2 diffeomorphic)");
        app->add_option("--ncc-window", ncc_window, "local NCC window, 0 for global");
        app->add_flag("--diffeo", diffeo, "predict a stationary velocity field");
        app->add_option("--pool-modes", pool_modes, "pooling modes, comma separated");
        app->add_option("--pool-levels", pool_levels, "pooling windows, comma separated");
        app->add_option("--use-original", use_original, "concatenate the input pair in the last block");
    }

    ModelConfig model() const
    {
        ModelConfig c;
        c.rank = dim;
        c.channels = channels;
        c.convs_per_block = convs_per_block;
        c.diffeomorphic = diffeo;
        c.pyramid = parse_pyramid(pool_modes, pool_levels, parse_bool(use_original));
        return c;
    }

    LossConfig loss_config() const
    {
        LossConfig l;
        l.similarity = loss == "ncc" ? (ncc_window == 0 ? Similarity::ncc_global : Similarity::ncc) : Similarity::mse;
        l.ncc_window = ncc_window;
        l.lambda = lambda ? *lambda : diffeo ? 2.0 : loss == "ncc" ? 5.0 : 0.01;
        return l;
    }
};

void check_extents(const Dataset<float>& ds, std::size_t dim, std::size_t divisor)
{
    for (const auto* split : {&ds.train, &ds.val, &ds.test})
        for (const auto& s : *split) {
            if (s.moving.rank() != dim + 1)
                throw std::runtime_error("sample " + s.id + " has shape " + shape_string(s.moving.shape()) +
                                         ", expected rank " + std::to_string(dim));
            for (std::size_t e : s.moving.spatial())
                if (e % divisor != 0)
                    throw std::runtime_error("sample " + s.id + " extents " + shape_string(s.moving.shape()) +
                                             " are not divisible by " + std::to_string(divisor));
        }
}

/// Applies a flat key=value file to the subcommand's argument list. Each key
/// names a long option of the subcommand; file values come first so flags on
/// the command line override them.
std::vector<std::string> expand_config(CLI::App& app, std::vector<std::string> args)
{
    if (args.empty()) return args;
    CLI::App* sub = nullptr;
    for (auto* s : app.get_subcommands({}))
        if (s->get_name() == args[0]) sub = s;
    if (!sub) return args;

    std::optional<std::string> path;
    std::vector<std::string> rest{args[0]};
    for (std::size_t i = 1; i < args.size(); ++i) {
        if (args[i] == "--config") {
            if (i + 1 >= args.size()) throw UsageError("--config needs a file");
            path = args[++i];
        } else if (args[i].rfind("--config=", 0) == 0) {
            path = args[i].substr(9);
        } else {
            rest.push_back(args[i]);
        }
    }
    if (!path) return args;

    std::ifstream in(*path);
    if (!in) throw UsageError("cannot open config file " + *path);
    std::vector<std::string> injected{args[0]};
    std::size_t line_no = 0;
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw UsageError(*path + ":" + std::to_string(line_no) + ": expected key=value");
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
        };
        const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        const CLI::Option* opt = sub->get_option_no_throw("--" + key);
        if (key == "config" || !opt)
            throw UsageError(*path + ":" + std::to_string(line_no) + ": unknown key '" + key + "' for " + args[0]);
        if (opt->get_type_size() == 0) {
            if (parse_bool(value)) injected.push_back("--" + key);
        } else {
            injected.push_back("--" + key + "=" + value);
        }
    }
    injected.insert(injected.end(), rest.begin() + 1, rest.end());
    return injected;
}

int run(int argc, char** argv)
{
    CLI::App app{"Decoder-only deformable image registration"};
    app.require_subcommand(1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    const std::string config_help = "key=value file of option values; command-line flags take precedence";

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic registration dataset");
    std::string gen_out, gen_size = "64x64";
    std::size_t gen_count = 0, gen_structures = 8;
    std::optional<std::size_t> gen_val, gen_test;
    std::uint64_t gen_seed = 0;
    double gen_sigma = 6.0, gen_amplitude = 4.0;
    gen->add_option("--out", gen_out, "dataset directory")->required();
    gen->add_option("--count", gen_count, "total number of pairs")->required()->check(CLI::Range(3, 1 << 24));
    gen->add_option("--val-count", gen_val, "validation pairs (default count/10, at least 1)");
    gen->add_option("--test-count", gen_test, "test pairs (default count/10, at least 1)");
    gen->add_option("--size", gen_size, "extents HxW or DxHxW");
    gen->add_option("--seed", gen_seed)->required();
    gen->add_option("--sigma", gen_sigma, "displacement smoothing in voxels");
    gen->add_option("--amplitude", gen_amplitude, "maximum displacement in voxels");
    gen->add_option("--structures", gen_structures, "labeled structures per image");
    gen->add_option("--config", config_help);

    // train
    auto* tr = app.add_subcommand("train", "train a registration model");
    ModelOptions tr_model;
    tr_model.add_to(tr);
    std::string tr_data, tr_out, tr_arch = "lessnet", tr_freeze = "none";
    std::size_t tr_epochs = 20;
    double tr_lr = 1e-4;
    std::uint64_t tr_seed = 0;
    bool tr_time = false;
    tr->add_option("--data", tr_data, "dataset directory")->required();
    tr->add_option("--out", tr_out, "output directory")->required();
    tr->add_option("--epochs", tr_epochs);
    tr->add_option("--lr", tr_lr)->check(CLI::PositiveNumber);
    tr->add_option("--seed", tr_seed)->required();
    tr->add_option("--arch", tr_arch, "model architecture")->check(CLI::IsMember({"lessnet", "baseline"}));
    tr->add_option("--freeze", tr_freeze)->check(CLI::IsMember({"none", "encoder", "decoder_except_output"}));
    tr->add_flag("--time", tr_time, "record wall-clock seconds in the log");
    tr->add_option("--config", config_help);

    // register
    auto* reg = app.add_subcommand("register", "register one image pair with a trained model");
    std::string reg_model, reg_moving, reg_fixed, reg_out, reg_labels;
    bool reg_diffeo = false;
    reg->add_option("--model", reg_model, "checkpoint file")->required();
    reg->add_option("--moving", reg_moving, "moving image (LTF)")->required();
    reg->add_option("--fixed", reg_fixed, "fixed image (LTF)")->required();
    reg->add_option("--out", reg_out, "output directory")->required();
    reg->add_option("--moving-labels", reg_labels, "label map to warp with nearest-neighbour sampling");
    reg->add_flag("--diffeo", reg_diffeo, "treat the output as a velocity field and exponentiate it");
    reg->add_option("--config", config_help);

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
    std::string ev_model, ev_data, ev_split = "test", ev_out;
    ev->add_option("--model", ev_model, "checkpoint file")->required();
    ev->add_option("--data", ev_data, "dataset directory")->required();
    ev->add_option("--split", ev_split)->check(CLI::IsMember({"train", "val", "test"}));
    ev->add_option("--out", ev_out, "CSV report path (default stdout)");
    ev->add_option("--config", config_help);

    // ablate
    auto* ab = app.add_subcommand("ablate", "run the encoder-freeze or pooling ablation");
    ModelOptions ab_model;
    ab_model.add_to(ab);
    std::string ab_mode, ab_data, ab_out, ab_seeds, ab_table = "both";
    std::size_t ab_epochs = 20;
    double ab_lr = 1e-4;
    ab->add_option("--mode", ab_mode)->required()->check(CLI::IsMember({"freeze", "pooling"}));
    ab->add_option("--data", ab_data, "dataset directory")->required();
    ab->add_option("--out", ab_out, "output directory")->required();
    ab->add_option("--seeds", ab_seeds, "comma-separated seeds, at least 3")->required();
    ab->add_option("--epochs", ab_epochs);
    ab->add_option("--lr", ab_lr)->check(CLI::PositiveNumber);
    ab->add_option("--table", ab_table, "pooling tables to run")->check(CLI::IsMember({"levels", "modes", "both"}));
    ab->add_option("--config", config_help);

    // profile
    auto* pr = app.add_subcommand("profile", "print parameter and mult-add counts");
    std::size_t pr_dim = 2, pr_channels = 8, pr_convs = 1;
    std::string pr_size, pr_modes = "min,avg,max", pr_levels = "2,4,8", pr_original = "true";
    bool pr_diffeo = false;
    pr->add_option("--dim", pr_dim)->check(CLI::IsMember({2, 3}));
    pr->add_option("--channels", pr_channels)->check(CLI::PositiveNumber);
    pr->add_option("--convs-per-block", pr_convs)->check(CLI::PositiveNumber);
    pr->add_option("--size", pr_size, "extents HxW or DxHxW (default 64 per axis)");
    pr->add_option("--pool-modes", pr_modes);
    pr->add_option("--pool-levels", pr_levels);
    pr->add_option("--use-original", pr_original);
    pr->add_flag("--diffeo", pr_diffeo, "accepted for symmetry with train; does not change counts");
    pr->add_option("--config", config_help);

    std::vector<std::string> args(argv + 1, argv + argc);
    args = expand_config(app, std::move(args));
    std::reverse(args.begin(), args.end());
    try {
        app.parse(args);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        throw UsageError(e.what());
    }

    if (gen->parsed()) {
        SynthConfig sc;
        sc.num_structures = gen_structures;
        sc.sigma = gen_sigma;
        sc.amplitude = gen_amplitude;
        sc.extents = split(gen_size, 'x').size() == 3 ? parse_size(gen_size, 3) : parse_size(gen_size, 2);
        as_usage([&] { sc.validate(); });
        const std::size_t tenth = std::max<std::size_t>(1, gen_count / 10);
        DatasetCounts counts{0, gen_val.value_or(tenth), gen_test.value_or(tenth)};
        if (counts.val + counts.test >= gen_count) throw UsageError("--count leaves no training pairs");
        counts.train = gen_count - counts.val - counts.test;
        save_dataset(gen_out, generate_dataset<float>(sc, counts, gen_seed));
        std::printf("wrote %zu train, %zu val, %zu test pairs to %s\n", counts.train, counts.val, counts.test,
                    gen_out.c_str());
        return 0;
    }

    if (tr->parsed()) {
        AnyModel model = LessNet{tr_model.model()};
        if (tr_arch == "baseline") {
            if (tr_model.diffeo) throw UsageError("the baseline model has no diffeomorphic variant");
            model = Baseline{BaselineConfig{tr_model.dim}};
        }
        TrainConfig cfg;
        cfg.epochs = tr_epochs;
        cfg.learning_rate = tr_lr;
        cfg.seed = tr_seed;
        cfg.loss = tr_model.loss_config();
        cfg.record_time = tr_time;
        cfg.freeze = tr_freeze == "encoder" ? FreezeMode::encoder
                     : tr_freeze == "decoder_except_output" ? FreezeMode::decoder_except_output
                                                             : FreezeMode::none;
        const Dataset<float> data = load_dataset(tr_data);
        const TrainResult<float> result = std::visit(
            [&](const auto& m) {
                check_extents(data, m.rank(), m.divisor());
                return train(m, m.template init<float>(tr_seed), data, cfg);
            },
            model);
        const fs::path out(tr_out);
        save_checkpoint(out / "best.ltc", model, result.best);
        save_checkpoint(out / "final.ltc", model, result.final);
        write_text(out / "train_log.csv", to_text([&](std::ostream& os) { result.log.write_csv(os); }));
        std::printf("trained %zu epochs, best epoch %zu, checkpoints in %s\n", tr_epochs, result.best_epoch,
                    tr_out.c_str());
        return 0;
    }

    if (reg->parsed()) {
        const Checkpoint ck = load_checkpoint(reg_model);
        const Tensor<float> moving = io::read_tensor(reg_moving);
        const Tensor<float> fixed = io::read_tensor(reg_fixed);
        const Tensor<float> pair = stack_pair(moving, fixed);
        const bool diffeo = reg_diffeo || std::visit([](const auto& m) { return m.diffeomorphic(); }, ck.model);
        Tape<float> tape;
        const BoundParameters<float> bound(tape, ck.params, false);
        Var<float> field = std::visit([&](const auto& m) { return m.forward(tape, bound, pair); }, ck.model);
        if (diffeo) field = exponentiate(field);
        const Tensor<float>& u = field.value();
        const fs::path out(reg_out);
        io::write_tensor(out / "warped.ltf", warp_linear(moving, u));
        io::write_tensor(out / "displacement.ltf", u);
        io::write_tensor(out / "deformation.ltf", to_deformation(u).coords);
        if (!reg_labels.empty()) io::write_tensor(out / "warped_labels.ltf", warp_nearest(io::read_tensor(reg_labels), u));
        std::printf("wrote registration outputs to %s\n", reg_out.c_str());
        return 0;
    }

    if (ev->parsed()) {
        const Checkpoint ck = load_checkpoint(ev_model);
        const auto samples = load_split(ev_data, ev_split);
        if (samples.empty()) throw std::runtime_error("split '" + ev_split + "' is empty");
        const EvalReport report =
            std::visit([&](const auto& m) { return evaluate(m, ck.params, samples); }, ck.model);
        const std::string csv = to_text([&](std::ostream& os) { report.write_csv(os); });
        if (ev_out.empty()) std::cout << csv;
        else write_text(ev_out, csv);
        return 0;
    }

    if (ab->parsed()) {
        const auto seeds = parse_seeds(ab_seeds);
        if (seeds.size() < 3) throw UsageError("--seeds needs at least 3 seeds");
        TrainConfig cfg;
        cfg.epochs = ab_epochs;
        cfg.learning_rate = ab_lr;
        cfg.loss = ab_model.loss_config();
        const Dataset<float> data = load_dataset(ab_data);
        const fs::path out(ab_out);
        auto emit = [&](const ExperimentTable& t, const std::string& stem) {
            write_text(out / (stem + "_runs.csv"), to_text([&](std::ostream& os) { t.write_runs_csv(os); }));
            write_text(out / (stem + "_summary.csv"), to_text([&](std::ostream& os) { t.write_summary_csv(os); }));
        };
        if (ab_mode == "freeze") {
            if (ab_model.diffeo) throw UsageError("the freeze ablation uses the non-diffeomorphic baseline");
            check_extents(data, ab_model.dim, 16);
            emit(redundancy_experiment(data, BaselineConfig{ab_model.dim}, cfg, seeds), "freeze");
        } else {
            const ModelConfig base = ab_model.model();
            check_extents(data, base.rank, pyramid_divisor);
            if (ab_table != "modes") emit(pooling_experiment(data, base, cfg, pooling_level_variants(), seeds), "pooling_levels");
            if (ab_table != "levels") emit(pooling_experiment(data, base, cfg, pooling_mode_variants(), seeds), "pooling_modes");
        }
        std::printf("wrote %s ablation tables to %s\n", ab_mode.c_str(), ab_out.c_str());
        return 0;
    }

    if (pr->parsed()) {
        ModelConfig c;
        c.rank = pr_dim;
        c.channels = pr_channels;
        c.convs_per_block = pr_convs;
        c.diffeomorphic = pr_diffeo;
        c.pyramid = parse_pyramid(pr_modes, pr_levels, parse_bool(pr_original));
        const Shape spatial = pr_size.empty() ? Shape(pr_dim, 64) : parse_size(pr_size, pr_dim);
        std::uint64_t mult_adds = 0;
        as_usage([&] { mult_adds = count_mult_adds(c, spatial); });
        std::printf("params=%zu\nmult_adds=%llu\n", count_parameters(c), static_cast<unsigned long long>(mult_adds));
        return 0;
    }
    return 2;
}

} // namespace

int main(int argc, char** argv)
{
    try {
        return run(argc, argv);
    } catch (const UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
