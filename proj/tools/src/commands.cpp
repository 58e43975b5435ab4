#include "commands.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>

#include "settings.hpp"
#include "transmat/checkpoint.hpp"
#include "transmat/gradcheck.hpp"
#include "transmat/image_io.hpp"
#include "transmat/inference.hpp"
#include "transmat/metrics.hpp"
#include "transmat/synthetic.hpp"

namespace transmat::cli {

namespace fs = std::filesystem;

bool env_seed(uint64_t& seed) {
    const char* v = std::getenv("TRANSMAT_SEED");
    if (!v || !*v) return false;
    const std::string s(v);
    const auto r = std::from_chars(s.data(), s.data() + s.size(), seed);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
        throw ConfigError("TRANSMAT_SEED must be an unsigned integer, got '" + s + "'");
    }
    return true;
}

namespace {

// Experiment flags shared by train, eval and infer. Values are kept as text and
// applied after the config file, so flags win over file entries.
struct ExperimentFlags {
    std::string config_file;
    std::map<std::string, std::string> values;
    std::map<std::string, CLI::Option*> options;
    bool no_tgtb = false;
    bool no_mgf = false;

    void attach(CLI::App& app) {
        app.add_option("--config", config_file, "experiment config file ([section] key = value)")
            ->check(CLI::ExistingFile);
        for (const auto& s : settings()) {
            const std::string help = s.boolean ? s.help + " (a bare flag means true)" : s.help;
            auto* opt = app.add_option("--" + s.key, values[s.key], help)->group(s.section + " settings");
            if (s.boolean) opt->expected(0, 1)->default_str("true");
            options[s.key] = opt;
        }
        app.add_flag("--no-tgtb", no_tgtb, "same as --use_tgtb=false")->group("network settings");
        app.add_flag("--no-mgf", no_mgf, "same as --use_mgf=false")->group("network settings");
    }

    bool given(const std::string& key) const { return options.at(key)->count() > 0; }

    bool any_network_given() const {
        if (!config_file.empty() || no_tgtb || no_mgf) return true;
        for (const auto& s : settings())
            if (s.section == "network" && given(s.key)) return true;
        return false;
    }

    // Setting value from a flag given without a value ("--use_mgf").
    std::string value(const Setting& s) const {
        const std::string& v = values.at(s.key);
        return s.boolean && v.empty() ? "true" : v;
    }

    void apply(train::ExperimentConfig& cfg, bool seed_from_env) const {
        if (!config_file.empty()) apply_config_file(config_file, cfg);
        uint64_t seed = 0;
        if (seed_from_env && env_seed(seed)) cfg.train.seed = seed;
        for (const auto& s : settings()) {
            if (!given(s.key)) continue;
            try {
                s.set(cfg, value(s));
            } catch (const ConfigError& e) {
                throw ConfigError(std::string("--") + s.key + ": " + e.what());
            }
        }
        if (no_tgtb) cfg.network.encoder.use_tgtb = false;
        if (no_mgf) cfg.network.decoder.use_mgf = false;
    }
};

struct InferenceFlags {
    InferenceOptions opts;

    void attach(CLI::App& app) {
        app.add_option("--max-side", opts.max_side, "images with a longer side are tiled")->capture_default_str();
        app.add_option("--tile", opts.tile, "tile side (multiple of 32)")->capture_default_str();
        app.add_option("--overlap", opts.overlap, "tile overlap in pixels")->capture_default_str();
        app.add_flag("--trust-trimap", opts.trust_trimap, "force FG pixels to 1 and BG pixels to 0");
    }
};

// Network for a checkpoint. Without network overrides the stored config is used;
// with them, the resulting config must hash-match unless --force.
std::unique_ptr<Network<float>> load_network(const fs::path& ckpt, const ExperimentFlags& flags, bool force, std::ostream& err) {
    const CheckpointHeader header = read_checkpoint_header(ckpt);
    train::ExperimentConfig cfg;
    cfg.network = header.network_config();
    if (flags.any_network_given()) flags.apply(cfg, false);
    auto net = std::make_unique<Network<float>>(cfg.network);
    if (force && net->config().hash() != header.config_hash) {
        err << "warning: loading " << ckpt.string() << " into a different config (--force)\n";
    }
    load_checkpoint(ckpt, *net, force);
    return net;
}

std::string checkpoint_name(int64_t iteration) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "checkpoint_%08lld.ckpt", static_cast<long long>(iteration));
    return buf;
}

int cmd_train(const ExperimentFlags& flags, const fs::path& data_dir, const fs::path& out_dir,
              const std::string& resume, bool force, int64_t log_every, std::ostream& out, std::ostream& err) {
    train::ExperimentConfig cfg;
    flags.apply(cfg, true);
    cfg.set_seed(cfg.train.seed);
    cfg.validate();
    const auto manifest = data::load_manifest(data_dir);
    for (const auto& w : manifest.warnings) err << "warning: " << w << "\n";
    if (manifest.entries.empty()) throw DataError("no usable samples under " + data_dir.string());

    Network<float> net(cfg.network);
    int64_t start = 0;
    if (!resume.empty()) start = load_checkpoint(resume, net, force);

    fs::create_directories(out_dir);
    {
        std::ofstream c(out_dir / "config.ini");
        c << to_config_text(cfg);
    }
    std::ofstream log(out_dir / "loss.log", resume.empty() ? std::ios::trunc : std::ios::app);
    if (!log) throw DataError("cannot write " + (out_dir / "loss.log").string());

    out << "parameters " << net.parameter_count() << ", config " << std::hex << net.config().hash() << std::dec
        << ", iterations " << start << ".." << cfg.train.iterations << "\n";
    train::TrainHooks hooks;
    hooks.on_record = [&](const train::LossRecord& r) {
        const std::string line = r.to_line();
        log << line << "\n";
        if (log_every > 0 && (r.iteration % log_every == 0 || r.iteration + 1 == cfg.train.iterations)) {
            out << line << "\n" << std::flush;
        }
    };
    hooks.on_checkpoint = [&](int64_t it) {
        log.flush();
        save_checkpoint(out_dir / checkpoint_name(it), net, it);
        if (it == cfg.train.iterations) save_checkpoint(out_dir / "final.ckpt", net, it);
    };
    train::train(net, manifest, cfg, hooks, start);
    return kOk;
}

int cmd_eval(const ExperimentFlags& flags, const InferenceFlags& inf, const fs::path& ckpt, const fs::path& data_dir,
             const std::string& out_path, bool whole_image, bool force, std::ostream& out, std::ostream& err) {
    const auto net = load_network(ckpt, flags, force, err);
    train::ExperimentConfig cfg;
    flags.apply(cfg, false);
    const auto manifest = data::load_manifest(data_dir);
    for (const auto& w : manifest.warnings) err << "warning: " << w << "\n";
    data::SampleStream stream(manifest, cfg.data, data::Split::eval);
    if (stream.size() == 0) throw DataError("no usable samples under " + data_dir.string());

    std::ofstream file;
    if (!out_path.empty()) {
        file.open(out_path, std::ios::trunc);
        if (!file) throw DataError("cannot write " + out_path);
    }
    std::ostream& sink = out_path.empty() ? out : file;
    std::vector<metrics::MetricReport> reports;
    for (int64_t i = 0; i < stream.size(); ++i) {
        const MattingSample s = stream.at(i);
        const AlphaMatte pred = predict(*net, s.image, s.trimap, inf.opts);
        reports.push_back(metrics::evaluate(pred, s, whole_image));
        sink << reports.back().to_json_line() << "\n";
    }
    sink << metrics::mean_report(reports).to_json_line() << "\n";
    return kOk;
}

int cmd_infer(const ExperimentFlags& flags, const InferenceFlags& inf, const fs::path& ckpt, const fs::path& image,
              const fs::path& trimap, const fs::path& out_path, bool force, std::ostream& err) {
    if (!fs::exists(image)) throw DataError("image file not found: " + image.string());
    if (!fs::exists(trimap)) throw DataError("trimap file not found: " + trimap.string());
    const auto net = load_network(ckpt, flags, force, err);
    const ImageRGB img = io::read_rgb(image);
    const Trimap tri = io::read_trimap(trimap);
    if (!img.same_shape(tri)) {
        throw DataError("image " + image.string() + " and trimap " + trimap.string() + " differ in size");
    }
    io::write_alpha16(out_path, predict(*net, img, tri, inf.opts));
    return kOk;
}

int cmd_gradcheck(const std::vector<std::string>& components, gradcheck::Options opts, bool seed_given, bool verbose,
                  std::ostream& out) {
    uint64_t seed = 0;
    if (!seed_given && env_seed(seed)) opts.seed = seed;
    std::vector<std::string> names = components;
    if (names.empty() || (names.size() == 1 && names[0] == "all")) names = gradcheck::components();
    for (const auto& n : names) {
        const auto& known = gradcheck::components();
        if (std::find(known.begin(), known.end(), n) == known.end()) {
            throw ConfigError("unknown gradcheck component '" + n + "'");
        }
    }
    bool ok = true;
    for (const auto& n : names) {
        const auto rep = gradcheck::run(n, opts);
        out << rep.summary() << "\n";
        for (const auto& t : rep.tensors) {
            if (verbose || t.rel_error > rep.tolerance) {
                char buf[256];
                std::snprintf(buf, sizeof buf, "  %-44s rel %.3e  probed %lld  refined %lld  skipped %lld%s\n",
                              t.name.c_str(), t.rel_error, static_cast<long long>(t.probed),
                              static_cast<long long>(t.refined), static_cast<long long>(t.skipped),
                              t.rel_error > rep.tolerance ? "  <- FAIL" : "");
                out << buf;
            }
        }
        ok = ok && rep.passed;
    }
    return ok ? kOk : kNumerical;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Trimap-guided alpha matting: training, evaluation and inference", "transmat"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "transmat 0.1.0");

    // train
    auto* train_cmd = app.add_subcommand("train", "train a network on a dataset directory");
    ExperimentFlags train_flags;
    std::string train_data, train_out, resume;
    bool train_force = false;
    int64_t log_every = 100;
    train_cmd->add_option("--data", train_data, "dataset root with fg/, alpha/, bg/")->required();
    train_cmd->add_option("--out", train_out, "output directory for loss.log, config.ini, checkpoints")->required();
    train_cmd->add_option("--resume", resume, "continue from a checkpoint");
    train_cmd->add_flag("--force", train_force, "resume even if the checkpoint config differs");
    train_cmd->add_option("--log-every", log_every, "print every n-th loss record; 0 silences")->capture_default_str();
    train_flags.attach(*train_cmd);

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint; one JSON line per sample, then the mean");
    ExperimentFlags eval_flags;
    InferenceFlags eval_inf;
    std::string eval_ckpt, eval_data, eval_out;
    bool whole_image = false, eval_force = false;
    eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
    eval_cmd->add_option("--data", eval_data, "dataset root")->required();
    eval_cmd->add_option("--out", eval_out, "write JSON lines here instead of stdout");
    eval_cmd->add_flag("--whole-image", whole_image, "score every pixel instead of the UNK region");
    eval_cmd->add_flag("--force", eval_force, "load the checkpoint even if the config differs");
    eval_inf.attach(*eval_cmd);
    eval_flags.attach(*eval_cmd);

    // infer
    auto* infer_cmd = app.add_subcommand("infer", "predict one alpha matte as a 16-bit PNG");
    ExperimentFlags infer_flags;
    InferenceFlags infer_inf;
    std::string infer_ckpt, image, trimap, infer_out;
    bool infer_force = false;
    infer_cmd->add_option("--checkpoint", infer_ckpt, "checkpoint file")->required();
    infer_cmd->add_option("--image", image, "RGB image")->required();
    infer_cmd->add_option("--trimap", trimap, "trimap image (0 / 128 / 255)")->required();
    infer_cmd->add_option("--out", infer_out, "output PNG")->required();
    infer_cmd->add_flag("--force", infer_force, "load the checkpoint even if the config differs");
    infer_inf.attach(*infer_cmd);
    infer_flags.attach(*infer_cmd);

    // gradcheck
    auto* gc_cmd = app.add_subcommand("gradcheck", "compare analytic gradients with central differences");
    std::vector<std::string> components;
    gradcheck::Options gc_opts;
    bool gc_verbose = false;
    gc_cmd->add_option("component", components, "components to check, or 'all'");
    auto* gc_seed = gc_cmd->add_option("--seed", gc_opts.seed, "input seed");
    gc_cmd->add_option("--eps", gc_opts.eps, "finite-difference step")->capture_default_str();
    gc_cmd->add_option("--max-entries", gc_opts.max_entries, "entries probed per tensor; 0 = component default");
    gc_cmd->add_option("--corrupt", gc_opts.corrupt, "perturb the analytic gradient of this tensor");
    gc_cmd->add_flag("--verbose,-v", gc_verbose, "print every tensor");

    // make-synthetic
    auto* syn_cmd = app.add_subcommand("make-synthetic", "write a small synthetic dataset");
    synthetic::SyntheticConfig syn;
    std::string syn_out;
    int64_t syn_size = 0;
    syn_cmd->add_option("--out", syn_out, "dataset root to create")->required();
    syn_cmd->add_option("--count", syn.count, "foreground samples")->capture_default_str();
    syn_cmd->add_option("--backgrounds", syn.backgrounds, "background images")->capture_default_str();
    syn_cmd->add_option("--size", syn_size, "image side; overrides --height and --width");
    syn_cmd->add_option("--height", syn.height)->capture_default_str();
    syn_cmd->add_option("--width", syn.width)->capture_default_str();
    syn_cmd->add_option("--edge-width", syn.edge_width, "soft edge width in pixels")->capture_default_str();
    auto* syn_seed = syn_cmd->add_option("--seed", syn.seed, "generator seed");

    std::vector<std::string> argv(args.rbegin(), args.rend());
    try {
        app.parse(argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*train_cmd) return cmd_train(train_flags, train_data, train_out, resume, train_force, log_every, out, err);
        if (*eval_cmd) {
            return cmd_eval(eval_flags, eval_inf, eval_ckpt, eval_data, eval_out, whole_image, eval_force, out, err);
        }
        if (*infer_cmd) return cmd_infer(infer_flags, infer_inf, infer_ckpt, image, trimap, infer_out, infer_force, err);
        if (*gc_cmd) return cmd_gradcheck(components, gc_opts, gc_seed->count() > 0, gc_verbose, out);
        if (*syn_cmd) {
            uint64_t seed = 0;
            if (syn_seed->count() == 0 && env_seed(seed)) syn.seed = seed;
            if (syn_size > 0) syn.height = syn.width = syn_size;
            const auto m = synthetic::write_dataset(syn_out, syn);
            out << "wrote " << m.entries.size() << " samples and " << m.backgrounds.size() << " backgrounds to "
                << syn_out << "\n";
            return kOk;
        }
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const NumericalError& e) {
        err << "numerical failure: " << e.what() << "\n";
        return kNumerical;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << "\n";
        return kDataError;
    } catch (const ShapeError& e) {
        err << "data error: " << e.what() << "\n";
        return kDataError;
    } catch (const fs::filesystem_error& e) {
        err << "data error: " << e.what() << "\n";
        return kDataError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kDataError;
    }
    return kUsage;
}

}  // namespace transmat::cli
