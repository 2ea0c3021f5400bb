// Operator surface for the desk-scale representation-entanglement lab:
//   train   train a denoiser from a run config
//   sample  draw joint (latent, class-token) samples from a checkpoint
//   eval    fidelity + alignment evaluation of a checkpoint
//   flops   analytic forward-pass cost of the desk and XL-shaped models
//   ablate  entanglement-signal ablation matrix across seeds
// All artifacts land under <output_dir>/<run_name>-<config_hash>/.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "reg/ablate.hpp"
#include "reg/config.hpp"
#include "reg/metrics.hpp"
#include "reg/report.hpp"
#include "reg/sample.hpp"
#include "reg/train.hpp"

namespace fs = std::filesystem;
using namespace reg;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool seed_set = false;
    bool quiet = false;
};

RunConfig resolve_config(const CommonArgs& args) {
    RunConfig cfg = load_run_config(args.config_path);
    if (!args.out_dir.empty()) cfg.output_dir = args.out_dir;
    if (args.seed_set) {
        cfg.train.seed = args.seed;
        cfg.sampler.seed = args.seed;
    }
    return cfg;
}

std::string prepare_artifact_dir(const RunConfig& cfg) {
    const std::string dir = cfg.artifact_dir();
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw io_error("cannot create artifact dir: " + dir);
    save_run_config(dir + "/config.json", cfg);
    return dir;
}

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "run config file (JSON)")
        ->required();
    cmd->add_option("--out", args.out_dir, "override output directory");
    cmd->add_option("--seed", args.seed, "override train/sampler seeds")
        ->each([&args](const std::string&) { args.seed_set = true; });
    cmd->add_flag("--quiet", args.quiet, "suppress progress output");
}

int cmd_train(const CommonArgs& args, const std::string& resume_path) {
    const RunConfig cfg = resolve_config(args);
    const std::string dir = prepare_artifact_dir(cfg);
    DenoiserState resume_state;
    const DenoiserState* resume = nullptr;
    if (!resume_path.empty()) {
        resume_state = load_checkpoint(resume_path);
        resume = &resume_state;
    }
    const TrainRun run =
        run_training(cfg.mixture(), cfg.teacher(), cfg.net(), cfg.train,
                     cfg.schedule(), dir, resume, 0, args.quiet);
    svg::write_file(dir + "/loss_curve.svg",
                    loss_curve_svg_from_csv(run.metrics_path));
    if (!args.quiet)
        std::cout << "trained " << run.state.step << " steps -> "
                  << run.checkpoint_path << "\n";
    return 0;
}

int cmd_sample(const CommonArgs& args, std::string checkpoint, int label,
               int count) {
    const RunConfig cfg = resolve_config(args);
    const std::string dir = prepare_artifact_dir(cfg);
    if (checkpoint.empty()) checkpoint = dir + "/final.ckpt";
    const DenoiserState st = load_checkpoint(checkpoint);
    const Schedule sched = cfg.schedule();

    std::vector<Vec> zs, clss;
    std::vector<int> labels;
    for (int i = 0; i < count; ++i) {
        const int lab = label >= 0 ? label : i % st.cfg.num_classes;
        const SamplePath p = sample(st, lab, cfg.sampler, sched,
                                    static_cast<std::uint64_t>(i));
        zs.push_back(p.z);
        clss.push_back(p.cls);
        labels.push_back(lab);
    }
    write_sample_dump(dir + "/samples", zs, clss, labels, cfg.hash(),
                      cfg.sampler.seed);

    // First two latent coordinates, one scatter group per label.
    std::vector<svg::ScatterGroup> groups(
        static_cast<std::size_t>(st.cfg.num_classes));
    for (int k = 0; k < st.cfg.num_classes; ++k)
        groups[static_cast<std::size_t>(k)].name = "class " + std::to_string(k);
    for (std::size_t i = 0; i < zs.size(); ++i) {
        auto& g = groups[static_cast<std::size_t>(labels[i])];
        g.x.push_back(zs[i][0]);
        g.y.push_back(zs[i][1]);
    }
    std::vector<svg::ScatterGroup> nonempty;
    for (auto& g : groups)
        if (!g.x.empty()) nonempty.push_back(std::move(g));
    svg::write_file(dir + "/samples_scatter.svg",
                    svg::scatter("generated latents (first two coords)", "z[0]",
                                 "z[1]", nonempty));
    if (!args.quiet)
        std::cout << "wrote " << count << " samples under " << dir << "\n";
    return 0;
}

int cmd_eval(const CommonArgs& args, std::string checkpoint, int eval_samples) {
    const RunConfig cfg = resolve_config(args);
    const std::string dir = prepare_artifact_dir(cfg);
    if (checkpoint.empty()) checkpoint = dir + "/final.ckpt";
    const DenoiserState st = load_checkpoint(checkpoint);
    EvalOptions opt;
    opt.n_samples = eval_samples;
    const EvalReport rep = eval_run(st, cfg.mixture(), cfg.teacher(),
                                    cfg.sampler, cfg.schedule(), opt);
    write_eval_report(dir + "/eval", rep, cfg.hash());
    std::cout << "frechet_mean " << format_double(rep.frechet_mean)
              << " cls_cosine_mean " << format_double(rep.cls_cosine_mean)
              << " argmax_layer " << rep.argmax_layer << "\n";
    return 0;
}

int cmd_flops(const CommonArgs& args) {
    const RunConfig cfg = resolve_config(args);
    auto print = [](const char* name, const NetConfig& net) {
        const FlopsReport with = flops_report(net, true);
        const FlopsReport without = flops_report(net, false);
        std::cout << name << " tokens " << net.tokens << " without_cls "
                  << without.flops << " with_cls " << with.flops
                  << " delta_pct " << format_double(with.delta_pct) << "\n";
    };
    print("desk", cfg.net());
    print("xl_shape", xl_shape_config());
    return 0;
}

int cmd_ablate(const CommonArgs& args, int seeds, int jobs) {
    const RunConfig cfg = resolve_config(args);
    const std::string dir = prepare_artifact_dir(cfg);
    EvalOptions opt;
    opt.n_samples = std::max(96, cfg.d_vf + 2);
    opt.n_real = 256;
    opt.n_eval_cknna = 128;
    const AblationOutcome out = run_ablation(cfg, seeds, jobs, opt, args.quiet);
    write_ablation_outcome(dir + "/ablation", out);
    for (std::size_t i = 0; i < out.ranked.size(); ++i)
        std::cout << (i + 1) << " " << out.ranked[i].cell << " frechet "
                  << format_double(out.ranked[i].median_frechet) << " cls_cos "
                  << format_double(out.ranked[i].median_cls_cosine) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale joint latent/class-token denoising lab"};
    app.require_subcommand(1);

    CommonArgs targs, sargs, eargs, fargs, aargs;
    std::string resume_path, checkpoint_s, checkpoint_e;
    int label = -1, count = 64, eval_samples = 128, seeds = 5, jobs = 0;

    CLI::App* train = app.add_subcommand("train", "train from a run config");
    add_common(train, targs);
    train->add_option("--resume", resume_path, "checkpoint to resume from");

    CLI::App* samp = app.add_subcommand("sample", "sample from a checkpoint");
    add_common(samp, sargs);
    samp->add_option("--checkpoint", checkpoint_s,
                     "checkpoint path (default: <artifacts>/final.ckpt)");
    samp->add_option("--label", label, "class label (-1: cycle all classes)");
    samp->add_option("--count", count, "number of samples")
        ->check(CLI::PositiveNumber);

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(eval, eargs);
    eval->add_option("--checkpoint", checkpoint_e,
                     "checkpoint path (default: <artifacts>/final.ckpt)");
    eval->add_option("--eval-samples", eval_samples,
                     "generated samples per class");

    CLI::App* flops = app.add_subcommand("flops", "forward-pass cost report");
    add_common(flops, fargs);

    CLI::App* ablate =
        app.add_subcommand("ablate", "entanglement ablation matrix");
    add_common(ablate, aargs);
    ablate->add_option("--seeds", seeds, "seeds per cell")
        ->check(CLI::PositiveNumber);
    ablate->add_option("--jobs", jobs, "parallel jobs (0: hardware)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return cmd_train(targs, resume_path);
        if (samp->parsed()) return cmd_sample(sargs, checkpoint_s, label, count);
        if (eval->parsed()) return cmd_eval(eargs, checkpoint_e, eval_samples);
        if (flops->parsed()) return cmd_flops(fargs);
        if (ablate->parsed()) return cmd_ablate(aargs, seeds, jobs);
    } catch (const shape_error& e) {
        std::cerr << "error: shape: " << e.what() << "\n";
        return 2;
    } catch (const domain_error& e) {
        std::cerr << "error: domain: " << e.what() << "\n";
        return 3;
    } catch (const numeric_error& e) {
        std::cerr << "error: numeric: " << e.what() << "\n";
        return 4;
    } catch (const io_error& e) {
        std::cerr << "error: io: " << e.what() << "\n";
        return 5;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
