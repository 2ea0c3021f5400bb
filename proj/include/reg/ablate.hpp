#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include "reg/config.hpp"
#include "reg/metrics.hpp"
#include "reg/svg.hpp"
#include "reg/train.hpp"

namespace reg {

// One cell of the entanglement-signal ablation matrix.
struct AblationCell {
    std::string name;
    ClsVariant variant;
    double lambda;
};

// The seven-cell matrix: the full mechanism, alignment-only, the plain
// baseline, the learnable-token control, entanglement without alignment, and
// the two averaged-signal variants.
inline std::vector<AblationCell> ablation_matrix(double lambda) {
    return {
        {"reg", ClsVariant::TeacherCls, lambda},
        {"repa_only", ClsVariant::None, lambda},
        {"sit_baseline", ClsVariant::None, 0.0},
        {"olt", ClsVariant::LearnableToken, lambda},
        {"entangle_only", ClsVariant::TeacherCls, 0.0},
        {"avg_teacher_feature", ClsVariant::AvgTeacherFeature, lambda},
        {"avg_latent_feature", ClsVariant::AvgLatentFeature, lambda},
    };
}

struct AblationRow {
    std::string cell;
    std::uint64_t seed = 0;
    double frechet = 0.0;
    double cls_cosine = 0.0;  // NaN when the cell has no d_vf-sized token
    double final_loss = 0.0;
};

struct AblationSummary {
    std::string cell;
    double median_frechet = 0.0;
    double median_cls_cosine = 0.0;
};

struct AblationOutcome {
    std::vector<AblationRow> rows;        // cell-major, seed-minor
    std::vector<AblationSummary> ranked;  // ascending median Frechet
};

namespace detail {

inline double median(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

// Trains and evaluates every matrix cell for n_seeds seeds at the step budget
// in base.train. Cells run in parallel jobs with one thread each; results
// merge deterministically by (cell, seed). Evaluation always samples without
// guidance so cells are compared on their bare conditional fields.
inline AblationOutcome run_ablation(const RunConfig& base, int n_seeds,
                                    int jobs, const EvalOptions& eval_opt,
                                    bool quiet = true) {
    require_domain(n_seeds >= 1, "run_ablation: n_seeds >= 1");
    const std::vector<AblationCell> cells = ablation_matrix(base.train.loss_weights.lambda);
    const MixtureSpec spec = base.mixture();
    const TeacherSpec teacher = base.teacher();
    const Schedule sched = base.schedule();

    const int total = static_cast<int>(cells.size()) * n_seeds;
    std::vector<AblationRow> rows(static_cast<std::size_t>(total));
    std::atomic<int> next{0};
    std::atomic<int> done{0};

    auto job = [&]() {
        for (;;) {
            const int idx = next.fetch_add(1);
            if (idx >= total) break;
            const int ci = idx / n_seeds;
            const int si = idx % n_seeds;
            const AblationCell& cell = cells[static_cast<std::size_t>(ci)];

            NetConfig net = base.net();
            net.cls_variant = cell.variant;
            TrainConfig tc = base.train;
            tc.loss_weights.lambda = cell.lambda;
            tc.seed = base.train.seed + static_cast<std::uint64_t>(si);

            DenoiserState st = init_state(net, tc.seed);
            for (std::int64_t s = 0; s < tc.steps; ++s) {
                Rng dr = substream(tc.seed, stream_tag::data,
                                   static_cast<std::uint64_t>(s));
                const SampleBatch batch = sample_batch(spec, tc.batch, dr);
                const StepReport rep =
                    train_step(st, batch, teacher, sched, tc, 1);
                if (s + 1 == tc.steps)
                    rows[static_cast<std::size_t>(idx)].final_loss = rep.loss_total;
            }

            SamplerConfig scfg = base.sampler;
            scfg.cfg_scale = 1.0;
            EvalOptions opt = eval_opt;
            opt.threads = 1;
            const EvalReport rep = eval_run(st, spec, teacher, scfg, sched, opt);

            AblationRow& row = rows[static_cast<std::size_t>(idx)];
            row.cell = cell.name;
            row.seed = tc.seed;
            row.frechet = rep.frechet_mean;
            row.cls_cosine = rep.cls_cosine_mean;
            const int d = done.fetch_add(1) + 1;
            if (!quiet)
                std::cerr << "[ablate] " << d << "/" << total << " " << cell.name
                          << " seed " << tc.seed << " frechet " << row.frechet
                          << "\n";
        }
    };

    if (jobs <= 0) jobs = static_cast<int>(std::thread::hardware_concurrency());
    jobs = std::clamp(jobs, 1, total);
    if (jobs == 1) {
        job();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < jobs; ++w) pool.emplace_back(job);
        for (auto& th : pool) th.join();
    }

    AblationOutcome out;
    out.rows = rows;
    for (std::size_t ci = 0; ci < cells.size(); ++ci) {
        std::vector<double> fr, cc;
        for (int si = 0; si < n_seeds; ++si) {
            const AblationRow& r = rows[ci * static_cast<std::size_t>(n_seeds) +
                                        static_cast<std::size_t>(si)];
            fr.push_back(r.frechet);
            if (std::isfinite(r.cls_cosine)) cc.push_back(r.cls_cosine);
        }
        out.ranked.push_back(
            {cells[ci].name, detail::median(fr), detail::median(cc)});
    }
    std::stable_sort(out.ranked.begin(), out.ranked.end(),
                     [](const AblationSummary& a, const AblationSummary& b) {
                         return a.median_frechet < b.median_frechet;
                     });
    return out;
}

inline void write_ablation_outcome(const std::string& dir,
                                   const AblationOutcome& out) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw io_error("write_ablation_outcome: cannot create " + dir);
    {
        std::ofstream os(dir + "/ablation.csv");
        os << "cell,seed,frechet,cls_cosine,final_loss\n";
        for (const auto& r : out.rows)
            os << r.cell << ',' << r.seed << ',' << format_double(r.frechet)
               << ',' << format_double(r.cls_cosine) << ','
               << format_double(r.final_loss) << "\n";
    }
    {
        std::ofstream os(dir + "/ablation_summary.csv");
        os << "rank,cell,median_frechet,median_cls_cosine\n";
        for (std::size_t i = 0; i < out.ranked.size(); ++i)
            os << (i + 1) << ',' << out.ranked[i].cell << ','
               << format_double(out.ranked[i].median_frechet) << ','
               << format_double(out.ranked[i].median_cls_cosine) << "\n";
    }
    std::vector<std::string> labels;
    std::vector<double> values;
    for (const auto& s : out.ranked) {
        labels.push_back(s.cell);
        values.push_back(s.median_frechet);
    }
    svg::write_file(dir + "/ablation_frechet.svg",
                    svg::bar_chart("median frechet by cell", "frechet", labels,
                                   values));
}

}  // namespace reg
