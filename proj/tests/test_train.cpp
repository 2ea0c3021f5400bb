#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "reg/train.hpp"

using namespace reg;

namespace {

struct World {
    MixtureSpec spec;
    TeacherSpec teacher;
    NetConfig net;
    Schedule sched;
    TrainConfig cfg;
};

// A small world sized for fast unit tests.
World tiny_world() {
    World w;
    w.spec = make_mixture_spec(3, 1, 2, 2, 0.15, 19);
    w.teacher = make_teacher(3, 12, 2, 2, 29);
    w.net.depth = 2;
    w.net.d_model = 16;
    w.net.heads = 2;
    w.net.tokens = 4;
    w.net.channels = 2;
    w.net.align_depth = 1;
    w.net.num_classes = 3;
    w.net.d_vf = 12;
    w.cfg.steps = 4;
    w.cfg.batch = 16;
    w.cfg.log_every = 1;
    w.cfg.checkpoint_every = 0;
    w.cfg.seed = 5;
    return w;
}

std::string tmpdir(const char* leaf) {
    auto p = std::filesystem::temp_directory_path() / leaf;
    std::filesystem::remove_all(p);
    return p.string();
}

}  // namespace

TEST_CASE("lr=0 leaves parameters and EMA untouched") {
    World w = tiny_world();
    w.cfg.lr = 0.0;
    DenoiserState st = init_state(w.net, w.cfg.seed);
    const Vec params0 = st.params;
    Rng data_rng = substream(w.cfg.seed, stream_tag::data, 0);
    const SampleBatch batch = sample_batch(w.spec, w.cfg.batch, data_rng);
    train_step(st, batch, w.teacher, w.sched, w.cfg, 1);
    CHECK(st.params == params0);
    CHECK(st.ema == params0);
    CHECK(st.step == 1);
}

TEST_CASE("ema_decay=0 tracks parameters exactly") {
    World w = tiny_world();
    w.cfg.ema_decay = 0.0;
    DenoiserState st = init_state(w.net, w.cfg.seed);
    for (int s = 0; s < 2; ++s) {
        Rng data_rng = substream(w.cfg.seed, stream_tag::data,
                                 static_cast<std::uint64_t>(s));
        const SampleBatch batch = sample_batch(w.spec, w.cfg.batch, data_rng);
        train_step(st, batch, w.teacher, w.sched, w.cfg, 1);
        CHECK(st.ema == st.params);
    }
}

TEST_CASE("one step is deterministic and thread-count invariant") {
    World w = tiny_world();
    DenoiserState a = init_state(w.net, w.cfg.seed);
    DenoiserState b = a;
    Rng data_rng = substream(w.cfg.seed, stream_tag::data, 0);
    const SampleBatch batch = sample_batch(w.spec, w.cfg.batch, data_rng);

    const StepReport ra = train_step(a, batch, w.teacher, w.sched, w.cfg, 1);
    const StepReport rb = train_step(b, batch, w.teacher, w.sched, w.cfg, 2);
    CHECK(ra.loss_total == rb.loss_total);
    CHECK(ra.grad_norm == rb.grad_norm);
    CHECK(a.params == b.params);
    CHECK(a.ema == b.ema);

    // Same checkpoint, same step twice: identical report.
    DenoiserState c = init_state(w.net, w.cfg.seed);
    const StepReport r1 = train_step(c, batch, w.teacher, w.sched, w.cfg, 1);
    DenoiserState d = init_state(w.net, w.cfg.seed);
    const StepReport r2 = train_step(d, batch, w.teacher, w.sched, w.cfg, 1);
    CHECK(r1.loss_total == r2.loss_total);
    CHECK(r1.loss_pred_z == r2.loss_pred_z);
    CHECK(r1.loss_repa == r2.loss_repa);
    CHECK(r1.grad_norm == r2.grad_norm);
}

TEST_CASE("training reduces the loss on the tiny world") {
    World w = tiny_world();
    w.cfg.steps = 60;
    w.cfg.lr = 3e-3;
    DenoiserState st = init_state(w.net, w.cfg.seed);
    double first = 0.0, last = 0.0;
    for (std::int64_t s = 0; s < w.cfg.steps; ++s) {
        Rng data_rng = substream(w.cfg.seed, stream_tag::data,
                                 static_cast<std::uint64_t>(s));
        const SampleBatch batch = sample_batch(w.spec, w.cfg.batch, data_rng);
        const StepReport r = train_step(st, batch, w.teacher, w.sched, w.cfg, 2);
        if (s == 0) first = r.loss_total;
        last = r.loss_total;
    }
    CHECK(last < first);
}

TEST_CASE("steps=0 writes the initial checkpoint and a bare CSV") {
    World w = tiny_world();
    w.cfg.steps = 0;
    const std::string dir = tmpdir("reg_train_zero");
    const TrainRun run = run_training(w.spec, w.teacher, w.net, w.cfg, w.sched,
                                      dir, nullptr, 1);
    CHECK(std::filesystem::exists(run.checkpoint_path));
    std::ifstream csv(run.metrics_path);
    std::string line;
    REQUIRE(std::getline(csv, line));
    CHECK(line == metrics_csv_header());
    CHECK_FALSE(std::getline(csv, line));
    std::filesystem::remove_all(dir);
}

TEST_CASE("resume continues the run bit-identically") {
    World w = tiny_world();
    w.cfg.steps = 6;
    const std::string dir_a = tmpdir("reg_train_straight");
    const TrainRun straight = run_training(w.spec, w.teacher, w.net, w.cfg,
                                           w.sched, dir_a, nullptr, 1);

    TrainConfig half = w.cfg;
    half.steps = 3;
    const std::string dir_b = tmpdir("reg_train_half");
    const TrainRun part = run_training(w.spec, w.teacher, w.net, half, w.sched,
                                       dir_b, nullptr, 1);
    const DenoiserState mid = load_checkpoint(part.checkpoint_path);
    const std::string dir_c = tmpdir("reg_train_resumed");
    const TrainRun resumed = run_training(w.spec, w.teacher, w.net, w.cfg,
                                          w.sched, dir_c, &mid, 1);

    CHECK(resumed.state.params == straight.state.params);
    CHECK(resumed.state.ema == straight.state.ema);
    CHECK(resumed.last_report.loss_total ==
          doctest::Approx(straight.last_report.loss_total).epsilon(1e-10));
    CHECK(resumed.last_report.loss_total == straight.last_report.loss_total);
    for (const auto& d : {dir_a, dir_b, dir_c}) std::filesystem::remove_all(d);
}

TEST_CASE("identical configs produce identical metrics CSV bodies") {
    World w = tiny_world();
    const std::string dir_a = tmpdir("reg_train_csv_a");
    const std::string dir_b = tmpdir("reg_train_csv_b");
    run_training(w.spec, w.teacher, w.net, w.cfg, w.sched, dir_a, nullptr, 2);
    run_training(w.spec, w.teacher, w.net, w.cfg, w.sched, dir_b, nullptr, 1);
    std::ifstream fa(dir_a + "/metrics.csv"), fb(dir_b + "/metrics.csv");
    std::string sa((std::istreambuf_iterator<char>(fa)),
                   std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(fb)),
                   std::istreambuf_iterator<char>());
    CHECK(sa == sb);
    CHECK(!sa.empty());
    std::filesystem::remove_all(dir_a);
    std::filesystem::remove_all(dir_b);
}
