// Smallest end-to-end training loop: a 3-class world, a depth-2 denoiser,
// 300 steps, loss printed every 50.
#include <cstdio>

#include "reg/train.hpp"

using namespace reg;

int main() {
    const MixtureSpec spec = make_mixture_spec(3, 1, 2, 2, 0.15, 19);
    const TeacherSpec teacher = make_teacher(3, 16, 2, 2, 29);
    NetConfig net;
    net.depth = 2;
    net.d_model = 32;
    net.heads = 4;
    net.tokens = 4;
    net.channels = 2;
    net.align_depth = 1;
    net.num_classes = 3;
    net.d_vf = 16;
    const Schedule sched;
    TrainConfig cfg;
    cfg.steps = 300;
    cfg.batch = 32;
    cfg.lr = 1e-3;

    DenoiserState st = init_state(net, cfg.seed);
    for (std::int64_t s = 0; s < cfg.steps; ++s) {
        Rng dr = substream(cfg.seed, stream_tag::data, static_cast<std::uint64_t>(s));
        const SampleBatch batch = sample_batch(spec, cfg.batch, dr);
        const StepReport r = train_step(st, batch, teacher, sched, cfg);
        if (s % 50 == 0 || s + 1 == cfg.steps)
            std::printf("step %4lld  total %.4f  latent %.4f  align %+.4f\n",
                        static_cast<long long>(s), r.loss_total, r.loss_pred_z,
                        r.loss_repa);
    }
    return 0;
}
