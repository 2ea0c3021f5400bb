#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "reg/common.hpp"
#include "reg/loss.hpp"
#include "reg/net.hpp"
#include "reg/sample.hpp"
#include "reg/schedule.hpp"
#include "reg/synthdata.hpp"
#include "reg/teacher.hpp"
#include "reg/train.hpp"

namespace reg {

inline constexpr int kRunConfigVersion = 1;

// Complete, serializable description of a run. Derived quantities (mixture
// means, codebooks, token counts) are reconstructed from the generator fields
// on load, so the file stays small and the canonical form well-defined. The
// canonical serialization (sorted keys, shortest round-trip numbers) defines
// the config hash that names every artifact directory.
struct RunConfig {
    std::string run_name = "desk";
    std::string output_dir = "runs";

    // mixture
    int num_classes = 8;
    int components_per_class = 1;
    int grid = 4;
    int channels = 2;
    double component_std = 0.15;
    std::uint64_t mixture_seed = 17;

    // teacher
    int d_vf = 64;
    double teacher_gamma = 0.25;
    std::uint64_t teacher_seed = 23;

    // net
    int depth = 4;
    int d_model = 64;
    int heads = 4;
    int align_depth = 2;
    ClsVariant cls_variant = ClsVariant::TeacherCls;
    bool use_pos_embed = true;

    // schedule
    ScheduleKind schedule_kind = ScheduleKind::Linear;
    double t_min = 1e-4;
    double t_max = 1.0;

    TrainConfig train;
    SamplerConfig sampler;

    MixtureSpec mixture() const {
        return make_mixture_spec(num_classes, components_per_class, grid,
                                 channels, component_std, mixture_seed);
    }
    TeacherSpec teacher() const {
        TeacherSpec t = make_teacher(num_classes, d_vf, grid, channels,
                                     teacher_seed);
        t.gamma = teacher_gamma;
        return t;
    }
    NetConfig net() const {
        NetConfig n;
        n.depth = depth;
        n.d_model = d_model;
        n.heads = heads;
        n.tokens = grid * grid;
        n.channels = channels;
        n.align_depth = align_depth;
        n.num_classes = num_classes;
        n.d_vf = d_vf;
        n.cls_variant = cls_variant;
        n.use_pos_embed = use_pos_embed;
        n.validate();
        return n;
    }
    Schedule schedule() const {
        Schedule s;
        s.kind = schedule_kind;
        s.t_min = t_min;
        s.t_max = t_max;
        return s;
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["version"] = kRunConfigVersion;
        j["run_name"] = run_name;
        j["output_dir"] = output_dir;
        j["mixture"] = {{"num_classes", num_classes},
                        {"components_per_class", components_per_class},
                        {"grid", grid},
                        {"channels", channels},
                        {"component_std", component_std},
                        {"seed", mixture_seed}};
        j["teacher"] = {{"d_vf", d_vf},
                        {"gamma", teacher_gamma},
                        {"seed", teacher_seed}};
        j["net"] = {{"depth", depth},
                    {"d_model", d_model},
                    {"heads", heads},
                    {"align_depth", align_depth},
                    {"cls_variant", to_string(cls_variant)},
                    {"use_pos_embed", use_pos_embed}};
        j["schedule"] = {{"kind", to_string(schedule_kind)},
                         {"t_min", t_min},
                         {"t_max", t_max}};
        j["train"] = {{"steps", train.steps},
                      {"batch", train.batch},
                      {"lr", train.lr},
                      {"adam_beta1", train.adam_beta1},
                      {"adam_beta2", train.adam_beta2},
                      {"adam_eps", train.adam_eps},
                      {"weight_decay", train.weight_decay},
                      {"ema_decay", train.ema_decay},
                      {"label_dropout", train.label_dropout},
                      {"beta", train.loss_weights.beta},
                      {"lambda", train.loss_weights.lambda},
                      {"seed", train.seed},
                      {"log_every", train.log_every},
                      {"checkpoint_every", train.checkpoint_every}};
        j["sampler"] = {{"kind", to_string(sampler.kind)},
                        {"steps", sampler.steps},
                        {"cfg_scale", sampler.cfg_scale},
                        {"cfg_lo", sampler.cfg_lo},
                        {"cfg_hi", sampler.cfg_hi},
                        {"guide_cls_channel", sampler.guide_cls_channel},
                        {"t_switch", sampler.t_switch},
                        {"seed", sampler.seed}};
        return j;
    }

    static RunConfig from_json(const nlohmann::json& j) {
        if (!j.contains("version") || !j["version"].is_number_integer())
            throw io_error("run config: missing version");
        if (j["version"].get<int>() != kRunConfigVersion)
            throw io_error("run config: unsupported version " +
                           j["version"].dump());
        RunConfig c;
        try {
            c.run_name = j.at("run_name").get<std::string>();
            c.output_dir = j.at("output_dir").get<std::string>();
            const auto& m = j.at("mixture");
            c.num_classes = m.at("num_classes").get<int>();
            c.components_per_class = m.at("components_per_class").get<int>();
            c.grid = m.at("grid").get<int>();
            c.channels = m.at("channels").get<int>();
            c.component_std = m.at("component_std").get<double>();
            c.mixture_seed = m.at("seed").get<std::uint64_t>();
            const auto& t = j.at("teacher");
            c.d_vf = t.at("d_vf").get<int>();
            c.teacher_gamma = t.at("gamma").get<double>();
            c.teacher_seed = t.at("seed").get<std::uint64_t>();
            const auto& n = j.at("net");
            c.depth = n.at("depth").get<int>();
            c.d_model = n.at("d_model").get<int>();
            c.heads = n.at("heads").get<int>();
            c.align_depth = n.at("align_depth").get<int>();
            c.cls_variant = cls_variant_from_string(n.at("cls_variant").get<std::string>());
            c.use_pos_embed = n.at("use_pos_embed").get<bool>();
            const auto& s = j.at("schedule");
            if (s.at("kind").get<std::string>() != "linear")
                throw io_error("run config: unknown schedule kind");
            c.schedule_kind = ScheduleKind::Linear;
            c.t_min = s.at("t_min").get<double>();
            c.t_max = s.at("t_max").get<double>();
            const auto& tr = j.at("train");
            c.train.steps = tr.at("steps").get<std::int64_t>();
            c.train.batch = tr.at("batch").get<int>();
            c.train.lr = tr.at("lr").get<double>();
            c.train.adam_beta1 = tr.at("adam_beta1").get<double>();
            c.train.adam_beta2 = tr.at("adam_beta2").get<double>();
            c.train.adam_eps = tr.at("adam_eps").get<double>();
            c.train.weight_decay = tr.at("weight_decay").get<double>();
            c.train.ema_decay = tr.at("ema_decay").get<double>();
            c.train.label_dropout = tr.at("label_dropout").get<double>();
            c.train.loss_weights.beta = tr.at("beta").get<double>();
            c.train.loss_weights.lambda = tr.at("lambda").get<double>();
            c.train.seed = tr.at("seed").get<std::uint64_t>();
            c.train.log_every = tr.at("log_every").get<std::int64_t>();
            c.train.checkpoint_every = tr.at("checkpoint_every").get<std::int64_t>();
            const auto& sa = j.at("sampler");
            c.sampler.kind = sampler_kind_from_string(sa.at("kind").get<std::string>());
            c.sampler.steps = sa.at("steps").get<int>();
            c.sampler.cfg_scale = sa.at("cfg_scale").get<double>();
            c.sampler.cfg_lo = sa.at("cfg_lo").get<double>();
            c.sampler.cfg_hi = sa.at("cfg_hi").get<double>();
            c.sampler.guide_cls_channel = sa.at("guide_cls_channel").get<bool>();
            c.sampler.t_switch = sa.at("t_switch").get<double>();
            c.sampler.seed = sa.at("seed").get<std::uint64_t>();
        } catch (const nlohmann::json::exception& e) {
            throw io_error(std::string("run config: ") + e.what());
        }
        c.net();            // validates net shape
        c.sampler.validate();
        return c;
    }

    // Canonical form: nlohmann emits object keys sorted, numbers in shortest
    // round-trip form, no whitespace. run_name and output_dir are location
    // metadata, not part of the experiment, so the hash ignores them: equal
    // hash means equal results wherever the artifacts land.
    std::string canonical() const {
        nlohmann::json j = to_json();
        j.erase("run_name");
        j.erase("output_dir");
        return j.dump();
    }
    std::string hash() const { return hex16(fnv1a64(canonical())); }

    // Every artifact of a run lives under output_dir/run_name-hash/.
    std::string artifact_dir() const {
        return output_dir + "/" + run_name + "-" + hash();
    }
};

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw io_error("cannot open config: " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw io_error("config parse failure in " + path + ": " + e.what());
    }
    return RunConfig::from_json(j);
}

inline void save_run_config(const std::string& path, const RunConfig& cfg) {
    std::ofstream os(path);
    if (!os) throw io_error("cannot write config: " + path);
    os << cfg.to_json().dump(2) << "\n";
}

}  // namespace reg
