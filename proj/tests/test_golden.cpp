#include <doctest.h>

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "reg/config.hpp"
#include "reg/metrics.hpp"

using namespace reg;

#ifndef REG_TESTS_DIR
#define REG_TESTS_DIR "."
#endif

// The golden checkpoint was trained and evaluated once with the committed
// config; evaluation on a rebuilt world must reproduce the frozen report.
TEST_CASE("golden checkpoint reproduces its frozen evaluation") {
    const std::string dir = std::string(REG_TESTS_DIR) + "/golden";
    const RunConfig cfg = load_run_config(dir + "/config.json");
    const DenoiserState st = load_checkpoint(dir + "/final.ckpt");

    nlohmann::json frozen;
    {
        std::ifstream is(dir + "/eval_summary.json");
        REQUIRE(is.good());
        is >> frozen;
    }
    CHECK(frozen.at("config_hash").get<std::string>() == cfg.hash());

    EvalOptions opt;
    opt.n_samples = 24;  // matches the committed run (eval --eval-samples 24)
    const EvalReport rep = eval_run(st, cfg.mixture(), cfg.teacher(),
                                    cfg.sampler, cfg.schedule(), opt);

    const double tol = 1e-3;  // relative; regeneration on this code is exact
    CHECK(rep.frechet_mean ==
          doctest::Approx(frozen.at("frechet_mean").get<double>()).epsilon(tol));
    CHECK(rep.cls_cosine_mean ==
          doctest::Approx(frozen.at("cls_cosine_mean").get<double>()).epsilon(tol));
    CHECK(rep.argmax_layer == frozen.at("argmax_layer").get<int>());
    const auto layers = frozen.at("cknna_by_layer").get<std::vector<double>>();
    REQUIRE(rep.cknna_by_layer.size() == layers.size());
    for (std::size_t i = 0; i < layers.size(); ++i)
        CHECK(rep.cknna_by_layer[i] == doctest::Approx(layers[i]).epsilon(tol));
    const auto per_class =
        frozen.at("frechet_per_class").get<std::vector<double>>();
    REQUIRE(rep.frechet_per_class.size() == per_class.size());
    for (std::size_t i = 0; i < per_class.size(); ++i)
        CHECK(rep.frechet_per_class[i] ==
              doctest::Approx(per_class[i]).epsilon(tol));
}
