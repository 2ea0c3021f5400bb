#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "reg/report.hpp"
#include "reg/svg.hpp"

using namespace reg;

TEST_CASE("svg output is deterministic and structurally sane") {
    std::vector<svg::Series> series = {
        {"a", {0, 1, 2, 3}, {0.0, 0.5, 0.25, 0.9}},
        {"b", {0, 1, 2, 3}, {1.0, 0.75, 0.5, 0.1}}};
    const std::string s1 = svg::line_chart("t", "x", "y", series);
    const std::string s2 = svg::line_chart("t", "x", "y", series);
    CHECK(s1 == s2);
    CHECK(s1.find("<svg") != std::string::npos);
    CHECK(s1.find("<polyline") != std::string::npos);
    CHECK(s1.find("</svg>") != std::string::npos);

    const std::string sc =
        svg::scatter("s", "x", "y", {{"g0", {0.1, 0.2}, {0.3, 0.4}}});
    CHECK(sc.find("<circle") != std::string::npos);

    const std::string bc = svg::bar_chart("b", "v", {"one", "two"}, {1.0, 2.0});
    CHECK(bc.find("<rect") != std::string::npos);
    CHECK_THROWS_AS(svg::bar_chart("b", "v", {"one"}, {1.0, 2.0}), shape_error);
    CHECK_THROWS_AS(svg::write_file("/nonexistent_dir/x.svg", s1), io_error);
}

TEST_CASE("loss curve chart reads the metrics CSV") {
    const auto path =
        (std::filesystem::temp_directory_path() / "reg_svg_metrics.csv").string();
    {
        std::ofstream os(path);
        os << "step,loss_pred_z,loss_pred_cls,loss_repa,loss_total,grad_norm\n";
        os << "0,1.0,0.9,0.01,1.03,0.5\n";
        os << "100,0.5,0.4,-0.2,0.41,0.4\n";
    }
    const std::string svg_text = loss_curve_svg_from_csv(path);
    CHECK(svg_text.find("loss_total") != std::string::npos);
    CHECK(svg_text.find("<polyline") != std::string::npos);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(loss_curve_svg_from_csv("/nonexistent.csv"), io_error);
}
