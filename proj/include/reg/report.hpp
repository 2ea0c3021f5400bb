#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "reg/common.hpp"
#include "reg/metrics.hpp"
#include "reg/svg.hpp"

namespace reg {

// CSV bundle + JSON summary for one evaluation, plus the two alignment-sweep
// charts.
inline void write_eval_report(const std::string& dir, const EvalReport& rep,
                              const std::string& config_hash) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw io_error("write_eval_report: cannot create " + dir);

    {
        std::ofstream os(dir + "/frechet_per_class.csv");
        os << "class,frechet\n";
        for (std::size_t k = 0; k < rep.frechet_per_class.size(); ++k)
            os << k << ',' << format_double(rep.frechet_per_class[k]) << "\n";
    }
    {
        std::ofstream os(dir + "/cknna_by_layer.csv");
        os << "layer,cknna\n";
        for (std::size_t i = 0; i < rep.cknna_by_layer.size(); ++i)
            os << (i + 1) << ',' << format_double(rep.cknna_by_layer[i]) << "\n";
    }
    {
        std::ofstream os(dir + "/cknna_by_t.csv");
        os << "t,cknna\n";
        for (const auto& [t, c] : rep.cknna_by_t)
            os << format_double(t) << ',' << format_double(c) << "\n";
    }
    nlohmann::json j;
    j["config_hash"] = config_hash;
    j["frechet_mean"] = rep.frechet_mean;
    j["frechet_per_class"] = rep.frechet_per_class;
    j["cls_cosine_mean"] = rep.cls_cosine_mean;
    j["cknna_k"] = rep.cknna_k;
    j["cknna_by_layer"] = rep.cknna_by_layer;
    j["argmax_layer"] = rep.argmax_layer;
    {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& [t, c] : rep.cknna_by_t) arr.push_back({{"t", t}, {"cknna", c}});
        j["cknna_by_t"] = arr;
    }
    std::ofstream js(dir + "/eval_summary.json");
    if (!js) throw io_error("write_eval_report: cannot write summary");
    js << j.dump(2) << "\n";

    std::vector<svg::Series> layers(1);
    layers[0].name = "cknna";
    for (std::size_t i = 0; i < rep.cknna_by_layer.size(); ++i) {
        layers[0].x.push_back(static_cast<double>(i + 1));
        layers[0].y.push_back(rep.cknna_by_layer[i]);
    }
    svg::write_file(dir + "/cknna_by_layer.svg",
                    svg::line_chart("alignment by layer", "layer", "cknna", layers));

    std::vector<svg::Series> ts(1);
    ts[0].name = "cknna";
    for (const auto& [t, c] : rep.cknna_by_t) {
        ts[0].x.push_back(t);
        ts[0].y.push_back(c);
    }
    svg::write_file(dir + "/cknna_by_t.svg",
                    svg::line_chart("alignment by timestep", "t", "cknna", ts));
}

// Loss-curve chart straight from the training metrics CSV.
inline std::string loss_curve_svg_from_csv(const std::string& csv_path) {
    std::ifstream is(csv_path);
    if (!is) throw io_error("loss_curve: cannot open " + csv_path);
    std::string line;
    if (!std::getline(is, line)) throw io_error("loss_curve: empty CSV");
    svg::Series total{"loss_total", {}, {}}, pred{"loss_pred_z", {}, {}},
        repa{"loss_repa", {}, {}};
    while (std::getline(is, line)) {
        std::istringstream row(line);
        std::string field;
        std::vector<double> vals;
        while (std::getline(row, field, ','))
            vals.push_back(std::stod(field));
        if (vals.size() < 6) continue;
        total.x.push_back(vals[0]);
        total.y.push_back(vals[4]);
        pred.x.push_back(vals[0]);
        pred.y.push_back(vals[1]);
        repa.x.push_back(vals[0]);
        repa.y.push_back(vals[3]);
    }
    if (total.x.empty()) throw io_error("loss_curve: no data rows");
    return svg::line_chart("training losses", "step", "loss",
                           {total, pred, repa});
}

}  // namespace reg
