// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 stppmot contributors

#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "stpp/pipeline.hpp"

namespace {

stpp::RunConfig make_config(const std::string& config_path, const std::string& out_dir,
                            bool have_seed, std::uint64_t seed,
                            const std::string& variant) {
  stpp::RunConfig cfg;
  if (!config_path.empty())
    stpp::apply_config(cfg, stpp::parse_config_file(config_path));
  if (!out_dir.empty()) cfg.out_dir = out_dir;
  if (have_seed) cfg.seed = seed;
  if (!variant.empty()) cfg.variant = stpp::variant_from_name(variant);
  cfg.model.grid_h = cfg.scenario.grid_h;
  cfg.model.grid_w = cfg.scenario.grid_w;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stppmot: event-intensity filtering for multi-object tracking"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, out_dir, variant;
  std::uint64_t seed = 0;
  app.add_option("--config", config_path, "key = value configuration file");
  auto* seed_opt = app.add_option("--seed", seed, "run seed");
  app.add_option("--variant", variant, "model variant: timeindep|sync|syncasync");
  app.add_option("--out-dir", out_dir, "artifact directory");

  auto* sim = app.add_subcommand("simulate", "generate the scenario suites");
  auto* trn = app.add_subcommand("train", "train the intensity model");
  auto* inf = app.add_subcommand("infer", "emit intensity maps and event predictions");
  auto* flt = app.add_subcommand("filter", "drop detections by event ratio");
  auto* trk = app.add_subcommand("track", "tracklets, clustering, trajectories");
  auto* evl = app.add_subcommand("eval", "CLEAR-MOT report from gt and predictions");
  auto* pip = app.add_subcommand("pipeline", "simulate-train-infer-filter-track-eval");
  auto* plt = app.add_subcommand("plot-data", "CSV series for plotting");

  std::string dets_path, events_path, out_path, gt_path, pred_path;
  double tau_r = -1.0;
  flt->add_option("--dets", dets_path, "detections CSV")->required();
  flt->add_option("--events", events_path, "predicted event grids")->required();
  flt->add_option("--out", out_path, "kept detections CSV")->required();
  flt->add_option("--tau-r", tau_r, "removal threshold (default from config)");
  trk->add_option("--dets", dets_path, "detections CSV")->required();
  trk->add_option("--out", out_path, "trajectories CSV")->required();
  evl->add_option("--gt", gt_path, "ground-truth trajectories CSV")->required();
  evl->add_option("--pred", pred_path, "predicted trajectories CSV")->required();
  evl->add_option("--out", out_path, "report JSON")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    stpp::RunConfig cfg =
        make_config(config_path, out_dir, seed_opt->count() > 0, seed, variant);
    if (sim->parsed()) {
      stpp::cmd_simulate(cfg);
      std::printf("scenarios written under %s/scenarios\n", cfg.out_dir.c_str());
    } else if (trn->parsed()) {
      stpp::LossTrace trace = stpp::cmd_train(cfg);
      std::printf("trained %s: %zu iterations, final nll %s\n",
                  stpp::variant_name(cfg.variant), trace.nll.size(),
                  trace.nll.empty() ? "n/a"
                                    : stpp::format_double(trace.nll.back()).c_str());
    } else if (inf->parsed()) {
      stpp::cmd_infer(cfg);
      std::printf("intensity maps written under %s/infer/%s\n", cfg.out_dir.c_str(),
                  stpp::variant_name(cfg.variant));
    } else if (flt->parsed()) {
      stpp::cmd_filter(dets_path, events_path, out_path,
                       tau_r >= 0 ? tau_r : cfg.tau_r);
      std::printf("kept detections written to %s\n", out_path.c_str());
    } else if (trk->parsed()) {
      stpp::cmd_track(dets_path, out_path, cfg.tracker_config());
      std::printf("trajectories written to %s\n", out_path.c_str());
    } else if (evl->parsed()) {
      stpp::MotReport rep = stpp::cmd_eval(gt_path, pred_path, out_path);
      std::printf("mota=%s motp=%s fp=%lld fn=%lld ids=%lld\n",
                  stpp::format_double(rep.mota).c_str(),
                  stpp::format_double(rep.motp).c_str(), rep.fp, rep.fn, rep.ids);
    } else if (pip->parsed()) {
      nlohmann::json report = stpp::cmd_pipeline(cfg);
      std::printf("report written to %s/eval/report.json\n", cfg.out_dir.c_str());
      std::printf("baseline median mota %s\n",
                  stpp::format_double(
                      report["baseline"]["median_mota"].get<double>())
                      .c_str());
      for (const char* v : {"timeindep", "sync", "syncasync"})
        std::printf("%-10s median mota %s  event ap %s\n", v,
                    stpp::format_double(
                        report["variants"][v]["median_mota"].get<double>())
                        .c_str(),
                    stpp::format_double(
                        report["variants"][v]["event_ap"].get<double>())
                        .c_str());
    } else if (plt->parsed()) {
      stpp::cmd_plot_data(cfg);
      std::printf("plot series written under %s/plot\n", cfg.out_dir.c_str());
    }
  } catch (const stpp::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const stpp::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const stpp::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
