// sswl: simulate, train, evaluate, report, describe.

#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "sswl/harness/commands.hpp"

namespace {

using namespace sswl;
using namespace sswl::harness;

int fail(int code, const std::string& msg) {
    std::istringstream lines(msg);
    std::string line;
    while (std::getline(lines, line)) std::cerr << "error: " << line << "\n";
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Window-level pretraining and denoising for low-dose CT"};
    app.require_subcommand(1);

    SimulateOptions sim;
    std::string sim_from, sim_out, sim_model = "excess_quanta";
    auto* simulate = app.add_subcommand("simulate", "write phantom pairs or re-dose an existing dataset");
    simulate->add_option("--phantom", sim.phantom, "number of phantom pairs to generate");
    simulate->add_option("--size", sim.size, "phantom edge length in pixels")->capture_default_str();
    simulate->add_option("--dose", sim.dose, "low-dose fraction of phantom pairs")->capture_default_str();
    simulate->add_option("--seed", sim.seed, "phantom seed")->capture_default_str();
    simulate->add_option("--family", sim.family, "phantom family: abdomen or chest")->capture_default_str();
    simulate->add_option("--out", sim_out, "output dataset directory (phantom mode)");
    simulate->add_option("--from", sim_from, "existing dataset root to re-dose");
    simulate->add_option("--source-dose", sim.source_dose, "dose of the existing low-dose slices");
    simulate->add_option("--target-dose", sim.target_dose, "dose to synthesize");
    simulate->add_option("--noise-model", sim_model, "inverse_dose or excess_quanta")->capture_default_str();
    simulate->add_flag("--force", sim.force, "overwrite existing outputs");

    TrainOptions tr;
    std::string tr_spec, tr_pretext, tr_size, tr_out;
    auto* train = app.add_subcommand("train", "run every (labeled size, seed) of an experiment spec");
    train->add_option("spec", tr_spec, "experiment spec file")->required();
    train->add_option("--pretext", tr_pretext, "override pretext.kind");
    train->add_option("--labeled-size", tr_size, "override sweep.labeled_sizes with a single size");
    train->add_option("--out", tr_out, "override output.root");
    train->add_flag("--force", tr.force, "redo completed runs");

    EvaluateOptions ev;
    std::string ev_ckpt, ev_test, ev_roi, ev_out, ev_window = "none", ev_target_window = "none";
    auto* evaluate = app.add_subcommand("evaluate", "score a checkpoint on a test dataset");
    evaluate->add_option("checkpoint", ev_ckpt, "checkpoint file")->required();
    evaluate->add_option("test_root", ev_test, "test dataset root (default $SSWL_DATA_ROOT)");
    evaluate->add_option("--roi", ev_roi, "x,y,w,h region for ROI SSIM and image grids");
    evaluate->add_flag("--identity", ev.identity, "use the targets as predictions");
    evaluate->add_option("--out", ev_out, "output directory (default: the checkpoint's directory)");
    evaluate->add_option("--target-window", ev_target_window,
                         "window-leveled targets (dataset.target_window of the run): none, a preset, or center,width")
        ->capture_default_str();
    evaluate->add_option("--window", ev_window, "metric space: none, a preset name, or center,width")
        ->capture_default_str();
    evaluate->add_option("--hu-min", ev.norm.hu_min, "normalization lower bound")->capture_default_str();
    evaluate->add_option("--hu-max", ev.norm.hu_max, "normalization upper bound")->capture_default_str();

    ReportOptions rep;
    std::string rep_root, rep_out;
    auto* report = app.add_subcommand("report", "aggregate completed runs into tables, t-tests and plots");
    report->add_option("run_root", rep_root, "directory holding run directories")->required();
    report->add_option("--out", rep_out, "output directory (default <run_root>/report)");

    std::string desc_ckpt;
    auto* describe = app.add_subcommand("describe", "print a checkpoint header");
    describe->add_option("checkpoint", desc_ckpt, "checkpoint file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail(exit_validation, e.what());
    }

    try {
        if (*simulate) {
            sim.out = sim_out;
            sim.noise_model = noise_model_from_string(sim_model);
            if (!sim_from.empty()) {
                sim.from = sim_from;
            } else if (sim.phantom == 0) {
                throw ValidationError("simulate needs --phantom n or --from <dataset>");
            }
            return cmd_simulate(sim, std::cout);
        }
        if (*train) {
            tr.spec = tr_spec;
            if (!tr_pretext.empty()) tr.pretext = pretext_from_string(tr_pretext);
            if (!tr_size.empty()) tr.labeled_size = labeled_size_from_string(tr_size);
            if (!tr_out.empty()) tr.out = tr_out;
            return cmd_train(tr, std::cout);
        }
        if (*evaluate) {
            ev.checkpoint = ev_ckpt;
            if (ev_test.empty()) {
                const char* env = std::getenv(data_root_env);
                if (!env || !*env) throw ValidationError("no test_root given and " + std::string(data_root_env) + " is unset");
                ev_test = env;
            }
            ev.test_root = ev_test;
            if (!ev_roi.empty()) ev.roi = parse_roi(ev_roi);
            ev.out = ev_out;
            ev.window = sswl::harness::detail::parse_window(ev_window);
            ev.target_window = sswl::harness::detail::parse_window(ev_target_window);
            return cmd_evaluate(ev, std::cout);
        }
        if (*report) {
            rep.run_root = rep_root;
            rep.out = rep_out;
            return cmd_report(rep, std::cout);
        }
        if (*describe) return cmd_describe(desc_ckpt, std::cout);
    } catch (const ValidationError& e) {
        return fail(exit_validation, e.what());
    } catch (const std::exception& e) {
        return fail(exit_runtime, e.what());
    }
    return exit_ok;
}
