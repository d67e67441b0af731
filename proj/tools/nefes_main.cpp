#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "nefes/checkpoint.hpp"
#include "nefes/config.hpp"
#include "nefes/refine.hpp"
#include "nefes/scene.hpp"
#include "nefes/training.hpp"

namespace fs = std::filesystem;
using namespace nefes;

namespace {

constexpr std::uint64_t kExtractorSalt = 0x6665617473ull;

double median(std::vector<double> v) {
    if (v.empty()) return 0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

cfg::RunConfig load_run_config(const std::string& preset, const std::string& config_path) {
    cfg::RunConfig rc = cfg::RunConfig::preset(preset);
    if (!config_path.empty()) cfg::apply_config_file(rc, config_path);
    return rc;
}

void write_log_csv(const std::string& path, const std::vector<train::LogRow>& rows,
                   bool append) {
    std::ofstream f(path, append ? std::ios::app : std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write training log: " + path);
    if (!append) f << "epoch,stage,L_rgb,L_f,L_fusion,lr,heldout_psnr\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%d,%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.epoch,
                      r.stage, r.L_rgb, r.L_f, r.L_fusion, r.lr, r.heldout_psnr);
        f << buf;
    }
}

std::vector<double> parse_grid(const std::string& s) {
    std::vector<double> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            out.push_back(std::stod(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(std::stod(cur));
    if (out.empty()) throw std::invalid_argument("empty sweep grid");
    return out;
}

int cmd_gen(const std::string& preset, const std::string& config_path, std::uint64_t seed,
            bool seed_set, const std::string& out) {
    cfg::RunConfig rc = load_run_config(preset, config_path);
    if (seed_set) rc.scene.seed = seed;
    scene::SyntheticScene sc = scene::generate_scene(rc.scene.seed);
    scene::make_dataset(sc, rc.scene.n_train, rc.scene.n_test, rc.scene.seed, out,
                        rc.scene.jitter_fraction);
    std::cout << "dataset written to " << out << " (" << rc.scene.n_train << " train, "
              << rc.scene.n_test << " test)\n";
    return 0;
}

int cmd_train(const std::string& preset, const std::string& config_path, std::uint64_t seed,
              bool seed_set, const std::string& data_dir, const std::string& out,
              std::string log_path, bool resume, int epochs,
              const std::string& stage_override) {
    scene::DatasetSplit split = scene::load_dataset(data_dir);

    ckpt::Checkpoint ck;
    bool resumed = false;
    if (resume && fs::exists(out)) {
        ck = ckpt::load_checkpoint(out);
        resumed = true;
    } else {
        cfg::RunConfig rc = load_run_config(preset, config_path);
        if (seed_set) rc.train.seed = seed;
        if (stage_override == "rgb_only") {
            rc.train.T2 = 0;
            rc.train.T3 = 0;
        } else if (!stage_override.empty()) {
            throw std::invalid_argument("unknown --stage-override value: " + stage_override);
        }
        ck.fcfg = rc.field;
        ck.rcfg = rc.renderer;
        ck.tcfg = rc.train;
        ck.extractor_seed = rc.train.seed ^ kExtractorSalt;
        ck.state = train::init_train_state(ck.fcfg, ck.tcfg);
    }

    features::ExtractorParams extractor = features::make_extractor(ck.extractor_seed, ck.fcfg.N_f);
    train::TrainResult res =
        train::train_nefes(split.data, ck.tcfg, ck.rcfg, ck.fcfg, extractor, ck.state, epochs);
    ckpt::save_checkpoint(out, ck);

    if (log_path.empty()) log_path = out + ".log.csv";
    write_log_csv(log_path, res.log, resumed);

    int last_stage = -1;
    for (const auto& r : res.log) {
        if (r.stage != last_stage || r.epoch == ck.state.epoch - 1) {
            std::printf("epoch %4d stage %d  L_rgb %.4f  L_f %.4f  L_fusion %.4f  psnr %.2f\n",
                        r.epoch, r.stage, r.L_rgb, r.L_f, r.L_fusion, r.heldout_psnr);
            last_stage = r.stage;
        }
    }
    std::cout << "checkpoint written to " << out << " (epoch " << ck.state.epoch << ")\n";
    return 0;
}

int cmd_refine(const std::string& ckpt_path, const std::string& data_dir,
               const std::string& mode_str, int iters, const std::string& out_dir,
               const std::string& init_mode, double perturb_rot, double perturb_trans,
               std::uint64_t seed, int max_queries, int apr_epochs) {
    ckpt::Checkpoint ck = ckpt::load_checkpoint(ckpt_path);
    refine::NeFeSModel model = ckpt::to_model(ck);
    scene::DatasetSplit split = scene::load_dataset(data_dir);

    cfg::RunConfig rc;  // refine defaults; mode/m from flags
    refine::RefineConfig rcfg = rc.refine;
    if (!mode_str.empty()) {
        cfg::apply_config_text(rc, "[refine]\nmode = " + mode_str);
        rcfg.mode = rc.refine.mode;
    }
    rcfg.m = iters;
    rcfg.seed = seed;
    rcfg.validate();

    scene::APRParams apr;
    const bool need_apr = rcfg.mode == refine::RefineMode::apr_weights || init_mode == "apr";
    if (need_apr) apr = scene::train_toy_apr(split, apr_epochs, seed);

    fs::create_directories(out_dir);
    Rng rng(seed ^ 0x696E6974ull);
    std::vector<double> it0, ir0, it1, ir1;
    const int nq = max_queries > 0
                       ? std::min<int>(max_queries, static_cast<int>(split.data.test.size()))
                       : static_cast<int>(split.data.test.size());

    for (int i = 0; i < nq; ++i) {
        const auto& q = split.data.test[i];
        refine::RefineTrace trace;
        if (rcfg.mode == refine::RefineMode::apr_weights) {
            trace = refine::refine_apr_weights(q.image, apr, model, split.data.intrinsics,
                                               rcfg, &q.pose);
        } else {
            lie::Pose init;
            if (init_mode == "retrieval")
                init = scene::nearest_pose_init(q.image, split);
            else if (init_mode == "apr")
                init = scene::apr_predict(q.image, split.data.intrinsics, apr);
            else if (init_mode == "gt_perturb")
                init = lie::perturb_pose(q.pose, perturb_rot, perturb_trans, rng);
            else
                throw std::invalid_argument("unknown --init value: " + init_mode);
            if (rcfg.mode == refine::RefineMode::direct_pose)
                trace = refine::refine_direct_pose(q.image, init, model,
                                                   split.data.intrinsics, rcfg, &q.pose);
            else
                trace = refine::refine_photometric(q.image, init, model,
                                                   split.data.intrinsics, rcfg, &q.pose);
        }
        char name[64];
        std::snprintf(name, sizeof(name), "query_%03d.csv", i);
        refine::write_trace_csv((fs::path(out_dir) / name).string(), trace);
        it0.push_back(trace.rows.front().trans_err);
        ir0.push_back(trace.rows.front().rot_err);
        it1.push_back(trace.rows.back().trans_err);
        ir1.push_back(trace.rows.back().rot_err);
    }

    std::ofstream sf(fs::path(out_dir) / "summary.csv");
    sf << "median_initial_trans,median_initial_rot,median_final_trans,median_final_rot\n";
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g\n", median(it0), median(ir0),
                  median(it1), median(ir1));
    sf << buf;
    std::printf("median errors: %.4fm/%.3fdeg -> %.4fm/%.3fdeg over %d queries\n", median(it0),
                median(ir0), median(it1), median(ir1), nq);
    return 0;
}

int cmd_sweep(const std::string& ckpt_path, const std::string& data_dir,
              const std::string& sweep, const std::string& grid_str, int iters,
              const std::string& out_csv, std::uint64_t seed, int max_queries,
              double base_rot, double base_trans) {
    ckpt::Checkpoint ck = ckpt::load_checkpoint(ckpt_path);
    refine::NeFeSModel model = ckpt::to_model(ck);
    scene::DatasetSplit split = scene::load_dataset(data_dir);
    const std::vector<double> grid = parse_grid(grid_str);

    refine::RefineConfig rcfg;
    rcfg.seed = seed;
    const int nq = max_queries > 0
                       ? std::min<int>(max_queries, static_cast<int>(split.data.test.size()))
                       : static_cast<int>(split.data.test.size());

    std::ofstream f(out_csv);
    if (!f) throw std::runtime_error("cannot write sweep CSV: " + out_csv);
    char buf[256];
    Rng rng(seed ^ 0x7377656570ull);

    if (sweep == "perturb_rot" || sweep == "perturb_trans") {
        rcfg.m = iters;
        rcfg.validate();
        f << "magnitude,query,initial_trans,initial_rot,final_trans,final_rot\n";
        for (double mag : grid)
            for (int i = 0; i < nq; ++i) {
                const auto& q = split.data.test[i];
                const lie::Pose init =
                    sweep == "perturb_rot" ? lie::perturb_pose(q.pose, mag, base_trans, rng)
                                           : lie::perturb_pose(q.pose, base_rot, mag, rng);
                auto trace = refine::refine_direct_pose(q.image, init, model,
                                                        split.data.intrinsics, rcfg, &q.pose);
                std::snprintf(buf, sizeof(buf), "%.17g,%d,%.17g,%.17g,%.17g,%.17g\n", mag, i,
                              trace.rows.front().trans_err, trace.rows.front().rot_err,
                              trace.rows.back().trans_err, trace.rows.back().rot_err);
                f << buf;
            }
    } else if (sweep == "iterations") {
        rcfg.m = static_cast<int>(*std::max_element(grid.begin(), grid.end()));
        rcfg.validate();
        f << "iters,query,trans_err,rot_err\n";
        for (int i = 0; i < nq; ++i) {
            const auto& q = split.data.test[i];
            const lie::Pose init = lie::perturb_pose(q.pose, base_rot, base_trans, rng);
            auto trace = refine::refine_direct_pose(q.image, init, model,
                                                    split.data.intrinsics, rcfg, &q.pose);
            for (double gv : grid) {
                const std::size_t it =
                    std::min<std::size_t>(static_cast<std::size_t>(gv), trace.rows.size() - 1);
                std::snprintf(buf, sizeof(buf), "%d,%d,%.17g,%.17g\n", static_cast<int>(gv), i,
                              trace.rows[it].trans_err, trace.rows[it].rot_err);
                f << buf;
            }
        }
    } else {
        throw std::invalid_argument("unknown sweep type: " + sweep);
    }
    std::cout << "sweep written to " << out_csv << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir,
             const std::string& out_csv) {
    ckpt::Checkpoint ck = ckpt::load_checkpoint(ckpt_path);
    scene::DatasetSplit split = scene::load_dataset(data_dir);

    std::ofstream f;
    if (!out_csv.empty()) {
        f.open(out_csv);
        if (!f) throw std::runtime_error("cannot write eval CSV: " + out_csv);
        f << "query,psnr\n";
    }
    std::vector<double> vals;
    for (std::size_t i = 0; i < split.data.test.size(); ++i) {
        const auto& q = split.data.test[i];
        Tensor hist = field::luminance_histogram(q.image);
        ImageBuffer img = train::render_color_image(q.pose, split.data.intrinsics,
                                                    ck.state.params, ck.fcfg, ck.rcfg,
                                                    ck.tcfg.use_act ? &hist : nullptr);
        ImageBuffer gt = resize_area(q.image, img.h, img.w);
        const double p = psnr(img, gt);
        vals.push_back(p);
        if (f) f << i << "," << p << "\n";
    }
    std::printf("held-out PSNR over %zu views: median %.2f dB, mean %.2f dB\n", vals.size(),
                median(vals),
                std::accumulate(vals.begin(), vals.end(), 0.0) / vals.size());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"NeFeS: neural feature synthesis and camera pose refinement"};
    app.require_subcommand(1);

    std::string preset = "desk", config_path, data_dir, out, log_path, mode_str,
                stage_override, init_mode = "retrieval", sweep_type, grid = "5,15,30,45,60",
                ckpt_path;
    std::uint64_t seed = 0;
    bool resume = false;
    int epochs = -1, iters = 50, max_queries = 0, apr_epochs = 120;
    double perturb_rot = 10.0, perturb_trans = 0.1;

    auto add_common = [&](CLI::App* c) {
        c->add_option("--config", config_path, "configuration file (INI sections)");
        c->add_option("--preset", preset, "named preset: desk or paper")
            ->check(CLI::IsMember({"desk", "paper"}));
    };

    auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
    add_common(gen);
    auto* gen_seed = gen->add_option("--seed", seed, "scene seed override");
    gen->add_option("--out", out, "output dataset directory")->required();

    auto* tr = app.add_subcommand("train", "train a NeFeS model");
    add_common(tr);
    auto* tr_seed = tr->add_option("--seed", seed, "training seed override");
    tr->add_option("--data", data_dir, "dataset directory")->required();
    tr->add_option("--out", out, "output checkpoint path")->required();
    tr->add_option("--log", log_path, "training log CSV (default <out>.log.csv)");
    tr->add_flag("--resume", resume, "resume from the output checkpoint if present");
    tr->add_option("--epochs", epochs, "train at most this many epochs in this run");
    tr->add_option("--stage-override", stage_override, "rgb_only: photometric stage only");

    auto* rf = app.add_subcommand("refine", "refine test-split poses");
    rf->add_option("--ckpt", ckpt_path, "model checkpoint")->required();
    rf->add_option("--data", data_dir, "dataset directory")->required();
    rf->add_option("--mode", mode_str,
                   "direct_pose | apr_weights | photometric_sparse | photometric_dense");
    rf->add_option("--iters", iters, "refinement iterations m");
    rf->add_option("--out", out, "output directory for trace CSVs")->required();
    rf->add_option("--init", init_mode, "retrieval | apr | gt_perturb");
    rf->add_option("--perturb-rot", perturb_rot, "gt_perturb rotation (degrees)");
    rf->add_option("--perturb-trans", perturb_trans, "gt_perturb translation (scene units)");
    rf->add_option("--seed", seed, "refinement seed");
    rf->add_option("--queries", max_queries, "limit the number of test queries");
    rf->add_option("--apr-epochs", apr_epochs, "toy APR training epochs");

    auto* sw = app.add_subcommand("sweep", "perturbation / iteration sweeps");
    sw->add_option("--ckpt", ckpt_path, "model checkpoint")->required();
    sw->add_option("--data", data_dir, "dataset directory")->required();
    sw->add_option("--sweep", sweep_type, "perturb_rot | perturb_trans | iterations")
        ->required();
    sw->add_option("--grid", grid, "comma-separated sweep values");
    sw->add_option("--iters", iters, "refinement iterations per run");
    sw->add_option("--out", out, "output CSV path")->required();
    sw->add_option("--seed", seed, "sweep seed");
    sw->add_option("--queries", max_queries, "limit the number of test queries");
    sw->add_option("--perturb-rot", perturb_rot, "base rotation perturbation (degrees)");
    sw->add_option("--perturb-trans", perturb_trans, "base translation perturbation");

    auto* ev = app.add_subcommand("eval", "held-out PSNR of a checkpoint");
    ev->add_option("--ckpt", ckpt_path, "model checkpoint")->required();
    ev->add_option("--data", data_dir, "dataset directory")->required();
    ev->add_option("--out", out, "per-query PSNR CSV");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen(preset, config_path, seed, gen_seed->count() > 0, out);
        if (tr->parsed())
            return cmd_train(preset, config_path, seed, tr_seed->count() > 0, data_dir, out,
                             log_path, resume, epochs, stage_override);
        if (rf->parsed())
            return cmd_refine(ckpt_path, data_dir, mode_str, iters, out, init_mode, perturb_rot,
                              perturb_trans, seed, max_queries, apr_epochs);
        if (sw->parsed())
            return cmd_sweep(ckpt_path, data_dir, sweep_type, grid, iters, out, seed,
                             max_queries, perturb_rot, perturb_trans);
        if (ev->parsed()) return cmd_eval(ckpt_path, data_dir, out);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::runtime_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return std::string(e.what()).find("diverged") != std::string::npos ? 4 : 3;
    }
    return 0;
}
