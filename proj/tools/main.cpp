// alignlab command line tool: train, eval, cost, softmax-lab, plot.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "alignlab/checkpoint.hpp"
#include "alignlab/cost_model.hpp"
#include "alignlab/eval_metrics.hpp"
#include "alignlab/losses.hpp"
#include "alignlab/random.hpp"
#include "alignlab/softmax_dynamics.hpp"
#include "alignlab/synthetic.hpp"
#include "alignlab/train.hpp"
#include "svg_plot.hpp"

namespace {

using nlohmann::json;
using namespace alignlab;

std::vector<std::string> split_tokens(const std::string& line) {
    std::istringstream in(line);
    std::vector<std::string> tokens;
    std::string token;
    while (in >> token) tokens.push_back(token);
    return tokens;
}

int run_train(const std::string& config_path) {
    auto config = train_config_from_file(config_path);
    auto result = train(config);
    if (result.aborted_nan) {
        std::cerr << "training aborted on a non-finite loss at step " << result.steps_completed
                  << "; see " << result.run_dir << "/nan_dump.json\n";
        return 2;
    }
    json summary;
    summary["run_dir"] = result.run_dir;
    summary["steps"] = result.steps_completed;
    summary["final.r1_i2t"] = result.retrieval_r1_i2t;
    summary["final.r1_t2i"] = result.retrieval_r1_t2i;
    if (result.alignment_recall > 0.0 || result.alignment_precision > 0.0) {
        summary["final.alignment_precision"] = result.alignment_precision;
        summary["final.alignment_recall"] = result.alignment_recall;
    }
    std::cout << summary.dump(2) << "\n";
    return 0;
}

int run_eval_retrieval(const std::string& checkpoint_path, const std::string& embeddings_path,
                       std::int64_t batch_size, std::uint64_t seed) {
    std::vector<double> sim;
    std::int64_t n = 0;
    if (!embeddings_path.empty()) {
        // image/text records of shape [N, d] (or N records of [d] each).
        auto records = read_embedding_dump(embeddings_path);
        std::vector<double> images, texts;
        std::int64_t dim = -1, n_img = 0, n_txt = 0;
        for (const auto& record : records) {
            const std::int64_t rows = record.shape.size() == 2 ? record.shape[0] : 1;
            const std::int64_t record_dim = record.shape.back();
            if (dim < 0) dim = record_dim;
            if (record_dim != dim) throw std::runtime_error("eval: embedding dims disagree");
            if (record.role == "image") {
                images.insert(images.end(), record.values.begin(), record.values.end());
                n_img += rows;
            } else if (record.role == "text") {
                texts.insert(texts.end(), record.values.begin(), record.values.end());
                n_txt += rows;
            }
        }
        if (n_img != n_txt || n_img == 0) {
            throw std::runtime_error("eval: need matched image/text embeddings");
        }
        n = n_img;
        NoGradGuard no_grad;
        Tensor v = l2_normalize(Tensor::from_data({n, dim}, std::move(images)), 1);
        Tensor t = l2_normalize(Tensor::from_data({n, dim}, std::move(texts)), 1);
        Tensor cosines = matmul(v, t, false, true);
        sim.assign(cosines.data().begin(), cosines.data().end());
    } else {
        auto checkpoint = load_checkpoint(checkpoint_path);
        auto config = train_config_from_kv(
            KeyValueConfig::from_string(checkpoint.metadata.at("config")));
        if (batch_size > 0) config.batch_size = batch_size;
        auto scores = evaluate_held_out(config, checkpoint.params, seed);
        json out;
        out["metric"] = "retrieval";
        out["r1_i2t"] = scores.r1_i2t;
        out["r5_i2t"] = scores.r5_i2t;
        out["r10_i2t"] = scores.r10_i2t;
        out["r1_t2i"] = scores.r1_t2i;
        out["r5_t2i"] = scores.r5_t2i;
        out["r10_t2i"] = scores.r10_t2i;
        if (scores.has_recovery) {
            out["alignment_precision"] = scores.recovery.precision;
            out["alignment_recall"] = scores.recovery.recall;
        }
        std::cout << out.dump(2) << "\n";
        return 0;
    }
    std::vector<std::int64_t> ks;
    for (std::int64_t k : {1, 5, 10}) {
        if (k <= n) ks.push_back(k);
    }
    auto result = recall_at_k(sim, n, ks);
    json out;
    out["metric"] = "retrieval";
    for (auto k : ks) {
        out["r" + std::to_string(k) + "_i2t"] = result.image_to_text.at(k);
        out["r" + std::to_string(k) + "_t2i"] = result.text_to_image.at(k);
    }
    std::cout << out.dump(2) << "\n";
    return 0;
}

int run_eval_kprecision(const std::string& candidates_path, const std::string& references_path,
                        const std::string& mode_name, const std::string& lexicon_path) {
    std::ifstream candidates_in(candidates_path);
    std::ifstream references_in(references_path);
    if (!candidates_in || !references_in) {
        throw std::runtime_error("eval: cannot open candidates/references files");
    }
    LexiconTagger tagger;
    if (!lexicon_path.empty()) tagger = LexiconTagger::from_file(lexicon_path);
    const KPrecisionMode mode =
        mode_name == "noun_adj" ? KPrecisionMode::kNounAdjective : KPrecisionMode::kAllTokens;

    double total = 0.0;
    std::int64_t count = 0;
    std::string candidate_line, reference_line;
    while (std::getline(candidates_in, candidate_line)) {
        if (!std::getline(references_in, reference_line)) {
            throw std::runtime_error("eval: fewer reference lines than candidates");
        }
        std::vector<std::vector<std::string>> references;
        std::istringstream refs(reference_line);
        std::string alternative;
        while (std::getline(refs, alternative, '\t')) {
            references.push_back(split_tokens(alternative));
        }
        total += k_precision(split_tokens(candidate_line), references, mode, tagger);
        ++count;
    }
    json out;
    out["metric"] = mode == KPrecisionMode::kNounAdjective ? "k_precision_noun_adj" : "k_precision";
    out["items"] = count;
    out["mean"] = count > 0 ? total / static_cast<double>(count) : 0.0;
    std::cout << out.dump(2) << "\n";
    return 0;
}

int run_eval_segmentation(const std::string& embeddings_path, const std::string& truth_path,
                          std::vector<std::int64_t> foreground) {
    auto records = read_embedding_dump(embeddings_path);
    SegmentationTask task;
    std::vector<std::vector<double>> class_embeddings;
    for (const auto& record : records) {
        if (record.role == "patch_grid") {
            if (record.shape.size() != 3) {
                throw std::runtime_error("eval: patch_grid record must be [Hp, Wp, d]");
            }
            task.grid_height = record.shape[0];
            task.grid_width = record.shape[1];
            task.dim = record.shape[2];
            task.patch_grid = record.values;
        } else if (record.role == "text") {
            class_embeddings.push_back(record.values);
        }
    }
    if (task.patch_grid.empty() || class_embeddings.empty()) {
        throw std::runtime_error("eval: dump needs one patch_grid and per-class text records");
    }
    task.num_classes = static_cast<std::int64_t>(class_embeddings.size());
    for (const auto& embedding : class_embeddings) {
        if (static_cast<std::int64_t>(embedding.size()) != task.dim) {
            throw std::runtime_error("eval: class embedding dimension mismatch");
        }
        task.class_embeddings.insert(task.class_embeddings.end(), embedding.begin(),
                                     embedding.end());
    }

    std::ifstream truth_in(truth_path);
    if (!truth_in) throw std::runtime_error("eval: cannot open ground truth " + truth_path);
    truth_in >> task.height >> task.width >> task.background_id;
    task.ground_truth.resize(static_cast<std::size_t>(task.height * task.width));
    for (auto& value : task.ground_truth) truth_in >> value;
    if (!truth_in) throw std::runtime_error("eval: truncated ground truth mask");

    if (foreground.empty()) {
        for (std::int64_t c = 0; c < task.num_classes; ++c) foreground.push_back(c);
    }
    task.foreground_classes.insert(foreground.begin(), foreground.end());

    auto result = zero_shot_segment(task);
    json out;
    out["metric"] = "segmentation";
    out["mean_iou"] = result.mean_iou;
    for (const auto& [cls, iou] : result.per_class_iou) {
        out["iou"][std::to_string(cls)] = iou;
    }
    std::cout << out.dump(2) << "\n";
    return 0;
}

int run_cost(const std::string& out_dir, const std::vector<std::int64_t>& batches,
             std::int64_t tokens, std::int64_t patches, std::int64_t dim) {
    std::filesystem::create_directories(out_dir);
    auto profile = CostProfile::desk_default();
    const CostDims base{0, tokens, patches, dim};
    auto sweep = run_cost_sweep(all_objectives(), batches, base, profile, 1234);

    std::ofstream(out_dir + "/cost_measured.csv") << cost_entries_to_csv(sweep.measured);
    std::ofstream(out_dir + "/cost_analytic.csv") << cost_entries_to_csv(sweep.analytic);

    // Group by objective for the four panels.
    std::map<std::string, std::vector<const CostEntry*>> measured;
    for (const auto& entry : sweep.measured) measured[entry.objective].push_back(&entry);

    plot::LineChart flops("Forward+backward multiplies per step", "batch size", "flops");
    plot::LineChart peak("Peak loss-phase memory", "batch size", "bytes");
    plot::LineChart rel_flops("Flops relative to clip", "batch size", "ratio");
    plot::LineChart rel_peak("Peak memory relative to clip", "batch size", "ratio");
    flops.set_log_y(true);
    peak.set_log_y(true);
    const auto& clip_entries = measured.at("clip");
    for (const auto& [objective, entries] : measured) {
        std::vector<double> xs, flops_ys, peak_ys, rel_flops_ys, rel_peak_ys;
        for (std::size_t i = 0; i < entries.size(); ++i) {
            xs.push_back(static_cast<double>(entries[i]->dims.batch));
            flops_ys.push_back(static_cast<double>(entries[i]->flops_total));
            peak_ys.push_back(static_cast<double>(entries[i]->peak_bytes));
            rel_flops_ys.push_back(static_cast<double>(entries[i]->flops_total) /
                                   static_cast<double>(clip_entries[i]->flops_total));
            rel_peak_ys.push_back(static_cast<double>(entries[i]->peak_bytes) /
                                  static_cast<double>(clip_entries[i]->peak_bytes));
        }
        flops.add_series(objective, xs, flops_ys);
        peak.add_series(objective, xs, peak_ys);
        if (objective != "clip") {
            rel_flops.add_series(objective, xs, rel_flops_ys);
            rel_peak.add_series(objective, xs, rel_peak_ys);
        }
    }
    flops.write(out_dir + "/cost_flops.svg");
    peak.write(out_dir + "/cost_peak_memory.svg");
    rel_flops.write(out_dir + "/cost_flops_relative.svg");
    rel_peak.write(out_dir + "/cost_peak_relative.svg");

    std::printf("%-18s %4s %12s %12s %12s\n", "objective", "B", "fwd mults", "flops", "peak B");
    for (const auto& entry : sweep.measured) {
        std::printf("%-18s %4lld %12llu %12llu %12llu\n", entry.objective.c_str(),
                    static_cast<long long>(entry.dims.batch),
                    static_cast<unsigned long long>(entry.flops_forward),
                    static_cast<unsigned long long>(entry.flops_total),
                    static_cast<unsigned long long>(entry.peak_bytes));
    }
    std::printf("wrote %s/cost_measured.csv, cost_analytic.csv and four SVG panels\n",
                out_dir.c_str());
    return 0;
}

int run_softmax_lab(const std::string& experiment, std::int64_t k, std::int64_t trials,
                    std::int64_t steps, double gain, std::uint64_t seed,
                    const std::string& logits_csv, const std::string& plot_dir) {
    json out;
    out["experiment"] = experiment;
    if (experiment == "jacobian") {
        std::vector<double> logits;
        if (!logits_csv.empty()) {
            std::istringstream in(logits_csv);
            std::string item;
            while (std::getline(in, item, ',')) logits.push_back(std::stod(item));
        } else {
            Rng rng(seed);
            logits.resize(static_cast<std::size_t>(k));
            for (auto& value : logits) value = rng.uniform(-1, 1);
        }
        out["logits"] = logits;
        out["jacobian"] = softmax_jacobian(logits);
    } else if (experiment == "gradscale") {
        std::vector<std::int64_t> ks;
        for (std::int64_t kk = 8; kk <= k; kk *= 2) ks.push_back(kk);
        auto sweep = grad_scale_sweep(ks, trials, seed);
        out["loglog_slope"] = sweep.loglog_slope;
        std::vector<double> xs, measured, expected;
        for (const auto& report : sweep.per_k) {
            json row;
            row["k"] = report.k;
            row["grad_scale_expected"] = report.grad_scale_expected;
            row["grad_scale_measured"] = report.grad_scale_measured;
            row["selected_grad_measured"] = report.selected_grad_measured;
            out["per_k"].push_back(row);
            xs.push_back(static_cast<double>(report.k));
            measured.push_back(report.grad_scale_measured);
            expected.push_back(report.grad_scale_expected);
        }
        if (!plot_dir.empty()) {
            std::filesystem::create_directories(plot_dir);
            plot::LineChart chart("Softmax gradient scale vs k", "k", "mean |off-diagonal|");
            chart.set_log_x(true);
            chart.set_log_y(true);
            chart.add_series("measured", xs, measured);
            chart.add_series("1/k^2", xs, expected);
            chart.write(plot_dir + "/gradscale.svg");
            out["plot"] = plot_dir + "/gradscale.svg";
        }
    } else if (experiment == "iterate") {
        std::vector<double> logits;
        if (!logits_csv.empty()) {
            std::istringstream in(logits_csv);
            std::string item;
            while (std::getline(in, item, ',')) logits.push_back(std::stod(item));
        } else {
            Rng rng(seed);
            logits.resize(static_cast<std::size_t>(k));
            for (auto& value : logits) value = rng.uniform(-1, 1);
        }
        auto report = iterate_softmax(logits, steps, gain);
        out["k"] = report.k;
        out["converged_corner"] = report.converged_corner;
        out["entropy_trace"] = report.entropy_trace;
        out["corner_distance_trace"] = report.corner_distance_trace;
        if (!plot_dir.empty()) {
            std::filesystem::create_directories(plot_dir);
            std::vector<double> xs(report.entropy_trace.size());
            for (std::size_t i = 0; i < xs.size(); ++i) xs[i] = static_cast<double>(i);
            plot::LineChart chart("Repeated softmax with logit gain", "iteration", "value");
            chart.add_series("entropy (nats)", xs, report.entropy_trace);
            chart.add_series("corner distance", xs, report.corner_distance_trace);
            chart.write(plot_dir + "/iterate.svg");
            out["plot"] = plot_dir + "/iterate.svg";
        }
    } else {
        throw std::runtime_error("unknown experiment " + experiment);
    }
    std::cout << out.dump(2) << "\n";
    return 0;
}

int run_plot(const std::string& run_dir, std::string out_dir) {
    if (out_dir.empty()) out_dir = run_dir;
    std::filesystem::create_directories(out_dir);
    std::ifstream metrics(run_dir + "/metrics.jsonl");
    if (!metrics) throw std::runtime_error("plot: cannot open " + run_dir + "/metrics.jsonl");

    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> curves;
    std::string line;
    while (std::getline(metrics, line)) {
        if (line.empty()) continue;
        const json record = json::parse(line);
        const double step = record.at("step").get<double>();
        for (const auto& [key, value] : record.items()) {
            if (!value.is_number()) continue;
            if (key == "step") continue;
            curves[key].first.push_back(step);
            curves[key].second.push_back(value.get<double>());
        }
    }

    plot::LineChart losses("Training losses", "step", "loss");
    for (const auto& [key, data] : curves) {
        if (key == "loss" || key.rfind("loss.", 0) == 0) {
            losses.add_series(key, data.first, data.second);
        }
    }
    losses.write(out_dir + "/loss_curves.svg");

    plot::LineChart evals("Held-out evaluation", "step", "score");
    bool any_eval = false;
    for (const auto& [key, data] : curves) {
        if (key.rfind("eval.", 0) == 0) {
            evals.add_series(key.substr(5), data.first, data.second);
            any_eval = true;
        }
    }
    if (any_eval) evals.write(out_dir + "/eval_curves.svg");

    std::printf("wrote %s/loss_curves.svg%s\n", out_dir.c_str(),
                any_eval ? " and eval_curves.svg" : "");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Desk-scale contrastive alignment laboratory"};
    app.require_subcommand(1);

    // train
    std::string config_path;
    auto* train_cmd = app.add_subcommand("train", "Train an objective on synthetic planted data");
    train_cmd->add_option("--config", config_path, "flat key = value config file")->required();

    // eval
    std::string checkpoint_path, metric, embeddings_path, candidates_path, references_path;
    std::string mode_name = "all", lexicon_path, truth_path;
    std::vector<std::int64_t> foreground;
    std::int64_t eval_batch = 0;
    std::uint64_t eval_seed = 7777;
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint or embedding dump");
    eval_cmd->add_option("--checkpoint", checkpoint_path, "parameter checkpoint");
    eval_cmd->add_option("--metric", metric, "retrieval | kprecision | segmentation")->required();
    eval_cmd->add_option("--embeddings", embeddings_path, "embedding dump (JSON lines)");
    eval_cmd->add_option("--candidates", candidates_path, "one tokenized caption per line");
    eval_cmd->add_option("--references", references_path,
                         "tab-separated ground-truth captions per line");
    eval_cmd->add_option("--mode", mode_name, "all | noun_adj");
    eval_cmd->add_option("--lexicon", lexicon_path, "word<TAB>tag lexicon file");
    eval_cmd->add_option("--ground-truth", truth_path, "mask file: H W background then H*W ids");
    eval_cmd->add_option("--foreground", foreground, "foreground class ids (default: all)");
    eval_cmd->add_option("--batch-size", eval_batch, "held-out batch size for retrieval");
    eval_cmd->add_option("--seed", eval_seed, "held-out batch seed");

    // cost
    std::string cost_out = "cost_report";
    std::vector<std::int64_t> cost_batches = {2, 4, 8, 16};
    std::int64_t cost_tokens = 2, cost_patches = 8, cost_dim = 48;
    auto* cost_cmd = app.add_subcommand("cost", "Sweep objective flops and peak memory");
    cost_cmd->add_flag("--sweep", "run the batch-size sweep (default behavior)");
    cost_cmd->add_option("--out", cost_out, "output directory");
    cost_cmd->add_option("--batches", cost_batches, "swept batch sizes");
    cost_cmd->add_option("--tokens", cost_tokens, "tokens per caption");
    cost_cmd->add_option("--patches", cost_patches, "patches per image");
    cost_cmd->add_option("--dim", cost_dim, "shared embedding dim");

    // softmax-lab
    std::string experiment, logits_csv, lab_plot_dir;
    std::int64_t lab_k = 128, lab_trials = 128, lab_steps = 50;
    double lab_gain = 5.0;
    std::uint64_t lab_seed = 1;
    auto* lab_cmd = app.add_subcommand("softmax-lab", "Softmax gradient and dynamics experiments");
    lab_cmd->add_option("--experiment", experiment, "jacobian | gradscale | iterate")->required();
    lab_cmd->add_option("--k", lab_k, "vector length (gradscale sweeps 8..k)");
    lab_cmd->add_option("--trials", lab_trials, "random trials per k");
    lab_cmd->add_option("--steps", lab_steps, "iteration steps");
    lab_cmd->add_option("--gain", lab_gain, "logit gain (> 1)");
    lab_cmd->add_option("--seed", lab_seed, "rng seed");
    lab_cmd->add_option("--logits", logits_csv, "comma-separated initial logits");
    lab_cmd->add_option("--plot", lab_plot_dir, "write SVG plots into this directory");

    // plot
    std::string plot_run, plot_out;
    auto* plot_cmd = app.add_subcommand("plot", "Render SVG charts from a run directory");
    plot_cmd->add_option("--run", plot_run, "run directory with metrics.jsonl")->required();
    plot_cmd->add_option("--out", plot_out, "output directory (default: the run directory)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train_cmd) return run_train(config_path);
        if (*eval_cmd) {
            if (metric == "retrieval") {
                if (checkpoint_path.empty() && embeddings_path.empty()) {
                    throw std::runtime_error("retrieval needs --checkpoint or --embeddings");
                }
                return run_eval_retrieval(checkpoint_path, embeddings_path, eval_batch, eval_seed);
            }
            if (metric == "kprecision") {
                return run_eval_kprecision(candidates_path, references_path, mode_name,
                                           lexicon_path);
            }
            if (metric == "segmentation") {
                return run_eval_segmentation(embeddings_path, truth_path, foreground);
            }
            throw std::runtime_error("unknown metric " + metric);
        }
        if (*cost_cmd) return run_cost(cost_out, cost_batches, cost_tokens, cost_patches, cost_dim);
        if (*lab_cmd) {
            return run_softmax_lab(experiment, lab_k, lab_trials, lab_steps, lab_gain, lab_seed,
                                   logits_csv, lab_plot_dir);
        }
        if (*plot_cmd) return run_plot(plot_run, plot_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
