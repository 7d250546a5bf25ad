#include "alignlab/train.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "alignlab/checkpoint.hpp"
#include "alignlab/eval_metrics.hpp"
#include "alignlab/optim.hpp"
#include "alignlab/random.hpp"

namespace alignlab {

namespace {

// Metrics timestamps are logical (reference epoch + step seconds) so that
// identical runs produce byte-identical files; wall-clock time goes to
// report.json only.
std::string logical_timestamp(std::int64_t step) {
    const std::int64_t base = 946684800;  // 2000-01-01T00:00:00Z
    const std::time_t t = static_cast<std::time_t>(base + step);
    std::tm tm_utc{};
    gmtime_r(&t, &tm_utc);
    char buffer[32];
    std::strftime(buffer, sizeof(buffer), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buffer;
}

AlignmentMode mode_for(Objective objective) {
    switch (objective) {
        case Objective::kSparcNoSparsity: return AlignmentMode::kNoSparsity;
        case Objective::kSparcSoftmax: return AlignmentMode::kSoftmax;
        default: return AlignmentMode::kSparseMinmax;
    }
}

bool is_sparc_family(Objective objective) {
    return objective == Objective::kSparc || objective == Objective::kSparcNoSparsity ||
           objective == Objective::kSparcSoftmax;
}

}  // namespace

void TrainConfig::validate() const {
    encoder.validate();
    data.validate();
    if (warmup_steps > total_steps || total_steps <= 0 || batch_size <= 0 || eval_every <= 0) {
        throw std::invalid_argument("train config: bad step/batch settings");
    }
    if (lr <= 0.0 || temperature_init <= 0.0) {
        throw std::invalid_argument("train config: lr and temperature must be positive");
    }
    if (encoder.num_patches != data.num_patches || encoder.max_tokens != data.max_tokens ||
        encoder.vocab_size != data.vocab_size || encoder.patch_dim != data.patch_dim) {
        throw std::invalid_argument("train config: encoder and data dimensions disagree");
    }
}

TrainConfig train_config_from_kv(const KeyValueConfig& kv) {
    TrainConfig config;
    const std::string objective = kv.get_string("objective", "sparc");
    const auto parsed = objective_from_name(objective);
    if (!parsed) throw std::runtime_error("config: unknown objective " + objective);
    config.loss.variant = *parsed;
    config.loss.lambda_g = kv.get_double("lambda_g", 0.5);
    config.loss.lambda_f = kv.get_double("lambda_f", 1.0);
    const std::string sigma = kv.get_string("sparsity_threshold", "auto");
    config.loss.sparsity_threshold = sigma == "auto" ? -1.0 : std::stod(sigma);
    config.loss.filip_token_drop = kv.get_double("filip_token_drop", 0.2);
    config.loss.gloria_scale = kv.get_bool("gloria_scale", true);
    config.loss.mgca.attn_dim = kv.get_int("mgca.attn_dim", 128);
    config.loss.mgca.num_prototypes = kv.get_int("mgca.num_prototypes", 500);
    config.loss.mgca.sinkhorn_eps = kv.get_double("mgca.sinkhorn_eps", 0.05);
    config.loss.mgca.sinkhorn_iters = kv.get_int("mgca.sinkhorn_iters", 3);

    config.lr = kv.get_double("lr", 1e-3);
    config.weight_decay = kv.get_double("weight_decay", 0.1);
    config.warmup_steps = kv.get_int("warmup_steps", 100);
    config.total_steps = kv.get_int("total_steps", 2000);
    config.batch_size = kv.get_int("batch_size", 32);
    config.eval_every = kv.get_int("eval_every", 200);
    config.seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));
    config.temperature_init = kv.get_double("temperature_init", 0.07);
    config.temperature_learnable = kv.get_bool("temperature_learnable", true);
    config.run_dir = kv.get_string("run_dir", "run");

    config.encoder.num_patches = kv.get_int("enc.num_patches", 16);
    config.encoder.max_tokens = kv.get_int("enc.max_tokens", 6);
    config.encoder.vocab_size = kv.get_int("enc.vocab_size", 16);
    config.encoder.patch_dim = kv.get_int("enc.patch_dim", 32);
    config.encoder.model_width = kv.get_int("enc.model_width", 32);
    config.encoder.num_layers = kv.get_int("enc.num_layers", 0);
    config.encoder.num_heads = kv.get_int("enc.num_heads", 1);
    config.encoder.shared_dim = kv.get_int("enc.shared_dim", 32);
    config.encoder.positional_embeddings = kv.get_bool("enc.positional_embeddings", false);

    config.data.num_concepts = kv.get_int("data.num_concepts", 10);
    config.data.patches_per_concept_min = kv.get_int("data.patches_min", 2);
    config.data.patches_per_concept_max = kv.get_int("data.patches_max", 2);
    config.data.noise_std = kv.get_double("data.noise_std", 0.02);
    config.data.distractor_std = kv.get_double("data.distractor_std", 1.0);
    config.data.num_patches = config.encoder.num_patches;
    config.data.max_tokens = config.encoder.max_tokens;
    config.data.vocab_size = config.encoder.vocab_size;
    config.data.patch_dim = config.encoder.patch_dim;
    config.data.seed = config.seed;
    config.validate();
    return config;
}

TrainConfig train_config_from_file(const std::string& path) {
    return train_config_from_kv(KeyValueConfig::from_file(path));
}

KeyValueConfig train_config_to_kv(const TrainConfig& config) {
    KeyValueConfig kv;
    kv.set("objective", objective_name(config.loss.variant));
    kv.set("lambda_g", std::to_string(config.loss.lambda_g));
    kv.set("lambda_f", std::to_string(config.loss.lambda_f));
    kv.set("sparsity_threshold", config.loss.sparsity_threshold < 0
                                     ? "auto"
                                     : std::to_string(config.loss.sparsity_threshold));
    kv.set("filip_token_drop", std::to_string(config.loss.filip_token_drop));
    kv.set("gloria_scale", config.loss.gloria_scale ? "true" : "false");
    kv.set("mgca.attn_dim", std::to_string(config.loss.mgca.attn_dim));
    kv.set("mgca.num_prototypes", std::to_string(config.loss.mgca.num_prototypes));
    kv.set("mgca.sinkhorn_eps", std::to_string(config.loss.mgca.sinkhorn_eps));
    kv.set("mgca.sinkhorn_iters", std::to_string(config.loss.mgca.sinkhorn_iters));
    kv.set("lr", std::to_string(config.lr));
    kv.set("weight_decay", std::to_string(config.weight_decay));
    kv.set("warmup_steps", std::to_string(config.warmup_steps));
    kv.set("total_steps", std::to_string(config.total_steps));
    kv.set("batch_size", std::to_string(config.batch_size));
    kv.set("eval_every", std::to_string(config.eval_every));
    kv.set("seed", std::to_string(config.seed));
    kv.set("temperature_init", std::to_string(config.temperature_init));
    kv.set("temperature_learnable", config.temperature_learnable ? "true" : "false");
    kv.set("run_dir", config.run_dir);
    kv.set("enc.num_patches", std::to_string(config.encoder.num_patches));
    kv.set("enc.max_tokens", std::to_string(config.encoder.max_tokens));
    kv.set("enc.vocab_size", std::to_string(config.encoder.vocab_size));
    kv.set("enc.patch_dim", std::to_string(config.encoder.patch_dim));
    kv.set("enc.model_width", std::to_string(config.encoder.model_width));
    kv.set("enc.num_layers", std::to_string(config.encoder.num_layers));
    kv.set("enc.num_heads", std::to_string(config.encoder.num_heads));
    kv.set("enc.shared_dim", std::to_string(config.encoder.shared_dim));
    kv.set("enc.positional_embeddings", config.encoder.positional_embeddings ? "true" : "false");
    kv.set("data.num_concepts", std::to_string(config.data.num_concepts));
    kv.set("data.patches_min", std::to_string(config.data.patches_per_concept_min));
    kv.set("data.patches_max", std::to_string(config.data.patches_per_concept_max));
    kv.set("data.noise_std", std::to_string(config.data.noise_std));
    kv.set("data.distractor_std", std::to_string(config.data.distractor_std));
    return kv;
}

HeldOutScores evaluate_held_out(const TrainConfig& config, const ParamMap& encoder_params,
                                std::uint64_t eval_seed) {
    NoGradGuard no_grad;
    SyntheticGenerator generator(config.data);
    HeldOutScores scores;
    const std::int64_t eval_batch = std::max<std::int64_t>(config.batch_size, 16);
    auto [batch, planted] = generator.generate(eval_batch, eval_seed);
    EmbeddingSet embeddings = encode_batch(batch, encoder_params, config.encoder);

    // Retrieval over pooled embeddings.
    std::vector<double> sim(static_cast<std::size_t>(eval_batch * eval_batch));
    Tensor v_hat = l2_normalize(embeddings.v_bar, 1);
    Tensor t_hat = l2_normalize(embeddings.t_bar, 1);
    Tensor cosines = matmul(v_hat, t_hat, false, true);
    std::copy(cosines.data().begin(), cosines.data().end(), sim.begin());
    const std::vector<std::int64_t> ks = {1, 5, 10};
    auto retrieval = recall_at_k(sim, eval_batch, ks);
    scores.r1_i2t = retrieval.image_to_text.at(1);
    scores.r5_i2t = retrieval.image_to_text.at(5);
    scores.r10_i2t = retrieval.image_to_text.at(10);
    scores.r1_t2i = retrieval.text_to_image.at(1);
    scores.r5_t2i = retrieval.text_to_image.at(5);
    scores.r10_t2i = retrieval.text_to_image.at(10);

    if (is_sparc_family(config.loss.variant)) {
        const double sigma = config.loss.resolve_sigma(config.encoder.num_patches);
        auto alignments =
            batch_alignments(embeddings, batch, sigma, mode_for(config.loss.variant));
        scores.recovery =
            alignment_recovery_score(alignments, planted, config.encoder.num_patches);
        scores.has_recovery = true;
    }
    return scores;
}

TrainResult train(const TrainConfig& config) {
    config.validate();
    const auto wall_start = std::chrono::steady_clock::now();
    std::filesystem::create_directories(config.run_dir);

    {
        std::ofstream config_out(config.run_dir + "/config.txt");
        config_out << train_config_to_kv(config).to_text();
    }
    std::ofstream metrics(config.run_dir + "/metrics.jsonl");
    if (!metrics) throw std::runtime_error("train: cannot write metrics in " + config.run_dir);

    SyntheticGenerator generator(config.data);
    ParamMap params = init_encoder_params(config.encoder, config.seed);
    params["log_temperature"] =
        Tensor::scalar(std::log(config.temperature_init), config.temperature_learnable);
    {
        ParamMap extra =
            init_objective_params(config.loss, config.encoder.shared_dim, config.seed);
        for (auto& [name, tensor] : extra) params[name] = tensor;
    }
    const auto loss_params_view = [&]() {
        LossParams lp;
        lp.log_temperature = params.at("log_temperature");
        for (const auto& [name, tensor] : params) {
            if (name.rfind("mgca.", 0) == 0) lp.extra[name] = tensor;
        }
        return lp;
    };

    AdamWConfig adam_cfg;
    adam_cfg.weight_decay = config.weight_decay;
    AdamW optimizer(adam_cfg);

    const auto save = [&](const std::string& name) {
        std::map<std::string, std::string> metadata;
        metadata["objective"] = objective_name(config.loss.variant);
        metadata["config"] = train_config_to_kv(config).to_text();
        save_checkpoint(config.run_dir + "/" + name, params, metadata);
    };

    TrainResult result;
    result.run_dir = config.run_dir;
    LossConfig loss_cfg = config.loss;

    for (std::int64_t step = 0; step < config.total_steps; ++step) {
        const double lr_t = lr_schedule(step, config.lr, config.warmup_steps, config.total_steps);
        auto [batch, planted] = generator.generate(config.batch_size, derive_seed(config.seed, static_cast<std::uint64_t>(step)));
        loss_cfg.seed = derive_seed(config.seed ^ 0xd409ull, static_cast<std::uint64_t>(step));

        // Documented failure mode for unstable objectives: abort with the
        // last parameter state and a diagnostic dump.
        const auto abort_run = [&](const std::string& reason, const LossOutput* out) {
            nlohmann::json dump;
            dump["step"] = step;
            dump["lr"] = lr_t;
            dump["objective"] = objective_name(config.loss.variant);
            dump["reason"] = reason;
            if (out != nullptr) {
                for (const auto& [name, component] : out->components) {
                    dump["components"][name] = component.item();
                }
                for (const auto& [name, value] : out->diagnostics) {
                    dump["diagnostics"][name] = value;
                }
            }
            std::ofstream(config.run_dir + "/nan_dump.json") << dump.dump(2) << "\n";
            save("checkpoint_last_good.ckpt");
            result.aborted_nan = true;
            result.steps_completed = step;
        };

        LossOutput out;
        try {
            EmbeddingSet embeddings = encode_batch(batch, params, config.encoder);
            out = evaluate_objective(embeddings, batch, loss_params_view(), loss_cfg);
        } catch (const NumericError& e) {
            abort_run(e.what(), nullptr);
            return result;
        }
        if (!all_finite(out.total)) {
            abort_run("non-finite loss", &out);
            return result;
        }

        for (auto& [name, tensor] : params) tensor.zero_grad();
        out.total.backward();
        optimizer.step(params, lr_t);

        nlohmann::json record;
        record["ts"] = logical_timestamp(step);
        record["step"] = step;
        record["lr"] = lr_t;
        record["loss"] = out.total.item();
        for (const auto& [name, component] : out.components) {
            record["loss." + name] = component.item();
        }
        for (const auto& [name, value] : out.diagnostics) {
            if (name.rfind("fine_grained.pair", 0) == 0) continue;  // too chatty per step
            record[name] = value;
        }

        const bool eval_now =
            (step + 1) % config.eval_every == 0 || step + 1 == config.total_steps;
        if (eval_now) {
            auto scores = evaluate_held_out(config, params, derive_seed(config.seed, 0xe7a1));
            record["eval.r1_i2t"] = scores.r1_i2t;
            record["eval.r5_i2t"] = scores.r5_i2t;
            record["eval.r10_i2t"] = scores.r10_i2t;
            record["eval.r1_t2i"] = scores.r1_t2i;
            record["eval.r5_t2i"] = scores.r5_t2i;
            record["eval.r10_t2i"] = scores.r10_t2i;
            if (scores.has_recovery) {
                record["eval.alignment_precision"] = scores.recovery.precision;
                record["eval.alignment_recall"] = scores.recovery.recall;
                record["eval.alignment_multi_patch_recall"] = scores.recovery.multi_patch_recall;
            }
            result.retrieval_r1_i2t = scores.r1_i2t;
            result.retrieval_r1_t2i = scores.r1_t2i;
            result.alignment_precision = scores.recovery.precision;
            result.alignment_recall = scores.recovery.recall;
            result.alignment_multi_patch_recall = scores.recovery.multi_patch_recall;
            save("checkpoint_last.ckpt");
        }
        metrics << record.dump() << "\n";
    }
    result.steps_completed = config.total_steps;
    save("checkpoint_final.ckpt");

    const auto wall_end = std::chrono::steady_clock::now();
    nlohmann::json report;
    report["steps"] = result.steps_completed;
    report["wall_seconds"] =
        std::chrono::duration_cast<std::chrono::milliseconds>(wall_end - wall_start).count() / 1000.0;
    report["final.r1_i2t"] = result.retrieval_r1_i2t;
    report["final.r1_t2i"] = result.retrieval_r1_t2i;
    report["final.alignment_precision"] = result.alignment_precision;
    report["final.alignment_recall"] = result.alignment_recall;
    report["final.alignment_multi_patch_recall"] = result.alignment_multi_patch_recall;
    std::ofstream(config.run_dir + "/report.json") << report.dump(2) << "\n";
    return result;
}

}  // namespace alignlab
