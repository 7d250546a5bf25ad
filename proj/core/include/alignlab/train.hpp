#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "alignlab/config.hpp"
#include "alignlab/encoder.hpp"
#include "alignlab/losses.hpp"
#include "alignlab/synthetic.hpp"

namespace alignlab {

struct TrainConfig {
    EncoderConfig encoder;
    SyntheticSpec data;
    LossConfig loss;
    double lr = 1e-3;
    double weight_decay = 0.1;
    std::int64_t warmup_steps = 100;
    std::int64_t total_steps = 2000;
    std::int64_t batch_size = 32;
    std::int64_t eval_every = 200;
    std::uint64_t seed = 0;
    double temperature_init = 0.07;
    bool temperature_learnable = true;
    std::string run_dir = "run";

    void validate() const;
};

TrainConfig train_config_from_kv(const KeyValueConfig& kv);
TrainConfig train_config_from_file(const std::string& path);
KeyValueConfig train_config_to_kv(const TrainConfig& config);

struct TrainResult {
    std::string run_dir;
    bool aborted_nan = false;
    std::int64_t steps_completed = 0;
    // Final held-out metrics (alignment scores only for the sparc family).
    double retrieval_r1_i2t = 0.0;
    double retrieval_r1_t2i = 0.0;
    double alignment_precision = 0.0;
    double alignment_recall = 0.0;
    double alignment_multi_patch_recall = 0.0;
};

/// Deterministic under (config, seed, single thread): two identical runs
/// produce byte-identical metrics.jsonl files. Writes metrics.jsonl,
/// config.txt, checkpoint files and report.json into run_dir. NaN losses
/// abort with the last state checkpointed and a diagnostic dump.
TrainResult train(const TrainConfig& config);

/// Held-out evaluation used during training and by the eval CLI.
struct HeldOutScores {
    double r1_i2t = 0.0, r5_i2t = 0.0, r10_i2t = 0.0;
    double r1_t2i = 0.0, r5_t2i = 0.0, r10_t2i = 0.0;
    RecoveryScore recovery;
    bool has_recovery = false;
};

HeldOutScores evaluate_held_out(const TrainConfig& config, const ParamMap& encoder_params,
                                std::uint64_t eval_seed);

}  // namespace alignlab
