#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "facecap/captioner.hpp"
#include "facecap/corpus.hpp"

namespace facecap {

struct TrainConfig {
    double lr_init = 0.001;
    double lr_min = 0.0001;
    int batch_size = 100;
    int max_epochs = 20;
    int plateau_patience = 2;
    std::uint64_t seed = 42;
    VariantConfig variant;
    ModelDims dims;
    LossReduction reduction = LossReduction::Mean;
    FacelessPolicy faceless = FacelessPolicy::Error;
    int val_max_len = 20;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
};

struct TrainState {
    int epoch = 0;         // completed epochs, 1-based after the first
    double lr = 0.0;
    std::vector<double> meteor_history;  // one entry per completed epoch
    double best_meteor = 0.0;
    int best_epoch = 0;                  // 0 = none yet
    std::string best_checkpoint;         // filename inside the run directory
};

enum class LrAction { Keep, HalveAndReload };

// Pure function of the METEOR history: halve-and-reload iff the last
// `patience` epochs all fail to exceed the running best from before them.
// Ties count as non-improvement.
LrAction lr_schedule_update(const TrainState& state, int patience = 2);

// One pass over the training pairs: epoch-seeded shuffle, gradient
// accumulation per mini-batch (mean over the batch), one Adam step per batch.
// Returns the mean per-pair loss. Aborts with NumericError naming the sample
// on a non-finite loss.
double train_epoch(const Dataset& ds, DecoderParams& model, AdamState& adam,
                   const TrainConfig& cfg, int epoch, double lr);

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
    TrainConfig config;
    DecoderParams model;
    AdamState adam;
    TrainState state;
    Vocabulary vocab;
};

// Versioned little-endian binary ('FCKP'); save -> load round-trips every
// field bit-exactly. Truncated or corrupt files raise CheckpointError with
// the byte offset.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

struct EpochLog {
    int epoch;
    double train_loss;
    double val_meteor;
    double lr;  // the rate this epoch trained with
};
using EpochCallback = std::function<void(const EpochLog&)>;

// Full protocol: trains up to max_epochs, evaluates METEOR-lite on the
// validation split (greedy decoding) after each epoch, applies the plateau
// schedule with best-checkpoint reload, and returns the checkpoint with the
// highest validation score. Per-epoch checkpoints land in out_dir. Passing
// resume_path continues a run from a saved checkpoint.
Checkpoint fit(const Dataset& ds, const TrainConfig& cfg, const std::string& out_dir,
               const EpochCallback& on_epoch = {}, const std::string& resume_path = "");

// Greedy-decoding METEOR-lite of `model` over a split.
double validation_meteor(const std::vector<ImageRecord>& split, const DecoderParams& model,
                         const Vocabulary& vocab, const TrainConfig& cfg);

std::string epoch_checkpoint_name(int epoch);

}  // namespace facecap
