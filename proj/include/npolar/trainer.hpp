#pragma once

#include "npolar/channel.hpp"
#include "npolar/codec.hpp"

#include <map>

namespace npolar {

// Channel family with sigma left open; sigma is filled in from the SNR at use.
struct ChannelTemplate {
    ChannelKind kind = ChannelKind::awgn;
    double rho = 0.0;
    double sigma_b = 0.0;        // absolute burst std, used when sigma_b_scale == 0
    double sigma_b_scale = 0.0;  // burst std as a multiple of sigma, when > 0

    ChannelSpec at_sigma(double sigma) const;
};

struct TrainPlan {
    int batch = 512;
    int epochs = 150;
    int steps_dec = 100;
    int steps_enc = 10;
    double snr_enc_db = 0.0;
    double snr_dec_db = -2.0;
    double lr_enc = 1e-4;
    double lr_dec = 1e-4;
    ChannelTemplate channel;
    uint64_t seed = 0;
    int grad_accum = 1;

    static TrainPlan paper_preset();  // B=20000, E=2000, T_dec=200, T_enc=20
};

struct LossRecord {
    long step;
    char phase;  // 'd' or 'e'
    double loss;
};

enum class TrainLoss { bce, bler_l1 };

struct TrainOptions {
    bool update_encoder = true;
    bool update_decoder = true;
    bool binarize = false;   // STE sign at the encoder output
    bool parallel = false;   // train the one-shot leaf decoders
    TrainLoss loss = TrainLoss::bce;
    bool classical_encoder = false;  // fixed bipolar polar encoder (decoder-only training)
    std::string abort_checkpoint_path;  // written when training diverges
};

struct TrainResult {
    std::vector<LossRecord> trace;
    long steps = 0;
    bool aborted_nan = false;
    bool vanishing_gradient_warning = false;
};

TrainResult train_alternating(NeuralCode& code, const TrainPlan& plan,
                              const TrainOptions& options = {});

// Stage-1 curriculum: single-kernel codes (n=ell, k=j) for j = 1..ell,
// encoder and existing sub-decoders carried over between rates.
struct KernelStore {
    int ell = 0;
    std::map<int, NeuralCode> codes;  // keyed by information-bit count j
};

KernelStore curriculum_stage1(int ell, const TrainPlan& plan, int enc_hidden, int dec_hidden,
                              int hidden_layers, std::vector<TrainResult>* traces = nullptr);

struct Stage2Audit {
    struct Entry {
        int level, node, source_j;
    };
    std::vector<Entry> entries;
};

// Transplants pretrained kernels into every tree node with >= 1 non-frozen input.
Stage2Audit curriculum_stage2_init(NeuralCode& code, const KernelStore& store);

TrainResult finetune_ste(NeuralCode& code, const TrainPlan& plan);

enum class BlerFinetuneKind { product_l1, high_snr_bce };
TrainResult finetune_bler(NeuralCode& code, const TrainPlan& plan, BlerFinetuneKind kind);

TrainResult adapt_to_channel(NeuralCode& code, const TrainPlan& plan, bool joint = false);

void write_loss_trace_csv(const std::string& path, const std::vector<LossRecord>& trace);

}  // namespace npolar
