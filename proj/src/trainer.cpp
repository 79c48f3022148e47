#include "npolar/trainer.hpp"

#include <cmath>
#include <fstream>

namespace npolar {

ChannelSpec ChannelTemplate::at_sigma(double sigma) const {
    ChannelSpec spec;
    spec.kind = kind;
    spec.sigma = sigma;
    spec.rho = rho;
    spec.sigma_b = sigma_b_scale > 0.0 ? sigma_b_scale * sigma : sigma_b;
    return spec;
}

TrainPlan TrainPlan::paper_preset() {
    TrainPlan p;
    p.batch = 20000;
    p.epochs = 2000;
    p.steps_dec = 200;
    p.steps_enc = 20;
    return p;
}

namespace {

constexpr uint64_t kMessageStream = 1;
constexpr uint64_t kNoiseStream = 2;

BitMat random_messages(int batch, int k, uint64_t seed) {
    GaussianRng rng(seed);
    BitMat u(batch, k);
    for (int r = 0; r < batch; ++r)
        for (int c = 0; c < k; ++c) u(r, c) = rng.bit();
    return u;
}

Mat classical_bipolar_encode(const CodeLayout& layout, const BitMat& u) {
    Mat x(u.rows(), layout.n);
    Bits msg(layout.k);
    for (Eigen::Index r = 0; r < u.rows(); ++r) {
        for (int i = 0; i < layout.k; ++i) msg[i] = u(r, i);
        Bits cw = polar_encode(layout, msg);
        for (int i = 0; i < layout.n; ++i) x(r, i) = bit_to_symbol(cw[i]);
    }
    return x;
}

// L1 = 1 - prod_i sigmoid((2u_i - 1) L_i), averaged over the batch.
std::pair<double, Mat> bler_l1_loss(const Mat& logits, const BitMat& targets) {
    const double batch = static_cast<double>(logits.rows());
    auto softplus = [](double x) {
        return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
    };
    double loss = 0.0;
    Mat grad(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        double logp = 0.0;
        for (Eigen::Index c = 0; c < logits.cols(); ++c) {
            double a = (2.0 * targets(r, c) - 1.0) * logits(r, c);
            logp += -softplus(-a);  // log sigmoid(a)
        }
        double p = std::exp(logp);
        loss += 1.0 - p;
        for (Eigen::Index c = 0; c < logits.cols(); ++c) {
            double s = 2.0 * targets(r, c) - 1.0;
            double a = s * logits(r, c);
            double sig = 1.0 / (1.0 + std::exp(-a));
            grad(r, c) = -p * (1.0 - sig) * s / batch;
        }
    }
    return {loss / batch, std::move(grad)};
}

struct Optimizer {
    std::vector<DenseNet*> nets;
    std::vector<AdamState> states;

    Optimizer(std::vector<DenseNet*> ns, double lr) : nets(std::move(ns)) {
        for (DenseNet* n : nets)
            states.push_back(AdamState::make(static_cast<Eigen::Index>(n->param_count()), lr));
    }
    void apply(const std::map<const DenseNet*, NetGrads>& grads) {
        for (size_t i = 0; i < nets.size(); ++i) {
            auto it = grads.find(nets[i]);
            if (it == grads.end()) continue;
            Vec p = nets[i]->flatten_params();
            adam_step(p, DenseNet::flatten_grads(it->second), states[i]);
            nets[i]->set_params(p);
        }
    }
};

}  // namespace

TrainResult train_alternating(NeuralCode& code, const TrainPlan& plan,
                              const TrainOptions& options) {
    if (plan.batch <= 0 || plan.epochs < 0 || plan.steps_dec < 0 || plan.steps_enc < 0 ||
        plan.grad_accum <= 0)
        throw std::invalid_argument("train_alternating: counts must be positive");

    TrainResult result;
    Optimizer enc_opt(code.encoder_nets(), plan.lr_enc);
    Optimizer dec_opt(code.decoder_nets(), plan.lr_dec);

    const NormMode eval_mode = code.stats.mode;
    if (!options.binarize && !options.classical_encoder) code.stats.mode = NormMode::batch;

    NeuralCode last_good = code;
    long step = 0;
    int stall_steps = 0;

    auto run_step = [&](char phase) -> bool {
        const bool dec_phase = phase == 'd';
        const double sigma =
            snr_db_to_sigma(dec_phase ? plan.snr_dec_db : plan.snr_enc_db);
        const ChannelSpec spec = plan.channel.at_sigma(sigma);

        std::map<const DenseNet*, NetGrads> accum;
        double loss_sum = 0.0;
        double grad_peak = 0.0;
        for (int a = 0; a < plan.grad_accum; ++a) {
            const uint64_t idx = static_cast<uint64_t>(step) * plan.grad_accum + a;
            BitMat u = random_messages(plan.batch, code.layout.k,
                                       derive_seed(plan.seed, kMessageStream, idx));
            Tape tape;
            Tape::Var* x;
            if (options.classical_encoder) {
                x = tape.constant(classical_bipolar_encode(code.layout, u));
            } else {
                x = dp_encode_t(tape, code, u, /*training=*/true, options.binarize);
            }
            ChannelRealization ch =
                apply_channel_traced(spec, x->val, derive_seed(plan.seed, kNoiseStream, idx));
            Tape::Var* y = spec.kind == ChannelKind::rayleigh_fast
                               ? tape.fade_and_noise(x, ch.fading, ch.y - ch.fading.cwiseProduct(x->val))
                               : tape.add_noise(x, ch.y - x->val);
            Tape::Var* logits = dp_decode_t(tape, code, y, FeedbackMode::soft, options.parallel);

            auto [loss, grad] = options.loss == TrainLoss::bce
                                    ? bce_with_logits(logits->val, u)
                                    : bler_l1_loss(logits->val, u);
            loss_sum += loss;
            tape.backward(logits, grad / static_cast<double>(plan.grad_accum));

            auto harvest = [&](const std::vector<DenseNet*>& nets) {
                for (DenseNet* n : nets) {
                    const NetGrads* g = tape.grads_for(n);
                    if (!g) continue;
                    auto it = accum.find(n);
                    if (it == accum.end())
                        accum.emplace(n, *g);
                    else
                        it->second.add(*g);
                }
            };
            if (dec_phase)
                harvest(dec_opt.nets);
            else
                harvest(enc_opt.nets);
        }
        const double loss = loss_sum / plan.grad_accum;
        result.trace.push_back({step, phase, loss});
        ++step;
        ++result.steps;

        if (!std::isfinite(loss)) {
            result.aborted_nan = true;
            code = last_good;
            code.stats.mode = eval_mode;
            if (!options.abort_checkpoint_path.empty())
                save_checkpoint(code, options.abort_checkpoint_path);
            return false;
        }
        for (const auto& [net, g] : accum) grad_peak = std::max(grad_peak, g.max_abs());
        if (grad_peak < 1e-12) {
            if (++stall_steps >= 100) result.vanishing_gradient_warning = true;
        } else {
            stall_steps = 0;
        }
        if (dec_phase)
            dec_opt.apply(accum);
        else
            enc_opt.apply(accum);
        return true;
    };

    for (int epoch = 0; epoch < plan.epochs; ++epoch) {
        last_good = code;
        for (int t = 0; t < plan.steps_dec; ++t)
            if (options.update_decoder && !run_step('d')) return result;
        for (int t = 0; t < plan.steps_enc; ++t)
            if (options.update_encoder && !options.classical_encoder && !run_step('e'))
                return result;
    }
    code.stats.mode = eval_mode;
    return result;
}

KernelStore curriculum_stage1(int ell, const TrainPlan& plan, int enc_hidden, int dec_hidden,
                              int hidden_layers, std::vector<TrainResult>* traces) {
    KernelStore store;
    store.ell = ell;
    ReliabilityOrder order = construct_reliability(ell);
    for (int j = 1; j <= ell; ++j) {
        CodeLayout layout = make_layout(ell, j, ell, order);
        NeuralCode code = NeuralCode::make(layout, enc_hidden, dec_hidden, hidden_layers,
                                           derive_seed(plan.seed, 100, j));
        if (j > 1) {
            const NeuralCode& prev = store.codes.at(j - 1);
            code.enc[0][0] = prev.enc[0][0];
            // previously unfrozen positions keep their sub-decoders; the new one stays fresh
            for (int pos : prev.layout.info) code.dec[0][pos] = prev.dec[0][pos];
            code.stats = prev.stats;
        }
        TrainPlan sub = plan;
        sub.seed = derive_seed(plan.seed, 101, j);
        TrainResult r = train_alternating(code, sub);
        if (traces) traces->push_back(std::move(r));
        store.codes.emplace(j, std::move(code));
    }
    return store;
}

namespace {

// Copies a pretrained sub-decoder into a slot whose feedback count may differ.
// First ell columns (soft inputs) always copy; overlapping feedback columns copy;
// any extra feedback columns keep their fresh initialization.
void transplant_subdecoder(const DenseNet& src, int src_pos, DenseNet& dst, int dst_pos,
                           int ell) {
    for (size_t l = 0; l < dst.layers.size(); ++l) {
        if (l == 0) {
            int shared = ell + std::min(src_pos, dst_pos);
            dst.layers[0].W.leftCols(shared) = src.layers[0].W.leftCols(shared);
            dst.layers[0].b = src.layers[0].b;
        } else {
            dst.layers[l] = src.layers[l];
        }
    }
}

}  // namespace

Stage2Audit curriculum_stage2_init(NeuralCode& code, const KernelStore& store) {
    Stage2Audit audit;
    const CodeLayout& layout = code.layout;
    const int depth = layout.levels();
    for (int d = 1; d <= depth; ++d) {
        const int ell_d = layout.kernel_at(d);
        if (ell_d != store.ell) continue;  // root of a different size keeps fresh init
        for (int b = 0; b < layout.nodes_at(d); ++b) {
            // non-frozen input slots of this kernel
            std::vector<int> slots;
            for (int j = 0; j < ell_d; ++j) {
                bool has_info = d == 1 ? !layout.is_frozen[b * ell_d + j]
                                       : code.info_count(d - 1, b * ell_d + j) > 0;
                if (has_info) slots.push_back(j);
            }
            const int i = static_cast<int>(slots.size());
            if (i == 0) continue;
            auto it = store.codes.find(i);
            if (it == store.codes.end())
                throw std::runtime_error("curriculum_stage2_init: missing pretrained kernel for " +
                                         std::to_string(i) + " information inputs");
            const NeuralCode& src = it->second;
            code.enc[d - 1][b] = src.enc[0][0];
            for (int t = 0; t < i; ++t) {
                int src_pos = src.layout.info[t];
                int dst_pos = slots[t];
                transplant_subdecoder(*src.dec[0][src_pos], src_pos,
                                      *code.dec[d - 1][b * ell_d + dst_pos], dst_pos, ell_d);
            }
            audit.entries.push_back({d, b, i});
        }
    }
    return audit;
}

TrainResult finetune_ste(NeuralCode& code, const TrainPlan& plan) {
    TrainOptions opt;
    opt.binarize = true;
    return train_alternating(code, plan, opt);
}

TrainResult finetune_bler(NeuralCode& code, const TrainPlan& plan, BlerFinetuneKind kind) {
    TrainOptions opt;
    opt.update_encoder = false;
    opt.loss = kind == BlerFinetuneKind::product_l1 ? TrainLoss::bler_l1 : TrainLoss::bce;
    return train_alternating(code, plan, opt);
}

TrainResult adapt_to_channel(NeuralCode& code, const TrainPlan& plan, bool joint) {
    TrainOptions opt;
    opt.update_encoder = joint;
    return train_alternating(code, plan, opt);
}

void write_loss_trace_csv(const std::string& path, const std::vector<LossRecord>& trace) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write loss trace: " + path);
    out << "step,phase,loss\n";
    char buf[64];
    for (const auto& rec : trace) {
        std::snprintf(buf, sizeof(buf), "%.17g", rec.loss);
        out << rec.step << ',' << rec.phase << ',' << buf << '\n';
    }
}

}  // namespace npolar
