#pragma once

#include "npolar/polar.hpp"

#include <deque>
#include <functional>
#include <map>
#include <optional>

namespace npolar {

enum class NormMode { batch, running, per_codeword };
enum class FeedbackMode { soft, hard };

NormMode norm_mode_from_string(const std::string& s);
std::string to_string(NormMode m);

struct PowerNormStats {
    NormMode mode = NormMode::running;
    double mean = 0.0;
    double var = 1.0;
    double momentum = 0.99;
};

// Trainable codec: kernel encoder nets g[level-1][node], sub-decoder nets
// f[level-1][node*kernel + j] (absent for fully frozen inputs), optional
// one-shot leaf decoders, and power-normalization statistics.
struct NeuralCode {
    CodeLayout layout;
    std::vector<std::vector<DenseNet>> enc;
    std::vector<std::vector<std::optional<DenseNet>>> dec;
    std::vector<std::optional<DenseNet>> leaf_parallel;
    PowerNormStats stats;
    int enc_hidden = 64;
    int dec_hidden = 128;
    int hidden_layers = 3;
    uint64_t seed = 0;

    // Number of information bits among leaf positions covered by a node's subtree.
    int info_count(int level, int node) const;
    bool has_parallel() const { return !leaf_parallel.empty(); }

    std::vector<DenseNet*> encoder_nets();
    std::vector<DenseNet*> decoder_nets();  // includes leaf_parallel when present

    static NeuralCode make(const CodeLayout& layout, int enc_hidden, int dec_hidden,
                           int hidden_layers, uint64_t seed, bool with_parallel = false);
    void zero_encoders();
};

// Reverse-mode recorder over the fixed op set of the codec; not a general autodiff.
class Tape {
  public:
    struct Var {
        Mat val;
        Mat grad;
    };

    Var* constant(Mat v);
    Var* mlp(const DenseNet& net, Var* x);
    // Neural kernel + bipolar Plotkin skip, applied coordinatewise over child blocks.
    Var* kernel_combine(const DenseNet& net, const KernelMatrix& G,
                        const std::vector<Var*>& children);
    // Coordinatewise sub-decoder call on an incoming soft block plus feedback blocks.
    Var* f_apply(const DenseNet& net, Var* lam, const std::vector<Var*>& feedback);
    Var* slice_cols(Var* x, int start, int len);
    Var* concat_cols(const std::vector<Var*>& parts);
    Var* soft_bipolar(Var* logits);        // tanh(-x/2)
    Var* hard_bipolar(Var* logits);        // detached +-1, tie -> +1
    Var* add_noise(Var* x, const Mat& noise);
    Var* fade_and_noise(Var* x, const Mat& h, const Mat& noise);
    Var* normalize_batch(Var* x, PowerNormStats& stats, bool update_running);
    Var* normalize_running(Var* x, const PowerNormStats& stats);
    Var* normalize_per_codeword(Var* x);
    Var* ste_sign(Var* x);

    void backward(Var* out, const Mat& seed_grad);
    // Null when no gradient reached the net.
    const NetGrads* grads_for(const DenseNet* net) const;

  private:
    Var* make(Mat v);
    NetGrads& param_slot(const DenseNet* net);

    std::deque<Var> vars_;
    std::vector<std::function<void()>> ops_;
    std::map<const DenseNet*, NetGrads> param_grads_;
};

// positions in I carry 1-2u, frozen positions +1.
Mat embed_message(const CodeLayout& layout, const BitMat& u);

// output_j = product of t_i over rows i with G[i][j] = 1.
Vec bipolar_plotkin_features(const Vec& t, const KernelMatrix& G);

Tape::Var* dp_encode_t(Tape& tape, NeuralCode& code, const BitMat& u, bool training,
                       bool binarize = false);
Mat dp_encode(NeuralCode& code, const BitMat& u, bool training, bool binarize = false);

struct DecodeResult {
    Mat logits;   // batch x k, logit = log P[bit=1]/P[bit=0]
    BitMat u_hat; // 1 iff logit > 0
};

Tape::Var* dp_decode_t(Tape& tape, const NeuralCode& code, Tape::Var* y, FeedbackMode fb,
                       bool parallel = false);
DecodeResult dp_decode(const NeuralCode& code, const Mat& y, FeedbackMode fb = FeedbackMode::hard,
                       bool parallel = false);
BitMat logits_to_bits(const Mat& logits);

void save_checkpoint(const NeuralCode& code, const std::string& path);
NeuralCode load_checkpoint(const std::string& path);
std::string checkpoint_to_string(const NeuralCode& code);
NeuralCode checkpoint_from_string(const std::string& text);

}  // namespace npolar
