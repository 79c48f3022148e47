#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace npolar {

using Mat = Eigen::MatrixXd;                                        // rows = batch
using Vec = Eigen::VectorXd;
using BitMat = Eigen::Matrix<uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

struct DenseLayer {
    Mat W;  // fan_out x fan_in
    Vec b;  // fan_out
};

// Activations recorded during one forward pass; consumed by one backward pass.
struct GradientTape {
    std::vector<Mat> inputs;  // input to each layer
    std::vector<Mat> acts;    // post-activation output of each layer
    const void* owner = nullptr;
    bool consumed = false;
};

struct LayerGrads {
    Mat dW;
    Vec db;
};

struct NetGrads {
    std::vector<LayerGrads> layers;
    void add(const NetGrads& other);
    void scale(double s);
    double max_abs() const;
};

// Fixed-architecture MLP: rectifier hidden layers, linear output.
struct DenseNet {
    std::vector<DenseLayer> layers;

    int fan_in() const { return static_cast<int>(layers.front().W.cols()); }
    int fan_out() const { return static_cast<int>(layers.back().W.rows()); }
    size_t param_count() const;

    Mat forward(const Mat& input, GradientTape* tape = nullptr) const;
    // Returns (parameter grads, input grad). The tape is single-use.
    std::pair<NetGrads, Mat> backward(GradientTape& tape, const Mat& output_grad) const;

    NetGrads zero_grads() const;
    Vec flatten_params() const;
    void set_params(const Vec& flat);
    static Vec flatten_grads(const NetGrads& g);

    void fill_zero();
    // Glorot-uniform weights, zero biases.
    static DenseNet make(int in, int out, int hidden, int n_hidden, std::mt19937_64& rng);
};

struct AdamState {
    Vec m, v;
    long t = 0;
    double lr = 1e-4;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    static AdamState make(Eigen::Index size, double lr);
};

void adam_step(Eigen::Ref<Vec> params, const Vec& grads, AdamState& state);

// Mean over batch of per-message summed BCE; logit convention log(P1/P0).
// Gradient = (sigmoid(logit) - target) / batch.
std::pair<double, Mat> bce_with_logits(const Mat& logits, const BitMat& targets);

// sign with sign(0)=+1.
Mat ste_sign_forward(const Mat& input);
// Clipped-identity: passes grad where |input| <= 1, zero elsewhere.
Mat ste_sign_backward(const Mat& input, const Mat& output_grad);

}  // namespace npolar
