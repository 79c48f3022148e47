#include "npolar/nn.hpp"

#include <cmath>

namespace npolar {

void NetGrads::add(const NetGrads& other) {
    if (layers.size() != other.layers.size())
        throw std::invalid_argument("NetGrads::add: layer count mismatch");
    for (size_t l = 0; l < layers.size(); ++l) {
        layers[l].dW += other.layers[l].dW;
        layers[l].db += other.layers[l].db;
    }
}

void NetGrads::scale(double s) {
    for (auto& lg : layers) {
        lg.dW *= s;
        lg.db *= s;
    }
}

double NetGrads::max_abs() const {
    double m = 0.0;
    for (const auto& lg : layers) {
        if (lg.dW.size()) m = std::max(m, lg.dW.cwiseAbs().maxCoeff());
        if (lg.db.size()) m = std::max(m, lg.db.cwiseAbs().maxCoeff());
    }
    return m;
}

size_t DenseNet::param_count() const {
    size_t c = 0;
    for (const auto& l : layers) c += static_cast<size_t>(l.W.size() + l.b.size());
    return c;
}

Mat DenseNet::forward(const Mat& input, GradientTape* tape) const {
    if (layers.empty()) throw std::invalid_argument("net_forward: empty net");
    if (input.cols() != layers.front().W.cols())
        throw std::invalid_argument("net_forward: input width does not match fan_in");
    if (!input.allFinite()) throw std::runtime_error("net_forward: non-finite input");
    for (size_t l = 0; l + 1 < layers.size(); ++l)
        if (layers[l].W.rows() != layers[l + 1].W.cols())
            throw std::invalid_argument("net_forward: adjacent layer shape mismatch");

    if (tape) {
        tape->inputs.clear();
        tape->acts.clear();
        tape->owner = this;
        tape->consumed = false;
    }
    Mat a = input;
    for (size_t l = 0; l < layers.size(); ++l) {
        if (tape) tape->inputs.push_back(a);
        Mat z = (a * layers[l].W.transpose()).rowwise() + layers[l].b.transpose();
        if (l + 1 < layers.size()) z = z.cwiseMax(0.0);  // rectifier on hidden layers
        a = std::move(z);
        if (tape) tape->acts.push_back(a);
    }
    return a;
}

std::pair<NetGrads, Mat> DenseNet::backward(GradientTape& tape, const Mat& output_grad) const {
    if (tape.owner != this || tape.inputs.size() != layers.size())
        throw std::logic_error("net_backward: tape does not match this net");
    if (tape.consumed) throw std::logic_error("net_backward: tape already consumed");
    tape.consumed = true;

    NetGrads grads;
    grads.layers.resize(layers.size());
    Mat g = output_grad;
    for (size_t li = layers.size(); li-- > 0;) {
        if (li + 1 < layers.size())
            g = g.cwiseProduct((tape.acts[li].array() > 0.0).cast<double>().matrix());
        grads.layers[li].dW = g.transpose() * tape.inputs[li];
        grads.layers[li].db = g.colwise().sum().transpose();
        g = g * layers[li].W;  // grad wrt this layer's input
    }
    return {std::move(grads), std::move(g)};
}

NetGrads DenseNet::zero_grads() const {
    NetGrads g;
    g.layers.resize(layers.size());
    for (size_t l = 0; l < layers.size(); ++l) {
        g.layers[l].dW = Mat::Zero(layers[l].W.rows(), layers[l].W.cols());
        g.layers[l].db = Vec::Zero(layers[l].b.size());
    }
    return g;
}

Vec DenseNet::flatten_params() const {
    Vec flat(static_cast<Eigen::Index>(param_count()));
    Eigen::Index at = 0;
    for (const auto& l : layers) {
        flat.segment(at, l.W.size()) = Eigen::Map<const Vec>(l.W.data(), l.W.size());
        at += l.W.size();
        flat.segment(at, l.b.size()) = l.b;
        at += l.b.size();
    }
    return flat;
}

void DenseNet::set_params(const Vec& flat) {
    if (flat.size() != static_cast<Eigen::Index>(param_count()))
        throw std::invalid_argument("set_params: size mismatch");
    Eigen::Index at = 0;
    for (auto& l : layers) {
        Eigen::Map<Vec>(l.W.data(), l.W.size()) = flat.segment(at, l.W.size());
        at += l.W.size();
        l.b = flat.segment(at, l.b.size());
        at += l.b.size();
    }
}

Vec DenseNet::flatten_grads(const NetGrads& g) {
    Eigen::Index total = 0;
    for (const auto& lg : g.layers) total += lg.dW.size() + lg.db.size();
    Vec flat(total);
    Eigen::Index at = 0;
    for (const auto& lg : g.layers) {
        flat.segment(at, lg.dW.size()) = Eigen::Map<const Vec>(lg.dW.data(), lg.dW.size());
        at += lg.dW.size();
        flat.segment(at, lg.db.size()) = lg.db;
        at += lg.db.size();
    }
    return flat;
}

void DenseNet::fill_zero() {
    for (auto& l : layers) {
        l.W.setZero();
        l.b.setZero();
    }
}

DenseNet DenseNet::make(int in, int out, int hidden, int n_hidden, std::mt19937_64& rng) {
    if (in <= 0 || out <= 0 || hidden <= 0 || n_hidden < 0)
        throw std::invalid_argument("DenseNet::make: bad dimensions");
    DenseNet net;
    std::vector<std::pair<int, int>> dims;
    if (n_hidden == 0) {
        dims.emplace_back(out, in);
    } else {
        dims.emplace_back(hidden, in);
        for (int h = 1; h < n_hidden; ++h) dims.emplace_back(hidden, hidden);
        dims.emplace_back(out, hidden);
    }
    for (auto [fo, fi] : dims) {
        DenseLayer l;
        double bound = std::sqrt(6.0 / (fi + fo));
        std::uniform_real_distribution<double> dist(-bound, bound);
        l.W = Mat::NullaryExpr(fo, fi, [&]() { return dist(rng); });
        l.b = Vec::Zero(fo);
        net.layers.push_back(std::move(l));
    }
    return net;
}

AdamState AdamState::make(Eigen::Index size, double lr_) {
    AdamState st;
    st.m = Vec::Zero(size);
    st.v = Vec::Zero(size);
    st.lr = lr_;
    return st;
}

void adam_step(Eigen::Ref<Vec> params, const Vec& grads, AdamState& state) {
    if (params.size() != grads.size() || params.size() != state.m.size())
        throw std::invalid_argument("adam_step: shape mismatch");
    state.t += 1;
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads;
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads.cwiseProduct(grads);
    double bc1 = 1.0 - std::pow(state.beta1, state.t);
    double bc2 = 1.0 - std::pow(state.beta2, state.t);
    Vec mhat = state.m / bc1;
    Vec vhat = state.v / bc2;
    params -= state.lr * mhat.cwiseQuotient((vhat.cwiseSqrt().array() + state.eps).matrix());
}

std::pair<double, Mat> bce_with_logits(const Mat& logits, const BitMat& targets) {
    if (logits.rows() != targets.rows() || logits.cols() != targets.cols())
        throw std::invalid_argument("bce_with_logits: shape mismatch");
    const double batch = static_cast<double>(logits.rows());
    double loss = 0.0;
    Mat grad(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        for (Eigen::Index c = 0; c < logits.cols(); ++c) {
            uint8_t u = targets(r, c);
            if (u > 1) throw std::invalid_argument("bce_with_logits: non-binary target");
            double L = logits(r, c);
            // softplus(x) = log(1 + e^x), computed from the negative side
            auto softplus = [](double x) {
                return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
            };
            loss += u ? softplus(-L) : softplus(L);
            double sig = 1.0 / (1.0 + std::exp(-L));
            grad(r, c) = (sig - static_cast<double>(u)) / batch;
        }
    }
    return {loss / batch, std::move(grad)};
}

Mat ste_sign_forward(const Mat& input) {
    if (!input.allFinite()) throw std::runtime_error("ste_sign: non-finite input");
    return input.unaryExpr([](double x) { return x < 0.0 ? -1.0 : 1.0; });
}

Mat ste_sign_backward(const Mat& input, const Mat& output_grad) {
    return output_grad.cwiseProduct(
        input.unaryExpr([](double x) { return std::abs(x) <= 1.0 ? 1.0 : 0.0; }));
}

}  // namespace npolar
