#include "npolar/codec.hpp"
#include "npolar/channel.hpp"

#include "json.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace npolar {

using json = nlohmann::ordered_json;

NormMode norm_mode_from_string(const std::string& s) {
    if (s == "batch") return NormMode::batch;
    if (s == "running") return NormMode::running;
    if (s == "per_codeword") return NormMode::per_codeword;
    throw std::invalid_argument("unknown norm mode: " + s);
}

std::string to_string(NormMode m) {
    switch (m) {
        case NormMode::batch: return "batch";
        case NormMode::running: return "running";
        case NormMode::per_codeword: return "per_codeword";
    }
    return "?";
}

int NeuralCode::info_count(int level, int node) const {
    int s = layout.block_at(level);
    int count = 0;
    for (int i = node * s; i < (node + 1) * s; ++i)
        if (!layout.is_frozen[i]) ++count;
    return count;
}

std::vector<DenseNet*> NeuralCode::encoder_nets() {
    std::vector<DenseNet*> out;
    for (auto& lvl : enc)
        for (auto& net : lvl) out.push_back(&net);
    return out;
}

std::vector<DenseNet*> NeuralCode::decoder_nets() {
    std::vector<DenseNet*> out;
    for (auto& lvl : dec)
        for (auto& net : lvl)
            if (net) out.push_back(&*net);
    for (auto& net : leaf_parallel)
        if (net) out.push_back(&*net);
    return out;
}

NeuralCode NeuralCode::make(const CodeLayout& layout, int enc_hidden, int dec_hidden,
                            int hidden_layers, uint64_t seed, bool with_parallel) {
    NeuralCode code;
    code.layout = layout;
    code.enc_hidden = enc_hidden;
    code.dec_hidden = dec_hidden;
    code.hidden_layers = hidden_layers;
    code.seed = seed;
    std::mt19937_64 rng(npolar::mix64(seed));

    const int depth = layout.levels();
    code.enc.resize(depth);
    code.dec.resize(depth);
    for (int d = 1; d <= depth; ++d) {
        int ell_d = layout.kernel_at(d);
        int nodes = layout.nodes_at(d);
        for (int b = 0; b < nodes; ++b)
            code.enc[d - 1].push_back(DenseNet::make(ell_d, ell_d, enc_hidden, hidden_layers, rng));
        code.dec[d - 1].resize(static_cast<size_t>(nodes) * ell_d);
        for (int b = 0; b < nodes; ++b) {
            for (int j = 0; j < ell_d; ++j) {
                bool child_has_info;
                if (d == 1) {
                    child_has_info = !layout.is_frozen[b * ell_d + j];
                } else {
                    child_has_info = code.info_count(d - 1, b * ell_d + j) > 0;
                }
                if (child_has_info)
                    code.dec[d - 1][static_cast<size_t>(b) * ell_d + j] =
                        DenseNet::make(ell_d + j, 1, dec_hidden, hidden_layers, rng);
            }
        }
    }
    if (with_parallel) {
        int ell_1 = layout.kernel_at(1);
        code.leaf_parallel.resize(layout.nodes_at(1));
        for (int b = 0; b < layout.nodes_at(1); ++b)
            if (code.info_count(1, b) > 0)
                code.leaf_parallel[b] =
                    DenseNet::make(ell_1, ell_1, enc_hidden, hidden_layers, rng);
    }
    return code;
}

void NeuralCode::zero_encoders() {
    for (auto& lvl : enc)
        for (auto& net : lvl) net.fill_zero();
}

// ---------------------------------------------------------------------------
// Tape

Tape::Var* Tape::make(Mat v) {
    vars_.push_back(Var{std::move(v), Mat{}});
    Var& var = vars_.back();
    var.grad = Mat::Zero(var.val.rows(), var.val.cols());
    return &var;
}

NetGrads& Tape::param_slot(const DenseNet* net) {
    auto it = param_grads_.find(net);
    if (it == param_grads_.end())
        it = param_grads_.emplace(net, net->zero_grads()).first;
    return it->second;
}

Tape::Var* Tape::constant(Mat v) { return make(std::move(v)); }

Tape::Var* Tape::mlp(const DenseNet& net, Var* x) {
    auto gt = std::make_shared<GradientTape>();
    Var* out = make(net.forward(x->val, gt.get()));
    ops_.push_back([this, &net, x, out, gt]() {
        auto [pg, gin] = net.backward(*gt, out->grad);
        param_slot(&net).add(pg);
        x->grad += gin;
    });
    return out;
}

namespace {

// columns of G membership: sets[j] = rows i with G[i][j] = 1
std::vector<std::vector<int>> kernel_column_sets(const KernelMatrix& G) {
    std::vector<std::vector<int>> sets(G.ell);
    for (int j = 0; j < G.ell; ++j)
        for (int i = 0; i < G.ell; ++i)
            if (G.g[i][j]) sets[j].push_back(i);
    return sets;
}

Mat plotkin_forward(const Mat& T, const std::vector<std::vector<int>>& sets) {
    Mat P = Mat::Ones(T.rows(), static_cast<Eigen::Index>(sets.size()));
    for (size_t j = 0; j < sets.size(); ++j)
        for (int i : sets[j]) P.col(j) = P.col(j).cwiseProduct(T.col(i));
    return P;
}

Mat plotkin_backward(const Mat& T, const Mat& gout,
                     const std::vector<std::vector<int>>& sets) {
    Mat gT = Mat::Zero(T.rows(), T.cols());
    for (size_t j = 0; j < sets.size(); ++j) {
        for (size_t a = 0; a < sets[j].size(); ++a) {
            // product over the set excluding element a
            Mat partial = Mat::Ones(T.rows(), 1);
            for (size_t b = 0; b < sets[j].size(); ++b)
                if (b != a) partial = partial.cwiseProduct(T.col(sets[j][b]));
            gT.col(sets[j][a]) += gout.col(j).cwiseProduct(partial);
        }
    }
    return gT;
}

}  // namespace

Tape::Var* Tape::kernel_combine(const DenseNet& net, const KernelMatrix& G,
                                const std::vector<Var*>& children) {
    const int ell = G.ell;
    if (static_cast<int>(children.size()) != ell)
        throw std::invalid_argument("kernel_combine: child count mismatch");
    const Eigen::Index batch = children[0]->val.rows();
    const Eigen::Index s = children[0]->val.cols();
    for (Var* c : children)
        if (c->val.rows() != batch || c->val.cols() != s)
            throw std::invalid_argument("kernel_combine: child shape mismatch");
    if (net.fan_in() != ell || net.fan_out() != ell)
        throw std::invalid_argument("kernel_combine: net width does not match kernel");

    auto T = std::make_shared<Mat>(batch * s, ell);
    for (Eigen::Index i = 0; i < s; ++i)
        for (int j = 0; j < ell; ++j)
            T->block(i * batch, j, batch, 1) = children[j]->val.col(i);

    auto sets = std::make_shared<std::vector<std::vector<int>>>(kernel_column_sets(G));
    auto gt = std::make_shared<GradientTape>();
    Mat O = net.forward(*T, gt.get()) + plotkin_forward(*T, *sets);

    Mat val(batch, static_cast<Eigen::Index>(ell) * s);
    for (Eigen::Index i = 0; i < s; ++i)
        for (int j = 0; j < ell; ++j) val.col(static_cast<Eigen::Index>(j) * s + i) = O.block(i * batch, j, batch, 1);
    Var* out = make(std::move(val));

    ops_.push_back([this, &net, out, children, T, sets, gt, batch, s, ell]() {
        Mat GO(batch * s, ell);
        for (Eigen::Index i = 0; i < s; ++i)
            for (int j = 0; j < ell; ++j)
                GO.block(i * batch, j, batch, 1) = out->grad.col(static_cast<Eigen::Index>(j) * s + i);
        auto [pg, gin] = net.backward(*gt, GO);
        param_slot(&net).add(pg);
        Mat gT = gin + plotkin_backward(*T, GO, *sets);
        for (Eigen::Index i = 0; i < s; ++i)
            for (int j = 0; j < ell; ++j)
                children[j]->grad.col(i) += gT.block(i * batch, j, batch, 1);
    });
    return out;
}

Tape::Var* Tape::f_apply(const DenseNet& net, Var* lam, const std::vector<Var*>& feedback) {
    const int j = static_cast<int>(feedback.size());
    const int ell = net.fan_in() - j;
    if (ell < 2 || lam->val.cols() % ell != 0)
        throw std::invalid_argument("f_apply: block width incompatible with sub-decoder");
    const Eigen::Index s = lam->val.cols() / ell;
    const Eigen::Index batch = lam->val.rows();
    for (Var* phi : feedback)
        if (phi->val.rows() != batch || phi->val.cols() != s)
            throw std::invalid_argument("f_apply: feedback shape mismatch");
    if (net.fan_out() != 1) throw std::invalid_argument("f_apply: sub-decoder must output 1");

    Mat X(batch * s, ell + j);
    for (Eigen::Index i = 0; i < s; ++i) {
        for (int q = 0; q < ell; ++q)
            X.block(i * batch, q, batch, 1) = lam->val.col(static_cast<Eigen::Index>(q) * s + i);
        for (int p = 0; p < j; ++p)
            X.block(i * batch, ell + p, batch, 1) = feedback[p]->val.col(i);
    }
    auto gt = std::make_shared<GradientTape>();
    Mat O = net.forward(X, gt.get());
    Mat val(batch, s);
    for (Eigen::Index i = 0; i < s; ++i) val.col(i) = O.block(i * batch, 0, batch, 1);
    Var* out = make(std::move(val));

    ops_.push_back([this, &net, out, lam, feedback, gt, batch, s, ell, j]() {
        Mat GO(batch * s, 1);
        for (Eigen::Index i = 0; i < s; ++i) GO.block(i * batch, 0, batch, 1) = out->grad.col(i);
        auto [pg, gin] = net.backward(*gt, GO);
        param_slot(&net).add(pg);
        for (Eigen::Index i = 0; i < s; ++i) {
            for (int q = 0; q < ell; ++q)
                lam->grad.col(static_cast<Eigen::Index>(q) * s + i) += gin.block(i * batch, q, batch, 1);
            for (int p = 0; p < j; ++p)
                feedback[p]->grad.col(i) += gin.block(i * batch, ell + p, batch, 1);
        }
    });
    return out;
}

Tape::Var* Tape::slice_cols(Var* x, int start, int len) {
    Var* out = make(x->val.middleCols(start, len));
    ops_.push_back([x, out, start, len]() { x->grad.middleCols(start, len) += out->grad; });
    return out;
}

Tape::Var* Tape::concat_cols(const std::vector<Var*>& parts) {
    Eigen::Index cols = 0;
    for (Var* p : parts) cols += p->val.cols();
    Mat val(parts[0]->val.rows(), cols);
    Eigen::Index at = 0;
    for (Var* p : parts) {
        val.middleCols(at, p->val.cols()) = p->val;
        at += p->val.cols();
    }
    Var* out = make(std::move(val));
    ops_.push_back([parts, out]() {
        Eigen::Index at = 0;
        for (Var* p : parts) {
            p->grad += out->grad.middleCols(at, p->val.cols());
            at += p->val.cols();
        }
    });
    return out;
}

Tape::Var* Tape::soft_bipolar(Var* logits) {
    Var* out = make(logits->val.unaryExpr([](double x) { return std::tanh(-x / 2.0); }));
    ops_.push_back([logits, out]() {
        logits->grad += out->grad.cwiseProduct(
            out->val.unaryExpr([](double v) { return -0.5 * (1.0 - v * v); }));
    });
    return out;
}

Tape::Var* Tape::hard_bipolar(Var* logits) {
    // detached: hard decisions carry no gradient
    return make(logits->val.unaryExpr([](double x) { return x > 0.0 ? -1.0 : 1.0; }));
}

Tape::Var* Tape::add_noise(Var* x, const Mat& noise) {
    Var* out = make(x->val + noise);
    ops_.push_back([x, out]() { x->grad += out->grad; });
    return out;
}

Tape::Var* Tape::fade_and_noise(Var* x, const Mat& h, const Mat& noise) {
    Var* out = make(x->val.cwiseProduct(h) + noise);
    auto hs = std::make_shared<Mat>(h);
    ops_.push_back([x, out, hs]() { x->grad += out->grad.cwiseProduct(*hs); });
    return out;
}

Tape::Var* Tape::normalize_batch(Var* x, PowerNormStats& stats, bool update_running) {
    const double count = static_cast<double>(x->val.size());
    const double mu = x->val.mean();
    const double var = (x->val.array() - mu).square().mean();
    if (var < 1e-12) throw std::runtime_error("normalize_batch: degenerate batch variance");
    const double inv_std = 1.0 / std::sqrt(var);
    if (update_running) {
        stats.mean = stats.momentum * stats.mean + (1.0 - stats.momentum) * mu;
        stats.var = stats.momentum * stats.var + (1.0 - stats.momentum) * var;
    }
    Var* out = make(((x->val.array() - mu) * inv_std).matrix());
    ops_.push_back([x, out, inv_std, count]() {
        const double gmean = out->grad.mean();
        const double gdot = out->grad.cwiseProduct(out->val).sum() / count;
        x->grad += (inv_std * (out->grad.array() - gmean - out->val.array() * gdot)).matrix();
    });
    return out;
}

Tape::Var* Tape::normalize_running(Var* x, const PowerNormStats& stats) {
    if (!(stats.var > 0.0)) throw std::runtime_error("normalize_running: variance not positive");
    const double inv_std = 1.0 / std::sqrt(stats.var);
    const double mu = stats.mean;
    Var* out = make(((x->val.array() - mu) * inv_std).matrix());
    ops_.push_back([x, out, inv_std]() { x->grad += inv_std * out->grad; });
    return out;
}

Tape::Var* Tape::normalize_per_codeword(Var* x) {
    const double root_n = std::sqrt(static_cast<double>(x->val.cols()));
    Mat val(x->val.rows(), x->val.cols());
    auto norms = std::make_shared<Vec>(x->val.rows());
    for (Eigen::Index r = 0; r < x->val.rows(); ++r) {
        double nrm = x->val.row(r).norm();
        if (nrm * nrm < 1e-12)
            throw std::runtime_error("normalize_per_codeword: near-zero codeword");
        (*norms)(r) = nrm;
        val.row(r) = x->val.row(r) * (root_n / nrm);
    }
    Var* out = make(std::move(val));
    ops_.push_back([x, out, norms, root_n]() {
        for (Eigen::Index r = 0; r < x->val.rows(); ++r) {
            double nrm = (*norms)(r);
            double dot = out->grad.row(r).dot(x->val.row(r));
            x->grad.row(r) += (root_n / nrm) * out->grad.row(r) -
                              (root_n * dot / (nrm * nrm * nrm)) * x->val.row(r);
        }
    });
    return out;
}

Tape::Var* Tape::ste_sign(Var* x) {
    Var* out = make(ste_sign_forward(x->val));
    ops_.push_back([x, out]() { x->grad += ste_sign_backward(x->val, out->grad); });
    return out;
}

void Tape::backward(Var* out, const Mat& seed_grad) {
    if (out->grad.rows() != seed_grad.rows() || out->grad.cols() != seed_grad.cols())
        throw std::invalid_argument("Tape::backward: seed shape mismatch");
    out->grad += seed_grad;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    ops_.clear();
}

const NetGrads* Tape::grads_for(const DenseNet* net) const {
    auto it = param_grads_.find(net);
    return it == param_grads_.end() ? nullptr : &it->second;
}

// ---------------------------------------------------------------------------
// Encoding / decoding

Mat embed_message(const CodeLayout& layout, const BitMat& u) {
    if (u.cols() != layout.k) throw std::invalid_argument("embed_message: message width mismatch");
    Mat m = Mat::Ones(u.rows(), layout.n);
    for (Eigen::Index r = 0; r < u.rows(); ++r)
        for (int i = 0; i < layout.k; ++i) {
            if (u(r, i) > 1) throw std::invalid_argument("embed_message: non-binary message");
            m(r, layout.info[i]) = bit_to_symbol(u(r, i));
        }
    return m;
}

Vec bipolar_plotkin_features(const Vec& t, const KernelMatrix& G) {
    if (t.size() != G.ell) throw std::invalid_argument("bipolar_plotkin_features: size mismatch");
    Vec out = Vec::Ones(G.ell);
    for (int j = 0; j < G.ell; ++j)
        for (int i = 0; i < G.ell; ++i)
            if (G.g[i][j]) out(j) *= t(i);
    return out;
}

namespace {

Tape::Var* encode_subtree(Tape& tape, const NeuralCode& code, int level, int node,
                          Tape::Var* leaf_vals) {
    if (level == 0) return leaf_vals;
    const int ell_d = code.layout.kernel_at(level);
    const int s_prev = level == 1 ? 1 : code.layout.block_at(level - 1);
    std::vector<Tape::Var*> children;
    children.reserve(ell_d);
    for (int j = 0; j < ell_d; ++j)
        children.push_back(encode_subtree(tape, code, level - 1, node * ell_d + j,
                                          tape.slice_cols(leaf_vals, j * s_prev, s_prev)));
    return tape.kernel_combine(code.enc[level - 1][node], kernel_matrix(ell_d), children);
}

struct DecodeCtx {
    Tape& tape;
    const NeuralCode& code;
    FeedbackMode fb;
    bool parallel;
    std::vector<Tape::Var*> logits;
};

Tape::Var* estimate_from_logit(DecodeCtx& ctx, Tape::Var* logit) {
    return ctx.fb == FeedbackMode::soft ? ctx.tape.soft_bipolar(logit)
                                        : ctx.tape.hard_bipolar(logit);
}

Tape::Var* decode_node(DecodeCtx& ctx, int level, int node, Tape::Var* lam) {
    const CodeLayout& layout = ctx.code.layout;
    const int ell_d = layout.kernel_at(level);
    const Eigen::Index batch = lam->val.rows();
    std::vector<Tape::Var*> estimates, feedback;

    if (level == 1 && ctx.parallel) {
        if (!ctx.code.has_parallel())
            throw std::runtime_error("dp_decode: parallel leaf nets not present");
        const auto& pnet = ctx.code.leaf_parallel[node];
        Tape::Var* out = pnet ? ctx.tape.mlp(*pnet, lam) : nullptr;
        for (int j = 0; j < ell_d; ++j) {
            if (layout.is_frozen[node * ell_d + j]) {
                estimates.push_back(ctx.tape.constant(Mat::Ones(batch, 1)));
            } else {
                Tape::Var* logit = ctx.tape.slice_cols(out, j, 1);
                ctx.logits.push_back(logit);
                estimates.push_back(estimate_from_logit(ctx, logit));
            }
        }
        return ctx.tape.concat_cols(estimates);
    }

    const int s_prev = level == 1 ? 1 : layout.block_at(level - 1);
    for (int j = 0; j < ell_d; ++j) {
        const int child = node * ell_d + j;
        Tape::Var* est;
        bool child_has_info = level == 1 ? !layout.is_frozen[child]
                                         : ctx.code.info_count(level - 1, child) > 0;
        if (!child_has_info) {
            est = ctx.tape.constant(Mat::Ones(batch, s_prev));
        } else {
            const auto& fnet = ctx.code.dec[level - 1][child];
            Tape::Var* lam_j = ctx.tape.f_apply(*fnet, lam, feedback);
            if (level == 1) {
                ctx.logits.push_back(lam_j);
                est = estimate_from_logit(ctx, lam_j);
            } else {
                est = decode_node(ctx, level - 1, child, lam_j);
            }
        }
        estimates.push_back(est);
        if (j + 1 < ell_d)
            feedback.push_back(level == 1 ? est
                                          : encode_subtree(ctx.tape, ctx.code, level - 1, child, est));
    }
    return ctx.tape.concat_cols(estimates);
}

}  // namespace

Tape::Var* dp_encode_t(Tape& tape, NeuralCode& code, const BitMat& u, bool training,
                       bool binarize) {
    Tape::Var* leaves = tape.constant(embed_message(code.layout, u));
    Tape::Var* x = encode_subtree(tape, code, code.layout.levels(), 0, leaves);
    if (binarize) return tape.ste_sign(x);
    switch (code.stats.mode) {
        case NormMode::batch:
            if (!training)
                throw std::runtime_error("dp_encode: batch statistics are training-only");
            return tape.normalize_batch(x, code.stats, /*update_running=*/true);
        case NormMode::running:
            return tape.normalize_running(x, code.stats);
        case NormMode::per_codeword:
            return tape.normalize_per_codeword(x);
    }
    throw std::logic_error("dp_encode: unreachable");
}

Mat dp_encode(NeuralCode& code, const BitMat& u, bool training, bool binarize) {
    Tape tape;
    return dp_encode_t(tape, code, u, training, binarize)->val;
}

Tape::Var* dp_decode_t(Tape& tape, const NeuralCode& code, Tape::Var* y, FeedbackMode fb,
                       bool parallel) {
    if (y->val.cols() != code.layout.n)
        throw std::invalid_argument("dp_decode: received block width mismatch");
    if (!y->val.allFinite()) throw std::runtime_error("dp_decode: non-finite input");
    DecodeCtx ctx{tape, code, fb, parallel, {}};
    decode_node(ctx, code.layout.levels(), 0, y);
    if (static_cast<int>(ctx.logits.size()) != code.layout.k)
        throw std::logic_error("dp_decode: logit count mismatch");
    return tape.concat_cols(ctx.logits);
}

BitMat logits_to_bits(const Mat& logits) {
    BitMat u(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r)
        for (Eigen::Index c = 0; c < logits.cols(); ++c)
            u(r, c) = logits(r, c) > 0.0 ? 1 : 0;
    return u;
}

DecodeResult dp_decode(const NeuralCode& code, const Mat& y, FeedbackMode fb, bool parallel) {
    Tape tape;
    Mat logits = dp_decode_t(tape, code, tape.constant(y), fb, parallel)->val;
    return {logits, logits_to_bits(logits)};
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

json net_to_json(const DenseNet& net) {
    json layers = json::array();
    for (const auto& l : net.layers) {
        json w = json::array();
        for (Eigen::Index r = 0; r < l.W.rows(); ++r) {
            json row = json::array();
            for (Eigen::Index c = 0; c < l.W.cols(); ++c) row.push_back(l.W(r, c));
            w.push_back(std::move(row));
        }
        json b = json::array();
        for (Eigen::Index i = 0; i < l.b.size(); ++i) b.push_back(l.b(i));
        layers.push_back(json{{"w", std::move(w)}, {"b", std::move(b)}});
    }
    return json{{"layers", std::move(layers)}};
}

DenseNet net_from_json(const json& j) {
    DenseNet net;
    for (const auto& lj : j.at("layers")) {
        DenseLayer l;
        const auto& w = lj.at("w");
        const auto& b = lj.at("b");
        Eigen::Index rows = w.size(), cols = w.empty() ? 0 : w[0].size();
        l.W.resize(rows, cols);
        for (Eigen::Index r = 0; r < rows; ++r) {
            if (static_cast<Eigen::Index>(w[r].size()) != cols)
                throw std::runtime_error("checkpoint: ragged weight matrix");
            for (Eigen::Index c = 0; c < cols; ++c) l.W(r, c) = w[r][c].get<double>();
        }
        l.b.resize(b.size());
        for (Eigen::Index i = 0; i < l.b.size(); ++i) l.b(i) = b[i].get<double>();
        if (!l.W.allFinite() || !l.b.allFinite())
            throw std::runtime_error("checkpoint: non-finite parameter");
        net.layers.push_back(std::move(l));
    }
    if (net.layers.empty()) throw std::runtime_error("checkpoint: empty net");
    return net;
}

}  // namespace

std::string checkpoint_to_string(const NeuralCode& code) {
    json j;
    j["format_version"] = 1;
    j["layout"] = {{"n", code.layout.n},
                   {"k", code.layout.k},
                   {"ell", code.layout.ell},
                   {"frozen", code.layout.frozen}};
    j["arch"] = {{"enc_hidden", code.enc_hidden},
                 {"dec_hidden", code.dec_hidden},
                 {"hidden_layers", code.hidden_layers},
                 {"parallel_leaf", code.has_parallel()}};
    j["norm"] = {{"mode", to_string(code.stats.mode)},
                 {"mean", code.stats.mean},
                 {"var", code.stats.var},
                 {"momentum", code.stats.momentum}};
    j["seed"] = code.seed;
    json enc = json::array();
    for (const auto& lvl : code.enc) {
        json l = json::array();
        for (const auto& net : lvl) l.push_back(net_to_json(net));
        enc.push_back(std::move(l));
    }
    j["encoder"] = std::move(enc);
    json dec = json::array();
    for (const auto& lvl : code.dec) {
        json l = json::array();
        for (const auto& net : lvl) l.push_back(net ? net_to_json(*net) : json(nullptr));
        dec.push_back(std::move(l));
    }
    j["decoder"] = std::move(dec);
    json par = json::array();
    for (const auto& net : code.leaf_parallel)
        par.push_back(net ? net_to_json(*net) : json(nullptr));
    j["leaf_parallel"] = std::move(par);
    return j.dump(1);
}

NeuralCode checkpoint_from_string(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw std::runtime_error(std::string("checkpoint parse error: ") + e.what());
    }
    if (j.at("format_version").get<int>() != 1)
        throw std::runtime_error("checkpoint: unsupported format version");

    const auto& lj = j.at("layout");
    int n = lj.at("n"), k = lj.at("k"), ell = lj.at("ell");
    std::vector<int> frozen = lj.at("frozen").get<std::vector<int>>();
    if (static_cast<int>(frozen.size()) != n - k)
        throw std::runtime_error("checkpoint: frozen set size inconsistent with n, k");
    CodeLayout layout;
    layout.n = n;
    layout.k = k;
    layout.ell = ell;
    layout.is_frozen.assign(n, 0);
    for (int f : frozen) {
        if (f < 0 || f >= n || layout.is_frozen[f])
            throw std::runtime_error("checkpoint: invalid frozen index");
        layout.is_frozen[f] = 1;
    }
    for (int i = 0; i < n; ++i)
        (layout.is_frozen[i] ? layout.frozen : layout.info).push_back(i);

    const auto& aj = j.at("arch");
    NeuralCode code = NeuralCode::make(layout, aj.at("enc_hidden"), aj.at("dec_hidden"),
                                       aj.at("hidden_layers"), j.at("seed").get<uint64_t>(),
                                       aj.at("parallel_leaf").get<bool>());
    const auto& nj = j.at("norm");
    code.stats.mode = norm_mode_from_string(nj.at("mode"));
    code.stats.mean = nj.at("mean");
    code.stats.var = nj.at("var");
    code.stats.momentum = nj.at("momentum");

    auto check_same_shape = [](const DenseNet& got, const DenseNet& want, const char* what) {
        if (got.layers.size() != want.layers.size())
            throw std::runtime_error(std::string("checkpoint: layer count mismatch in ") + what);
        for (size_t l = 0; l < got.layers.size(); ++l)
            if (got.layers[l].W.rows() != want.layers[l].W.rows() ||
                got.layers[l].W.cols() != want.layers[l].W.cols() ||
                got.layers[l].b.size() != want.layers[l].b.size())
                throw std::runtime_error(std::string("checkpoint: shape mismatch in ") + what);
    };

    const auto& ej = j.at("encoder");
    if (ej.size() != code.enc.size()) throw std::runtime_error("checkpoint: encoder level count");
    for (size_t d = 0; d < code.enc.size(); ++d) {
        if (ej[d].size() != code.enc[d].size())
            throw std::runtime_error("checkpoint: encoder node count");
        for (size_t b = 0; b < code.enc[d].size(); ++b) {
            DenseNet net = net_from_json(ej[d][b]);
            check_same_shape(net, code.enc[d][b], "encoder kernel");
            code.enc[d][b] = std::move(net);
        }
    }
    const auto& dj = j.at("decoder");
    if (dj.size() != code.dec.size()) throw std::runtime_error("checkpoint: decoder level count");
    for (size_t d = 0; d < code.dec.size(); ++d) {
        if (dj[d].size() != code.dec[d].size())
            throw std::runtime_error("checkpoint: decoder slot count");
        for (size_t b = 0; b < code.dec[d].size(); ++b) {
            if (dj[d][b].is_null() != !code.dec[d][b])
                throw std::runtime_error("checkpoint: decoder slot presence mismatch");
            if (!dj[d][b].is_null()) {
                DenseNet net = net_from_json(dj[d][b]);
                check_same_shape(net, *code.dec[d][b], "sub-decoder");
                code.dec[d][b] = std::move(net);
            }
        }
    }
    const auto& pj = j.at("leaf_parallel");
    if (pj.size() != code.leaf_parallel.size())
        throw std::runtime_error("checkpoint: parallel slot count");
    for (size_t b = 0; b < code.leaf_parallel.size(); ++b) {
        if (pj[b].is_null() != !code.leaf_parallel[b])
            throw std::runtime_error("checkpoint: parallel slot presence mismatch");
        if (!pj[b].is_null()) {
            DenseNet net = net_from_json(pj[b]);
            check_same_shape(net, *code.leaf_parallel[b], "parallel leaf");
            code.leaf_parallel[b] = std::move(net);
        }
    }
    return code;
}

void save_checkpoint(const NeuralCode& code, const std::string& path) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write checkpoint: " + tmp);
        out << checkpoint_to_string(code);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw std::runtime_error("cannot move checkpoint into place: " + path);
}

NeuralCode load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return checkpoint_from_string(text);
}

}  // namespace npolar
