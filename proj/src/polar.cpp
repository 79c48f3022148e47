#include "npolar/polar.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace npolar {

namespace {

bool is_power_of(int n, int base) {
    while (n % base == 0) n /= base;
    return n == 1;
}

}  // namespace

int CodeLayout::levels() const {
    int m = 0, p = 1;
    while (p * ell <= n && n % (p * ell) == 0) {
        p *= ell;
        ++m;
    }
    return (n / p > 1) ? m + 1 : m;
}

int CodeLayout::root_size() const {
    int m = 0, p = 1;
    while (p * ell <= n && n % (p * ell) == 0) {
        p *= ell;
        ++m;
    }
    return n / p;  // 1 when n is a pure power of ell
}

int CodeLayout::kernel_at(int level) const {
    int d = levels();
    if (level < 1 || level > d) throw std::invalid_argument("kernel_at: bad level");
    int r = root_size();
    return (r > 1 && level == d) ? r : ell;
}

int CodeLayout::block_at(int level) const {
    int s = 1;
    for (int d = 1; d <= level; ++d) s *= kernel_at(d);
    return s;
}

int CodeLayout::nodes_at(int level) const { return n / block_at(level); }

KernelMatrix kernel_matrix(int ell) {
    if (ell < 2 || !is_power_of(ell, 2))
        throw std::invalid_argument("kernel_matrix: ell must be a power of two >= 2");
    KernelMatrix km;
    km.ell = ell;
    km.g.assign(ell, std::vector<uint8_t>(ell, 0));
    km.g[0][0] = 1;
    for (int sz = 1; sz < ell; sz *= 2) {
        // Kronecker with G2: [[A,0],[A,A]]
        for (int i = sz - 1; i >= 0; --i)
            for (int j = sz - 1; j >= 0; --j) {
                uint8_t v = km.g[i][j];
                km.g[i][j] = v;
                km.g[i + sz][j] = v;
                km.g[i + sz][j + sz] = v;
                km.g[i][j + sz] = 0;
            }
    }
    return km;
}

std::vector<double> bhattacharyya_params(int n, double design_erasure) {
    if (n < 1 || !is_power_of(n, 2))
        throw std::invalid_argument("bhattacharyya_params: n must be a power of two");
    if (!(design_erasure > 0.0 && design_erasure < 1.0))
        throw std::invalid_argument("bhattacharyya_params: design erasure must be in (0,1)");
    std::vector<double> z{design_erasure};
    while (static_cast<int>(z.size()) < n) {
        std::vector<double> next(z.size() * 2);
        for (size_t i = 0; i < z.size(); ++i) {
            next[2 * i] = 2.0 * z[i] - z[i] * z[i];
            next[2 * i + 1] = z[i] * z[i];
        }
        z = std::move(next);
    }
    return z;
}

ReliabilityOrder construct_reliability(int n, double design_erasure) {
    std::vector<double> z = bhattacharyya_params(n, design_erasure);
    ReliabilityOrder ro;
    ro.order.resize(n);
    std::iota(ro.order.begin(), ro.order.end(), 0);
    // least reliable (largest z) first; ties broken toward the lower index
    std::stable_sort(ro.order.begin(), ro.order.end(),
                     [&](int a, int b) { return z[a] > z[b]; });
    return ro;
}

ReliabilityOrder load_reliability_file(const std::string& path, int n) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open reliability sequence file: " + path);
    std::vector<int> seq;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        int v;
        if (ls >> v) seq.push_back(v);
    }
    if (static_cast<int>(seq.size()) < n)
        throw std::runtime_error("reliability sequence shorter than n");
    ReliabilityOrder ro;
    ro.source = ReliabilitySource::file;
    std::vector<uint8_t> seen(n, 0);
    for (int v : seq)
        if (v >= 0 && v < n) {
            if (seen[v]) throw std::runtime_error("reliability sequence repeats index");
            seen[v] = 1;
            ro.order.push_back(v);
        }
    if (static_cast<int>(ro.order.size()) != n)
        throw std::runtime_error("reliability sequence does not cover 0..n-1");
    return ro;
}

CodeLayout make_layout(int n, int k, int ell, const ReliabilityOrder& order) {
    if (k <= 0 || k > n) throw std::invalid_argument("make_layout: need 0 < k <= n");
    if (ell < 2) throw std::invalid_argument("make_layout: ell must be >= 2");
    if (static_cast<int>(order.order.size()) != n)
        throw std::invalid_argument("make_layout: order length mismatch");
    int m = 0, p = 1;
    while (p * ell <= n && n % (p * ell) == 0) {
        p *= ell;
        ++m;
    }
    if (m < 1 || n / p > ell || n % p != 0)
        throw std::invalid_argument("make_layout: n incompatible with ell");
    CodeLayout layout;
    layout.n = n;
    layout.k = k;
    layout.ell = ell;
    layout.is_frozen.assign(n, 0);
    for (int i = 0; i < n - k; ++i) layout.is_frozen[order.order[i]] = 1;
    for (int i = 0; i < n; ++i)
        (layout.is_frozen[i] ? layout.frozen : layout.info).push_back(i);
    return layout;
}

Bits polar_encode(const CodeLayout& layout, const Bits& u) {
    if (static_cast<int>(u.size()) != layout.k)
        throw std::invalid_argument("polar_encode: message length mismatch");
    Bits x(layout.n, 0);
    for (int i = 0; i < layout.k; ++i) x[layout.info[i]] = u[i] & 1;
    for (int s = 1; s < layout.n; s *= 2)
        for (int base = 0; base < layout.n; base += 2 * s)
            for (int i = 0; i < s; ++i) x[base + i] ^= x[base + s + i];
    return x;
}

double sc_f_exact(double a, double b) {
    double t = std::tanh(a / 2.0) * std::tanh(b / 2.0);
    const double cap = 1.0 - 1e-12;
    t = std::clamp(t, -cap, cap);
    return 2.0 * std::atanh(t);
}

double sc_f_minsum(double a, double b) {
    double s = (a < 0.0) == (b < 0.0) ? 1.0 : -1.0;
    return s * std::min(std::abs(a), std::abs(b));
}

namespace {

struct ScState {
    const CodeLayout* layout;
    ScMode mode;
    Bits u_hat;
    std::vector<double> llr;
    int leaf = 0;

    // Returns codeword-domain hard bits (beta) for the subtree.
    Bits decode(const std::vector<double>& alpha) {
        const size_t len = alpha.size();
        if (len == 1) {
            uint8_t bit;
            if (layout->is_frozen[leaf]) {
                bit = 0;
            } else {
                bit = alpha[0] >= 0.0 ? 0 : 1;  // tie decides 0
                u_hat.push_back(bit);
                llr.push_back(alpha[0]);
            }
            ++leaf;
            return Bits{bit};
        }
        const size_t half = len / 2;
        std::vector<double> a(half);
        for (size_t i = 0; i < half; ++i)
            a[i] = mode == ScMode::exact ? sc_f_exact(alpha[i], alpha[i + half])
                                         : sc_f_minsum(alpha[i], alpha[i + half]);
        Bits beta_l = decode(a);
        for (size_t i = 0; i < half; ++i)
            a[i] = (1.0 - 2.0 * beta_l[i]) * alpha[i] + alpha[i + half];
        Bits beta_r = decode(a);
        Bits beta(len);
        for (size_t i = 0; i < half; ++i) {
            beta[i] = beta_l[i] ^ beta_r[i];
            beta[i + half] = beta_r[i];
        }
        return beta;
    }
};

}  // namespace

ScResult sc_decode(const CodeLayout& layout, const std::vector<double>& channel_llrs,
                   ScMode mode) {
    if (!is_power_of(layout.n, 2))
        throw std::invalid_argument("sc_decode: n must be a power of two");
    if (static_cast<int>(channel_llrs.size()) != layout.n)
        throw std::invalid_argument("sc_decode: LLR length mismatch");
    for (double v : channel_llrs)
        if (!std::isfinite(v)) throw std::runtime_error("sc_decode: non-finite LLR");
    ScState st{&layout, mode, {}, {}, 0};
    st.decode(channel_llrs);
    return {std::move(st.u_hat), std::move(st.llr)};
}

Bits ml_decode(const CodeLayout& layout, const std::vector<double>& y) {
    if (layout.k > 20) throw std::invalid_argument("ml_decode: k too large for enumeration");
    if (static_cast<int>(y.size()) != layout.n)
        throw std::invalid_argument("ml_decode: length mismatch");
    Bits best;
    double best_d = 0.0;
    Bits u(layout.k);
    for (uint32_t msg = 0; msg < (1u << layout.k); ++msg) {
        for (int i = 0; i < layout.k; ++i) u[i] = (msg >> (layout.k - 1 - i)) & 1;
        Bits x = polar_encode(layout, u);
        double d = 0.0;
        for (int i = 0; i < layout.n; ++i) {
            double diff = y[i] - bit_to_symbol(x[i]);
            d += diff * diff;
        }
        if (best.empty() || d < best_d) {
            best = u;
            best_d = d;
        }
    }
    return best;
}

}  // namespace npolar
