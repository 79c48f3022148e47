#pragma once

#include "npolar/nn.hpp"

#include <string>
#include <vector>

namespace npolar {

using Bits = std::vector<uint8_t>;

// Static shape of a code: n = r * ell^m with 1 <= r <= ell.
struct CodeLayout {
    int n = 0;
    int k = 0;
    int ell = 2;
    std::vector<int> frozen;        // sorted ascending
    std::vector<int> info;          // sorted ascending, complement of frozen
    std::vector<uint8_t> is_frozen;  // size n

    int levels() const;      // tree depth D
    int root_size() const;   // kernel size at the root level
    int kernel_at(int level) const;  // level 1 = leaves
    int block_at(int level) const;   // sub-block length s_d at this level's output
    int nodes_at(int level) const;
};

struct KernelMatrix {
    int ell = 0;
    std::vector<std::vector<uint8_t>> g;  // ell x ell
};

enum class ReliabilitySource { bhattacharyya, file };

struct ReliabilityOrder {
    std::vector<int> order;  // least reliable first
    ReliabilitySource source = ReliabilitySource::bhattacharyya;
};

// s-fold Kronecker power of [[1,0],[1,1]] for ell = 2^s.
KernelMatrix kernel_matrix(int ell);

// Bhattacharyya-BEC recursion z -> (2z - z^2, z^2), natural index order.
ReliabilityOrder construct_reliability(int n, double design_erasure = 0.5);
std::vector<double> bhattacharyya_params(int n, double design_erasure = 0.5);

// One integer index per line, least reliable first; a longer universal
// sequence is filtered down to indices < n.
ReliabilityOrder load_reliability_file(const std::string& path, int n);

CodeLayout make_layout(int n, int k, int ell, const ReliabilityOrder& order);

// m * G_n over GF(2), natural order; u placed at info positions, zeros frozen.
Bits polar_encode(const CodeLayout& layout, const Bits& u);

enum class ScMode { exact, minsum };

struct ScResult {
    Bits u_hat;               // size k
    std::vector<double> llr;  // decision LLR per information bit
};

double sc_f_exact(double a, double b);
double sc_f_minsum(double a, double b);

// Depth-first SC over the ell=2 tree; positive LLR favors bit 0, tie -> 0.
ScResult sc_decode(const CodeLayout& layout, const std::vector<double>& channel_llrs,
                   ScMode mode = ScMode::exact);

// Exhaustive minimum-distance oracle; ties toward lexicographically smallest message.
Bits ml_decode(const CodeLayout& layout, const std::vector<double>& y);

inline double bit_to_symbol(uint8_t b) { return 1.0 - 2.0 * static_cast<double>(b); }

}  // namespace npolar
