#include "npolar/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace npolar {

namespace {

constexpr uint64_t kMsgStream = 10;
constexpr uint64_t kNoiseStream = 11;
constexpr uint64_t kPairStream = 12;

BitMat random_messages(int batch, int k, uint64_t seed) {
    GaussianRng rng(seed);
    BitMat u(batch, k);
    for (int r = 0; r < batch; ++r)
        for (int c = 0; c < k; ++c) u(r, c) = rng.bit();
    return u;
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

}  // namespace

CodecOps classical_codec(const CodeLayout& layout, ScMode mode) {
    CodecOps ops;
    ops.n = layout.n;
    ops.k = layout.k;
    ops.encode = [layout](const BitMat& u) {
        Mat x(u.rows(), layout.n);
        Bits msg(layout.k);
        for (Eigen::Index r = 0; r < u.rows(); ++r) {
            for (int i = 0; i < layout.k; ++i) msg[i] = u(r, i);
            Bits cw = polar_encode(layout, msg);
            for (int i = 0; i < layout.n; ++i) x(r, i) = bit_to_symbol(cw[i]);
        }
        return x;
    };
    ops.decode = [layout, mode](const Mat& y, double sigma) {
        BitMat u(y.rows(), layout.k);
        std::vector<double> llr(layout.n);
        for (Eigen::Index r = 0; r < y.rows(); ++r) {
            for (int i = 0; i < layout.n; ++i) llr[i] = 2.0 * y(r, i) / (sigma * sigma);
            ScResult res = sc_decode(layout, llr, mode);
            for (int i = 0; i < layout.k; ++i) u(r, i) = res.u_hat[i];
        }
        return u;
    };
    return ops;
}

CodecOps ml_codec(const CodeLayout& layout) {
    CodecOps ops = classical_codec(layout);
    ops.decode = [layout](const Mat& y, double) {
        BitMat u(y.rows(), layout.k);
        std::vector<double> row(layout.n);
        for (Eigen::Index r = 0; r < y.rows(); ++r) {
            for (int i = 0; i < layout.n; ++i) row[i] = y(r, i);
            Bits res = ml_decode(layout, row);
            for (int i = 0; i < layout.k; ++i) u(r, i) = res[i];
        }
        return u;
    };
    return ops;
}

CodecOps neural_codec(const NeuralCode& code, FeedbackMode fb, bool parallel) {
    CodecOps ops;
    ops.n = code.layout.n;
    ops.k = code.layout.k;
    // eval mode must not depend on batch statistics
    if (code.stats.mode == NormMode::batch)
        throw std::invalid_argument("neural_codec: eval-time norm mode cannot be batch");
    ops.encode = [&code](const BitMat& u) {
        return dp_encode(const_cast<NeuralCode&>(code), u, /*training=*/false);
    };
    ops.decode = [&code, fb, parallel](const Mat& y, double) {
        return dp_decode(code, y, fb, parallel).u_hat;
    };
    return ops;
}

CodecOps hybrid_codec(const NeuralCode& code, FeedbackMode fb) {
    CodecOps ops = classical_codec(code.layout);
    ops.decode = [&code, fb](const Mat& y, double) { return dp_decode(code, y, fb).u_hat; };
    return ops;
}

CodecOps uncoded_bpsk_codec(int k) {
    CodecOps ops;
    ops.n = k;
    ops.k = k;
    ops.encode = [](const BitMat& u) {
        Mat x(u.rows(), u.cols());
        for (Eigen::Index r = 0; r < u.rows(); ++r)
            for (Eigen::Index c = 0; c < u.cols(); ++c) x(r, c) = bit_to_symbol(u(r, c));
        return x;
    };
    ops.decode = [](const Mat& y, double) {
        BitMat u(y.rows(), y.cols());
        for (Eigen::Index r = 0; r < y.rows(); ++r)
            for (Eigen::Index c = 0; c < y.cols(); ++c) u(r, c) = y(r, c) < 0.0 ? 1 : 0;
        return u;
    };
    return ops;
}

double wilson_half_width(long successes, long trials) {
    if (trials <= 0) return 0.0;
    const double z = 1.959963984540054;
    const double n = static_cast<double>(trials);
    const double p = static_cast<double>(successes) / n;
    const double z2 = z * z;
    return z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / (1.0 + z2 / n);
}

EvalRow monte_carlo_point(const CodecOps& codec, const ChannelTemplate& channel, double snr_db,
                          const MonteCarloOpts& opts) {
    const double sigma = snr_db_to_sigma(snr_db);
    const ChannelSpec spec = channel.at_sigma(sigma);
    EvalRow row;
    row.snr_db = snr_db;
    uint64_t batch_index = 0;
    while (row.block_errors < opts.min_block_errors && row.blocks < opts.max_blocks) {
        int batch = static_cast<int>(
            std::min<long>(opts.batch, opts.max_blocks - row.blocks));
        BitMat u = random_messages(batch, codec.k,
                                   derive_seed(opts.seed, kMsgStream, batch_index));
        Mat x = codec.encode(u);
        Mat y = apply_channel(spec, x, derive_seed(opts.seed, kNoiseStream, batch_index));
        BitMat u_hat = codec.decode(y, sigma);
        for (int r = 0; r < batch; ++r) {
            long be = 0;
            for (int c = 0; c < codec.k; ++c) be += u(r, c) != u_hat(r, c);
            row.bit_errors += be;
            row.block_errors += be > 0;
        }
        row.blocks += batch;
        ++batch_index;
    }
    row.ber = static_cast<double>(row.bit_errors) / (static_cast<double>(row.blocks) * codec.k);
    row.bler = static_cast<double>(row.block_errors) / static_cast<double>(row.blocks);
    row.ber_ci = wilson_half_width(row.bit_errors, row.blocks * codec.k);
    row.bler_ci = wilson_half_width(row.block_errors, row.blocks);
    row.one_sided = row.block_errors == 0;
    return row;
}

std::vector<EvalRow> monte_carlo(const CodecOps& codec, const ChannelTemplate& channel,
                                 const std::vector<double>& snr_db_sweep,
                                 const MonteCarloOpts& opts) {
    std::vector<EvalRow> rows;
    MonteCarloOpts point = opts;
    for (size_t i = 0; i < snr_db_sweep.size(); ++i) {
        point.seed = derive_seed(opts.seed, 1000, i);
        rows.push_back(monte_carlo_point(codec, channel, snr_db_sweep[i], point));
    }
    return rows;
}

DistanceProfile distance_profile(const CodecOps& codec, long num_pairs, uint64_t seed) {
    DistanceProfile prof;
    prof.gaussian_reference_mean = std::sqrt(2.0 * codec.n);
    GaussianRng rng(derive_seed(seed, kPairStream, 0));
    const int batch = 128;
    BitMat a(batch, codec.k), b(batch, codec.k);
    while (static_cast<long>(prof.distances.size()) < num_pairs) {
        int want = static_cast<int>(
            std::min<long>(batch, num_pairs - static_cast<long>(prof.distances.size())));
        int filled = 0;
        while (filled < want) {  // rejection-sample distinct message pairs
            bool same = true;
            for (int c = 0; c < codec.k; ++c) {
                a(filled, c) = rng.bit();
                b(filled, c) = rng.bit();
                if (a(filled, c) != b(filled, c)) same = false;
            }
            if (!same) ++filled;
        }
        Mat xa = codec.encode(a.topRows(want));
        Mat xb = codec.encode(b.topRows(want));
        for (int r = 0; r < want; ++r)
            prof.distances.push_back((xa.row(r) - xb.row(r)).norm());
    }
    double sum = 0.0, sq = 0.0;
    for (double d : prof.distances) {
        sum += d;
        sq += d * d;
    }
    const double n = static_cast<double>(prof.distances.size());
    prof.mean = sum / n;
    prof.stddev = std::sqrt(std::max(0.0, sq / n - prof.mean * prof.mean));
    return prof;
}

Histogram histogram_from_samples(const std::vector<double>& samples, int bins) {
    Histogram h;
    if (samples.empty() || bins <= 0) return h;
    double lo = *std::min_element(samples.begin(), samples.end());
    double hi = *std::max_element(samples.begin(), samples.end());
    if (hi <= lo) hi = lo + 1.0;
    h.bin_low.resize(bins);
    h.bin_high.resize(bins);
    h.counts.assign(bins, 0);
    const double w = (hi - lo) / bins;
    for (int i = 0; i < bins; ++i) {
        h.bin_low[i] = lo + i * w;
        h.bin_high[i] = lo + (i + 1) * w;
    }
    for (double s : samples) {
        int idx = std::min(bins - 1, static_cast<int>((s - lo) / w));
        h.counts[idx]++;
    }
    return h;
}

FirstErrorHistogram first_error_histogram(const CodecOps& codec, const ChannelTemplate& channel,
                                          double snr_db, long num_blocks, uint64_t seed,
                                          int batch) {
    const double sigma = snr_db_to_sigma(snr_db);
    const ChannelSpec spec = channel.at_sigma(sigma);
    FirstErrorHistogram h;
    h.counts.assign(codec.k, 0);
    uint64_t batch_index = 0;
    long done = 0;
    while (done < num_blocks) {
        int bs = static_cast<int>(std::min<long>(batch, num_blocks - done));
        BitMat u = random_messages(bs, codec.k, derive_seed(seed, kMsgStream, batch_index));
        Mat y = apply_channel(spec, codec.encode(u), derive_seed(seed, kNoiseStream, batch_index));
        BitMat u_hat = codec.decode(y, sigma);
        for (int r = 0; r < bs; ++r)
            for (int c = 0; c < codec.k; ++c)
                if (u(r, c) != u_hat(r, c)) {
                    h.counts[c]++;
                    h.erroneous_blocks++;
                    break;
                }
        done += bs;
        ++batch_index;
    }
    h.fraction.resize(codec.k, 0.0);
    if (h.erroneous_blocks > 0)
        for (int c = 0; c < codec.k; ++c)
            h.fraction[c] = static_cast<double>(h.counts[c]) / h.erroneous_blocks;
    return h;
}

std::string eval_report_csv(const std::vector<EvalRow>& rows) {
    std::ostringstream out;
    out << "snr_db,blocks,bit_errors,block_errors,ber,bler,ber_ci,bler_ci\n";
    for (const auto& r : rows)
        out << fmt_double(r.snr_db) << ',' << r.blocks << ',' << r.bit_errors << ','
            << r.block_errors << ',' << fmt_double(r.ber) << ',' << fmt_double(r.bler) << ','
            << fmt_double(r.ber_ci) << ',' << fmt_double(r.bler_ci) << '\n';
    return out.str();
}

std::string histogram_csv(const Histogram& h) {
    std::ostringstream out;
    out << "bin_low,bin_high,count\n";
    for (size_t i = 0; i < h.counts.size(); ++i)
        out << fmt_double(h.bin_low[i]) << ',' << fmt_double(h.bin_high[i]) << ','
            << h.counts[i] << '\n';
    return out.str();
}

std::string position_histogram_csv(const FirstErrorHistogram& h) {
    std::ostringstream out;
    out << "position,count\n";
    for (size_t i = 0; i < h.counts.size(); ++i) out << i << ',' << h.counts[i] << '\n';
    return out.str();
}

double q_function(double x) { return 0.5 * std::erfc(x / std::sqrt(2.0)); }

}  // namespace npolar
