#pragma once

#include "npolar/trainer.hpp"

namespace npolar {

struct CodecOps {
    int n = 0;
    int k = 0;
    std::function<Mat(const BitMat&)> encode;
    std::function<BitMat(const Mat&, double sigma)> decode;
};

CodecOps classical_codec(const CodeLayout& layout, ScMode mode = ScMode::exact);
CodecOps ml_codec(const CodeLayout& layout);
CodecOps neural_codec(const NeuralCode& code, FeedbackMode fb = FeedbackMode::hard,
                      bool parallel = false);
// Classical polar encoder paired with the neural sequential decoder.
CodecOps hybrid_codec(const NeuralCode& code, FeedbackMode fb = FeedbackMode::hard);
CodecOps uncoded_bpsk_codec(int k = 1);

struct EvalRow {
    double snr_db = 0.0;
    long blocks = 0;
    long bit_errors = 0;
    long block_errors = 0;
    double ber = 0.0;
    double bler = 0.0;
    double ber_ci = 0.0;   // Wilson 95% half-width
    double bler_ci = 0.0;
    bool one_sided = false;  // zero errors at the block cap
};

struct MonteCarloOpts {
    long min_block_errors = 100;
    long max_blocks = 1000000;
    int batch = 256;
    uint64_t seed = 0;
};

EvalRow monte_carlo_point(const CodecOps& codec, const ChannelTemplate& channel, double snr_db,
                          const MonteCarloOpts& opts);
std::vector<EvalRow> monte_carlo(const CodecOps& codec, const ChannelTemplate& channel,
                                 const std::vector<double>& snr_db_sweep,
                                 const MonteCarloOpts& opts);

double wilson_half_width(long successes, long trials);

struct DistanceProfile {
    std::vector<double> distances;
    double mean = 0.0;
    double stddev = 0.0;
    double gaussian_reference_mean = 0.0;  // sqrt(2n) for unit-power codebooks
};

DistanceProfile distance_profile(const CodecOps& codec, long num_pairs, uint64_t seed);

struct Histogram {
    std::vector<double> bin_low, bin_high;
    std::vector<long> counts;
};

Histogram histogram_from_samples(const std::vector<double>& samples, int bins);

struct FirstErrorHistogram {
    std::vector<long> counts;      // per information-bit index
    long erroneous_blocks = 0;
    std::vector<double> fraction;  // counts normalized by erroneous blocks
};

FirstErrorHistogram first_error_histogram(const CodecOps& codec, const ChannelTemplate& channel,
                                          double snr_db, long num_blocks, uint64_t seed,
                                          int batch = 256);

std::string eval_report_csv(const std::vector<EvalRow>& rows);
std::string histogram_csv(const Histogram& h);
std::string position_histogram_csv(const FirstErrorHistogram& h);

double q_function(double x);  // Gaussian tail probability

}  // namespace npolar
