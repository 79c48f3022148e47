#pragma once

#include "npolar/nn.hpp"

namespace npolar {

enum class ChannelKind { awgn, rayleigh_fast, bursty };

struct ChannelSpec {
    ChannelKind kind = ChannelKind::awgn;
    double sigma = 1.0;
    double rho = 0.0;      // burst probability
    double sigma_b = 0.0;  // burst std

    static ChannelSpec awgn(double sigma);
    static ChannelSpec rayleigh(double sigma);
    static ChannelSpec bursty(double sigma, double rho, double sigma_b);
};

// Per-symbol SNR convention: sigma = 10^(-snr_db/20) for unit-power symbols.
double snr_db_to_sigma(double snr_db);

// splitmix64; used to derive per-stream seeds as hash(run_seed, stream_id, block_index).
uint64_t mix64(uint64_t x);
uint64_t derive_seed(uint64_t run_seed, uint64_t stream_id, uint64_t block_index);

// Deterministic Gaussian stream: mt19937_64 uniforms through Box-Muller.
class GaussianRng {
  public:
    explicit GaussianRng(uint64_t seed) : gen_(seed) {}
    double normal();
    double uniform();  // in [0,1)
    uint8_t bit() { return static_cast<uint8_t>(gen_() >> 63); }

  private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

struct ChannelRealization {
    Mat y;
    Mat fading;  // rayleigh h per symbol; empty otherwise
};

Mat apply_channel(const ChannelSpec& spec, const Mat& x, uint64_t seed);
ChannelRealization apply_channel_traced(const ChannelSpec& spec, const Mat& x, uint64_t seed);

}  // namespace npolar
