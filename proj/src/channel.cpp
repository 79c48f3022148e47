#include "npolar/channel.hpp"

#include <cmath>

namespace npolar {

ChannelSpec ChannelSpec::awgn(double sigma) { return {ChannelKind::awgn, sigma, 0.0, 0.0}; }

ChannelSpec ChannelSpec::rayleigh(double sigma) {
    return {ChannelKind::rayleigh_fast, sigma, 0.0, 0.0};
}

ChannelSpec ChannelSpec::bursty(double sigma, double rho, double sigma_b) {
    return {ChannelKind::bursty, sigma, rho, sigma_b};
}

double snr_db_to_sigma(double snr_db) { return std::pow(10.0, -snr_db / 20.0); }

uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

uint64_t derive_seed(uint64_t run_seed, uint64_t stream_id, uint64_t block_index) {
    return mix64(mix64(mix64(run_seed) ^ stream_id) ^ block_index);
}

double GaussianRng::uniform() {
    return std::ldexp(static_cast<double>(gen_() >> 11), -53);
}

double GaussianRng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = 0.0;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

ChannelRealization apply_channel_traced(const ChannelSpec& spec, const Mat& x, uint64_t seed) {
    if (!(spec.sigma > 0.0)) throw std::invalid_argument("apply_channel: sigma must be > 0");
    if (spec.rho < 0.0 || spec.rho > 1.0)
        throw std::invalid_argument("apply_channel: rho must be in [0,1]");
    if (spec.sigma_b < 0.0) throw std::invalid_argument("apply_channel: sigma_b must be >= 0");
    if (!x.allFinite()) throw std::runtime_error("apply_channel: non-finite input");

    GaussianRng rng(seed);
    ChannelRealization out;
    out.y.resize(x.rows(), x.cols());
    if (spec.kind == ChannelKind::rayleigh_fast) out.fading.resize(x.rows(), x.cols());
    // row-major traversal so the noise stream is layout independent
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        for (Eigen::Index c = 0; c < x.cols(); ++c) {
            double z = spec.sigma * rng.normal();
            switch (spec.kind) {
                case ChannelKind::awgn:
                    out.y(r, c) = x(r, c) + z;
                    break;
                case ChannelKind::rayleigh_fast: {
                    double h = rng.normal();
                    out.fading(r, c) = h;
                    out.y(r, c) = h * x(r, c) + z;
                    break;
                }
                case ChannelKind::bursty: {
                    double w = 0.0;
                    if (rng.uniform() < spec.rho) w = spec.sigma_b * rng.normal();
                    out.y(r, c) = x(r, c) + z + w;
                    break;
                }
            }
        }
    }
    return out;
}

Mat apply_channel(const ChannelSpec& spec, const Mat& x, uint64_t seed) {
    return apply_channel_traced(spec, x, seed).y;
}

}  // namespace npolar
