#include "diqre/extractor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <fftw3.h>

#include "diqre/errors.hpp"
#include "diqre/protocol_engine.hpp"

namespace diqre {

BitStream BitStream::from_bits(const std::vector<int>& bits) {
    BitStream s(bits.size());
    for (std::uint64_t i = 0; i < bits.size(); ++i) s.set(i, bits[i]);
    return s;
}

BitStream BitStream::from_bytes(std::vector<std::uint8_t> bytes, std::uint64_t length) {
    if (length > 8 * bytes.size()) throw ParameterError("bit length exceeds payload");
    BitStream s;
    bytes.resize((length + 7) / 8);
    if (length % 8) bytes.back() &= static_cast<std::uint8_t>((1u << (length % 8)) - 1);
    s.bytes_ = std::move(bytes);
    s.length_ = length;
    return s;
}

BitStream BitStream::random(std::uint64_t length, std::mt19937_64& rng) {
    BitStream s(length);
    for (std::uint64_t i = 0; i < s.bytes_.size(); i += 8) {
        std::uint64_t w = rng();
        for (std::uint64_t k = 0; k < 8 && i + k < s.bytes_.size(); ++k) s.bytes_[i + k] = static_cast<std::uint8_t>(w >> (8 * k));
    }
    if (length % 8) s.bytes_.back() &= static_cast<std::uint8_t>((1u << (length % 8)) - 1);
    return s;
}

void BitStream::set(std::uint64_t i, int bit) {
    if (bit) bytes_[i >> 3] |= static_cast<std::uint8_t>(1u << (i & 7));
    else bytes_[i >> 3] &= static_cast<std::uint8_t>(~(1u << (i & 7)));
}

void BitStream::push_back(int bit) {
    if (length_ % 8 == 0) bytes_.push_back(0);
    ++length_;
    set(length_ - 1, bit);
}

std::vector<int> BitStream::to_bits() const {
    std::vector<int> out(length_);
    for (std::uint64_t i = 0; i < length_; ++i) out[i] = get(i);
    return out;
}

std::vector<std::uint64_t> BitStream::words() const {
    std::vector<std::uint64_t> w((length_ + 63) / 64, 0);
    for (std::uint64_t i = 0; i < bytes_.size(); ++i) w[i / 8] |= static_cast<std::uint64_t>(bytes_[i]) << (8 * (i % 8));
    return w;
}

BitStream BitStream::operator^(const BitStream& o) const {
    if (o.length_ != length_) throw ParameterError("bit streams differ in length");
    BitStream r = *this;
    for (std::size_t i = 0; i < bytes_.size(); ++i) r.bytes_[i] ^= o.bytes_[i];
    return r;
}

void BitStream::save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ParameterError("cannot write " + path);
    std::uint8_t hdr[8];
    for (int k = 0; k < 8; ++k) hdr[k] = static_cast<std::uint8_t>(length_ >> (8 * k));
    f.write(reinterpret_cast<const char*>(hdr), 8);
    f.write(reinterpret_cast<const char*>(bytes_.data()), static_cast<std::streamsize>(bytes_.size()));
}

BitStream BitStream::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ParameterError("cannot read " + path);
    std::uint8_t hdr[8];
    if (!f.read(reinterpret_cast<char*>(hdr), 8)) throw ParameterError("truncated bit file header: " + path);
    std::uint64_t length = 0;
    for (int k = 0; k < 8; ++k) length |= static_cast<std::uint64_t>(hdr[k]) << (8 * k);
    std::vector<std::uint8_t> bytes((length + 7) / 8);
    if (!f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size())))
        throw ParameterError("truncated bit file payload: " + path);
    return from_bytes(std::move(bytes), length);
}

std::uint64_t output_length(double k, double eps_x) {
    if (!(eps_x > 0.0 && eps_x <= 1.0)) throw ParameterError("eps_x must lie in (0,1]");
    const double penalty = -2.0 * std::log2(eps_x);
    if (!(k > penalty)) throw InfeasiblePlanError("min-entropy too small for the requested extractor security");
    const double m = std::floor(k - penalty);
    if (m < 1.0) throw InfeasiblePlanError("extractor output would be empty");
    return static_cast<std::uint64_t>(m);
}

namespace {

void check_lengths(const BitStream& seed, const BitStream& v, std::uint64_t m) {
    if (m == 0 || v.size() == 0) throw ParameterError("extractor lengths must be positive");
    if (seed.size() != m + v.size() - 1) throw ParameterError("seed length must equal m + n - 1");
}

// 64 bits of w starting at bit position pos (bits past the end read as zero).
inline std::uint64_t window(const std::vector<std::uint64_t>& w, std::uint64_t pos) {
    const std::uint64_t q = pos >> 6, r = pos & 63;
    std::uint64_t lo = q < w.size() ? w[q] : 0;
    if (r == 0) return lo;
    std::uint64_t hi = q + 1 < w.size() ? w[q + 1] : 0;
    return (lo >> r) | (hi << (64 - r));
}

}  // namespace

BitStream toeplitz_naive(const BitStream& seed, const BitStream& v, std::uint64_t m) {
    check_lengths(seed, v, m);
    const std::uint64_t n = v.size();
    const std::uint64_t L = seed.size();
    // Reversed seed: row i of T is the reversed seed read from position m - 1 - i.
    BitStream rev(L);
    for (std::uint64_t t = 0; t < L; ++t) rev.set(t, seed.get(L - 1 - t));
    const auto rw = rev.words();
    const auto vw = v.words();
    BitStream out(m);
    for (std::uint64_t i = 0; i < m; ++i) {
        const std::uint64_t start = m - 1 - i;
        std::uint64_t acc = 0;
        for (std::uint64_t k = 0; k < vw.size(); ++k) acc ^= window(rw, start + 64 * k) & vw[k];
        // bits of the last word beyond n are zero in vw
        out.set(i, __builtin_parityll(acc));
    }
    (void)n;
    return out;
}

namespace {

struct FftwPlan {
    std::size_t P;
    double* real = nullptr;
    fftw_complex* spec_a = nullptr;
    fftw_complex* spec_b = nullptr;
    fftw_plan fwd = nullptr;
    fftw_plan inv = nullptr;

    explicit FftwPlan(std::size_t size) : P(size) {
        real = fftw_alloc_real(P);
        spec_a = fftw_alloc_complex(P / 2 + 1);
        spec_b = fftw_alloc_complex(P / 2 + 1);
        fwd = fftw_plan_dft_r2c_1d(static_cast<int>(P), real, spec_a, FFTW_ESTIMATE);
        inv = fftw_plan_dft_c2r_1d(static_cast<int>(P), spec_a, real, FFTW_ESTIMATE);
        if (!real || !spec_a || !spec_b || !fwd || !inv) throw NumericError("FFT plan allocation failed");
    }
    ~FftwPlan() {
        fftw_destroy_plan(fwd);
        fftw_destroy_plan(inv);
        fftw_free(real);
        fftw_free(spec_a);
        fftw_free(spec_b);
    }
    FftwPlan(const FftwPlan&) = delete;
    FftwPlan& operator=(const FftwPlan&) = delete;
};

std::size_t transform_size(std::uint64_t need) {
    std::size_t P = 1;
    while (P < need) P <<= 1;
    return std::max<std::size_t>(P, 2);
}

}  // namespace

BitStream toeplitz_fft(const BitStream& seed, const BitStream& v, std::uint64_t m, std::uint64_t l) {
    check_lengths(seed, v, m);
    const std::uint64_t n = v.size();
    if (l < 1 || l > n) throw ParameterError("block length must lie in [1, n]");
    const std::uint64_t blocks = (n + l - 1) / l;
    const std::size_t P = transform_size(m + l - 1);
    FftwPlan plan(P);
    std::vector<std::uint64_t> acc(m, 0);

    for (std::uint64_t b = 0; b < blocks; ++b) {
        const std::uint64_t j0 = b * l;
        bool any = false;
        for (std::uint64_t j = 0; j < l && j0 + j < n; ++j)
            if (v.get(j0 + j)) {
                any = true;
                break;
            }
        if (!any) continue;

        // block of v
        std::fill(plan.real, plan.real + P, 0.0);
        for (std::uint64_t j = 0; j < l && j0 + j < n; ++j) plan.real[j] = v.get(j0 + j);
        fftw_execute(plan.fwd);
        std::memcpy(plan.spec_b, plan.spec_a, sizeof(fftw_complex) * (P / 2 + 1));

        // seed window w_t = seed[t + n - j0 - l], t in [0, m + l - 1)
        std::fill(plan.real, plan.real + P, 0.0);
        const std::int64_t off = static_cast<std::int64_t>(n) - static_cast<std::int64_t>(j0) - static_cast<std::int64_t>(l);
        for (std::uint64_t t = 0; t < m + l - 1; ++t) {
            const std::int64_t s = static_cast<std::int64_t>(t) + off;
            if (s >= 0 && static_cast<std::uint64_t>(s) < seed.size()) plan.real[t] = seed.get(static_cast<std::uint64_t>(s));
        }
        fftw_execute(plan.fwd);
        for (std::size_t k = 0; k < P / 2 + 1; ++k) {
            const double ar = plan.spec_a[k][0], ai = plan.spec_a[k][1];
            const double br = plan.spec_b[k][0], bi = plan.spec_b[k][1];
            plan.spec_a[k][0] = ar * br - ai * bi;
            plan.spec_a[k][1] = ar * bi + ai * br;
        }
        fftw_execute(plan.inv);
        const double scale = 1.0 / static_cast<double>(P);
        for (std::uint64_t i = 0; i < m; ++i) {
            const double x = plan.real[i + l - 1] * scale;
            const double r = std::nearbyint(x);
            if (std::abs(x - r) > 0.25)
                throw PrecisionError("transform residual exceeds 0.25; use a smaller block length");
            acc[i] += static_cast<std::uint64_t>(r);
        }
    }
    BitStream out(m);
    for (std::uint64_t i = 0; i < m; ++i) out.set(i, static_cast<int>(acc[i] & 1));
    return out;
}

double total_soundness(double eps_s, double eps_x) { return 2.0 * eps_s + eps_x; }

BitStream extract(const BitStream& v, const EntropyCertificate& cert, double eps_x, const BitStream& seed,
                  std::uint64_t block_length, ExtractionReport* report) {
    if (!cert.success) throw InvalidStateError("refusing to extract without a successful certificate");
    if (!(cert.min_entropy_bound > 0.0)) throw InvalidStateError("refusing to extract from a zero-entropy certificate");
    const std::uint64_t m = output_length(cert.min_entropy_bound, eps_x);
    const std::uint64_t n = v.size();
    if (seed.size() != m + n - 1) throw ParameterError("seed length must equal m + n - 1 = " + std::to_string(m + n - 1));
    const std::uint64_t l = block_length == 0 ? std::min<std::uint64_t>(n, std::max<std::uint64_t>(m, 1024)) : block_length;
    BitStream out = toeplitz_fft(seed, v, m, l);
    if (report) {
        report->n = n;
        report->m = m;
        report->block_length = l;
        report->eps_x = eps_x;
        report->eps_s = cert.eps_s;
        report->total_soundness = total_soundness(cert.eps_s, eps_x);
    }
    return out;
}

}  // namespace diqre
