#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace diqre {

struct EntropyCertificate;

// Packed bits, least significant bit first within each byte; pad bits are zero.
class BitStream {
public:
    BitStream() = default;
    explicit BitStream(std::uint64_t length) : bytes_((length + 7) / 8, 0), length_(length) {}
    static BitStream from_bits(const std::vector<int>& bits);
    static BitStream from_bytes(std::vector<std::uint8_t> bytes, std::uint64_t length);
    static BitStream random(std::uint64_t length, std::mt19937_64& rng);

    std::uint64_t size() const { return length_; }
    int get(std::uint64_t i) const { return (bytes_[i >> 3] >> (i & 7)) & 1; }
    void set(std::uint64_t i, int bit);
    void push_back(int bit);
    const std::vector<std::uint8_t>& bytes() const { return bytes_; }
    std::vector<int> to_bits() const;
    // 64-bit words, bit i of the stream at bit (i mod 64) of word i / 64.
    std::vector<std::uint64_t> words() const;

    BitStream operator^(const BitStream& o) const;
    bool operator==(const BitStream& o) const { return length_ == o.length_ && bytes_ == o.bytes_; }

    // Raw file: 8-byte little-endian bit length, then the packed payload.
    void save(const std::string& path) const;
    static BitStream load(const std::string& path);

private:
    std::vector<std::uint8_t> bytes_;
    std::uint64_t length_ = 0;
};

// floor(k - 2 log2(1/eps_x))
std::uint64_t output_length(double k, double eps_x);

// r_i = XOR_j seed[i - j + n - 1] v_j, evaluated row by row.
BitStream toeplitz_naive(const BitStream& seed, const BitStream& v, std::uint64_t m);

// Same product through blocked floating-point convolutions of block length l.
BitStream toeplitz_fft(const BitStream& seed, const BitStream& v, std::uint64_t m, std::uint64_t block_length);

struct ExtractionReport {
    std::uint64_t n = 0;
    std::uint64_t m = 0;
    std::uint64_t block_length = 0;
    double eps_x = 0.0;
    double eps_s = 0.0;
    double total_soundness = 0.0;  // 2 eps_s + eps_x
};

double total_soundness(double eps_s, double eps_x);

BitStream extract(const BitStream& v, const EntropyCertificate& cert, double eps_x, const BitStream& seed,
                  std::uint64_t block_length = 0, ExtractionReport* report = nullptr);

}  // namespace diqre
