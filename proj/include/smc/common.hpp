#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace smc {

inline constexpr int kSampleRate = 16000;

template <class Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixXf = RowMatrix<float>;
using RowMatrixXd = RowMatrix<double>;

// Error taxonomy. The CLI maps these onto exit codes, so every failure a user
// can trigger should surface as one of them.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class ConfigError : public Error { using Error::Error; };
class ShapeError : public Error { using Error::Error; };
class FormatError : public Error { using Error::Error; };
class CorruptionError : public FormatError { using FormatError::FormatError; };
class LengthError : public FormatError { using FormatError::FormatError; };
class VersionError : public FormatError { using FormatError::FormatError; };
class IoError : public Error { using Error::Error; };
class StateError : public Error { using Error::Error; };
class NumericError : public Error { using Error::Error; };
class EmptyInputError : public Error { using Error::Error; };

// IEEE 802.3 CRC-32 (reflected, poly 0xEDB88320), as used by zlib/PNG.
std::uint32_t crc32(std::span<const std::uint8_t> bytes, std::uint32_t seed = 0);

std::uint64_t splitmix64(std::uint64_t x);

using Rng = std::mt19937_64;

// Little-endian byte buffer writer/reader shared by every on-disk format.
class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u16(std::uint16_t v) { put(v, 2); }
    void u32(std::uint32_t v) { put(v, 4); }
    void u64(std::uint64_t v) { put(v, 8); }
    void f32(float v);
    void f64(double v);
    void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
    void bytes(std::span<const std::uint8_t> s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
    // Appends the CRC32 of everything written so far.
    void crc_trailer() { u32(crc32(buf_)); }

    const std::vector<std::uint8_t>& data() const { return buf_; }
    std::vector<std::uint8_t> take() { return std::move(buf_); }

private:
    void put(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    std::vector<std::uint8_t> buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

    std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
    std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
    std::uint64_t u64() { return get(8); }
    float f32();
    double f64();
    std::string str(std::size_t n);
    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return data_.size() - pos_; }
    void require(std::size_t n) const {
        if (remaining() < n) throw LengthError("unexpected end of data");
    }

private:
    std::uint64_t get(int n) {
        require(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }
    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

// Splits a file image into body and trailing CRC32, verifying the checksum.
// Throws LengthError when too short and CorruptionError on mismatch.
std::span<const std::uint8_t> verify_crc_trailer(std::span<const std::uint8_t> image);

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);

// Worker count from SMC_THREADS (default 1). Work is split by index so results
// never depend on the worker count.
int worker_count();
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace smc
