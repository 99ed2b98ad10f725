#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace wsihyb {

// Error categories aligned with process exit codes (see wsihyb.h / the CLI):
// usage = 2, data = 3, numeric = 4.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

const char* version_string();

// ---------------------------------------------------------------------------
// Hashing (FNV-1a, 64 bit). Used for file digests, seed derivation and
// checkpoint checksums.

uint64_t fnv1a64(const void* data, size_t len,
                 uint64_t seed = 0xcbf29ce484222325ull);
uint64_t fnv1a64(const std::string& s);
std::string hex64(uint64_t v);

// ---------------------------------------------------------------------------
// Deterministic RNG. xoshiro256++ seeded through splitmix64. Streams are
// derived from a single 64-bit seed by fixed string labels so that every
// subsystem draws from its own independent sequence.

uint64_t splitmix64_next(uint64_t& state);

class Rng {
public:
    using result_type = uint64_t;

    explicit Rng(uint64_t seed);

    uint64_t next();
    uint64_t operator()() { return next(); }
    static constexpr uint64_t min() { return 0; }
    static constexpr uint64_t max() { return ~0ull; }

    double uniform();                        // [0, 1)
    uint64_t uniform_below(uint64_t bound);  // [0, bound), bound > 0
    int64_t uniform_int(int64_t lo, int64_t hi);  // inclusive range
    double gauss3();  // Irwin-Hall(3) pseudo-normal, mean 0, variance 1

    // Independent child stream; the label keeps derivations stable across
    // unrelated code changes.
    Rng split(const std::string& label) const;

    uint64_t seed() const { return seed_; }

private:
    uint64_t state_[4];
    uint64_t seed_;
};

// ---------------------------------------------------------------------------
// Little-endian binary file IO with offset tracking for parse errors.

class BinaryWriter {
public:
    explicit BinaryWriter(const std::string& path);
    ~BinaryWriter();
    BinaryWriter(const BinaryWriter&) = delete;
    BinaryWriter& operator=(const BinaryWriter&) = delete;

    void u8(uint8_t v);
    void u16(uint16_t v);
    void u32(uint32_t v);
    void u64(uint64_t v);
    void f64(double v);
    void bytes(const void* data, size_t len);
    void close();

    uint64_t offset() const { return offset_; }

private:
    void* file_ = nullptr;
    std::string path_;
    uint64_t offset_ = 0;
};

class BinaryReader {
public:
    explicit BinaryReader(const std::string& path);
    ~BinaryReader();
    BinaryReader(const BinaryReader&) = delete;
    BinaryReader& operator=(const BinaryReader&) = delete;

    uint8_t u8();
    uint16_t u16();
    uint32_t u32();
    uint64_t u64();
    double f64();
    void bytes(void* out, size_t len);
    bool at_eof();

    uint64_t offset() const { return offset_; }
    [[noreturn]] void fail(const std::string& what) const;

private:
    void* file_ = nullptr;
    std::string path_;
    uint64_t offset_ = 0;
};

// ---------------------------------------------------------------------------
// Deterministic work distribution: fn(i) runs once for every i in [0, n);
// callers store results by index so the outcome does not depend on the
// worker count. workers == 0 means hardware concurrency.

void parallel_for(size_t n, unsigned workers,
                  const std::function<void(size_t)>& fn);

unsigned resolve_workers(unsigned requested);

// Progress reporting hook; no-op when empty.
using ProgressFn = std::function<void(const std::string&)>;

// ---------------------------------------------------------------------------
// Small filesystem helpers built on std::filesystem with our error type.

void ensure_dir(const std::string& path);
bool file_exists(const std::string& path);
std::string path_join(const std::string& a, const std::string& b);
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);
uint64_t file_digest(const std::string& path);

}  // namespace wsihyb
