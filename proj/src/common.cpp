#include "wsihyb/common.hpp"

#include <atomic>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

namespace wsihyb {

const char* version_string() { return "0.1.0"; }

uint64_t fnv1a64(const void* data, size_t len, uint64_t seed) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = seed;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

std::string hex64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

uint64_t splitmix64_next(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

static inline uint64_t rotl64(uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
}

Rng::Rng(uint64_t seed) : seed_(seed) {
    uint64_t sm = seed;
    for (auto& s : state_) s = splitmix64_next(sm);
}

uint64_t Rng::next() {
    const uint64_t result = rotl64(state_[0] + state_[3], 23) + state_[0];
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl64(state_[3], 45);
    return result;
}

double Rng::uniform() {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
}

uint64_t Rng::uniform_below(uint64_t bound) {
    // Rejection sampling keeps the draw unbiased for any bound.
    const uint64_t threshold = (0 - bound) % bound;
    for (;;) {
        uint64_t r = next();
        if (r >= threshold) return r % bound;
    }
}

int64_t Rng::uniform_int(int64_t lo, int64_t hi) {
    return lo + static_cast<int64_t>(
                    uniform_below(static_cast<uint64_t>(hi - lo) + 1));
}

double Rng::gauss3() {
    return (uniform() + uniform() + uniform()) * 2.0 - 3.0;
}

Rng Rng::split(const std::string& label) const {
    uint64_t child = seed_ ^ fnv1a64(label);
    splitmix64_next(child);
    return Rng(child);
}

// ---------------------------------------------------------------------------

BinaryWriter::BinaryWriter(const std::string& path) : path_(path) {
    file_ = std::fopen(path.c_str(), "wb");
    if (!file_) throw DataError("cannot open for writing: " + path);
}

BinaryWriter::~BinaryWriter() {
    if (file_) std::fclose(static_cast<FILE*>(file_));
}

void BinaryWriter::bytes(const void* data, size_t len) {
    if (std::fwrite(data, 1, len, static_cast<FILE*>(file_)) != len)
        throw DataError("short write at offset " + std::to_string(offset_) +
                        " in " + path_);
    offset_ += len;
}

void BinaryWriter::u8(uint8_t v) { bytes(&v, 1); }
void BinaryWriter::u16(uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v),
                          static_cast<unsigned char>(v >> 8)};
    bytes(b, 2);
}
void BinaryWriter::u32(uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(b, 4);
}
void BinaryWriter::u64(uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(b, 8);
}
void BinaryWriter::f64(double v) { u64(std::bit_cast<uint64_t>(v)); }

void BinaryWriter::close() {
    if (file_) {
        if (std::fclose(static_cast<FILE*>(file_)) != 0)
            throw DataError("close failed: " + path_);
        file_ = nullptr;
    }
}

BinaryReader::BinaryReader(const std::string& path) : path_(path) {
    file_ = std::fopen(path.c_str(), "rb");
    if (!file_) throw DataError("cannot open: " + path);
}

BinaryReader::~BinaryReader() {
    if (file_) std::fclose(static_cast<FILE*>(file_));
}

void BinaryReader::fail(const std::string& what) const {
    throw DataError(what + " at offset " + std::to_string(offset_) + " in " +
                    path_);
}

void BinaryReader::bytes(void* out, size_t len) {
    if (std::fread(out, 1, len, static_cast<FILE*>(file_)) != len)
        fail("truncated file");
    offset_ += len;
}

uint8_t BinaryReader::u8() {
    uint8_t v;
    bytes(&v, 1);
    return v;
}
uint16_t BinaryReader::u16() {
    unsigned char b[2];
    bytes(b, 2);
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
}
uint32_t BinaryReader::u32() {
    unsigned char b[4];
    bytes(b, 4);
    uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}
uint64_t BinaryReader::u64() {
    unsigned char b[8];
    bytes(b, 8);
    uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}
double BinaryReader::f64() { return std::bit_cast<double>(u64()); }

bool BinaryReader::at_eof() {
    FILE* f = static_cast<FILE*>(file_);
    int c = std::fgetc(f);
    if (c == EOF) return true;
    std::ungetc(c, f);
    return false;
}

// ---------------------------------------------------------------------------

unsigned resolve_workers(unsigned requested) {
    if (requested > 0) return requested;
    unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? hw : 1;
}

void parallel_for(size_t n, unsigned workers,
                  const std::function<void(size_t)>& fn) {
    workers = resolve_workers(workers);
    if (workers <= 1 || n <= 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<size_t> cursor{0};
    std::exception_ptr error;
    std::atomic<bool> failed{false};
    auto body = [&] {
        for (;;) {
            size_t i = cursor.fetch_add(1);
            if (i >= n || failed.load()) return;
            try {
                fn(i);
            } catch (...) {
                if (!failed.exchange(true)) error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    size_t count = std::min<size_t>(workers, n);
    pool.reserve(count);
    for (size_t t = 0; t < count; ++t) pool.emplace_back(body);
    for (auto& t : pool) t.join();
    if (failed.load() && error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------

void ensure_dir(const std::string& path) {
    std::error_code ec;
    std::filesystem::create_directories(path, ec);
    if (ec) throw DataError("cannot create directory " + path + ": " + ec.message());
}

bool file_exists(const std::string& path) {
    return std::filesystem::exists(path);
}

std::string path_join(const std::string& a, const std::string& b) {
    if (a.empty()) return b;
    return (std::filesystem::path(a) / b).string();
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << content;
    if (!out) throw DataError("write failed: " + path);
}

uint64_t file_digest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path);
    uint64_t h = 0xcbf29ce484222325ull;
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof(buf));
        std::streamsize got = in.gcount();
        if (got > 0) h = fnv1a64(buf, static_cast<size_t>(got), h);
    }
    return h;
}

}  // namespace wsihyb
