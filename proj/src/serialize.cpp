#include "vicon/serialize.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

namespace vicon {

// ---------------------------------------------------------------------------
// SHA-256 (FIPS 180-4)
// ---------------------------------------------------------------------------

namespace {

constexpr std::array<uint32_t, 64> kSha256K = {
    0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4, 0xab1c5ed5,
    0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe, 0x9bdc06a7, 0xc19bf174,
    0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc, 0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da,
    0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7, 0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967,
    0x27b70a85, 0x2e1b2138, 0x4d2c6dfc, 0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85,
    0xa2bfe8a1, 0xa81a664b, 0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070,
    0x19a4c116, 0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f, 0x682e6ff3,
    0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7, 0xc67178f2};

inline uint32_t rotr(uint32_t x, uint32_t n) { return (x >> n) | (x << (32 - n)); }

void sha256_block(std::array<uint32_t, 8>& state, const uint8_t* block) {
    uint32_t w[64];
    for (int i = 0; i < 16; ++i) {
        w[i] = (uint32_t(block[i * 4]) << 24) | (uint32_t(block[i * 4 + 1]) << 16) |
               (uint32_t(block[i * 4 + 2]) << 8) | uint32_t(block[i * 4 + 3]);
    }
    for (int i = 16; i < 64; ++i) {
        const uint32_t s0 = rotr(w[i - 15], 7) ^ rotr(w[i - 15], 18) ^ (w[i - 15] >> 3);
        const uint32_t s1 = rotr(w[i - 2], 17) ^ rotr(w[i - 2], 19) ^ (w[i - 2] >> 10);
        w[i] = w[i - 16] + s0 + w[i - 7] + s1;
    }
    uint32_t a = state[0], b = state[1], c = state[2], d = state[3];
    uint32_t e = state[4], f = state[5], g = state[6], h = state[7];
    for (int i = 0; i < 64; ++i) {
        const uint32_t s1 = rotr(e, 6) ^ rotr(e, 11) ^ rotr(e, 25);
        const uint32_t ch = (e & f) ^ (~e & g);
        const uint32_t t1 = h + s1 + ch + kSha256K[static_cast<size_t>(i)] + w[i];
        const uint32_t s0 = rotr(a, 2) ^ rotr(a, 13) ^ rotr(a, 22);
        const uint32_t maj = (a & b) ^ (a & c) ^ (b & c);
        const uint32_t t2 = s0 + maj;
        h = g;
        g = f;
        f = e;
        e = d + t1;
        d = c;
        c = b;
        b = a;
        a = t1 + t2;
    }
    state[0] += a;
    state[1] += b;
    state[2] += c;
    state[3] += d;
    state[4] += e;
    state[5] += f;
    state[6] += g;
    state[7] += h;
}

}  // namespace

std::string sha256_hex(const uint8_t* data, size_t len) {
    std::array<uint32_t, 8> state = {0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a,
                                     0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19};
    size_t full = len / 64;
    for (size_t i = 0; i < full; ++i) sha256_block(state, data + i * 64);

    std::array<uint8_t, 128> tail{};
    const size_t rem = len % 64;
    std::memcpy(tail.data(), data + full * 64, rem);
    tail[rem] = 0x80;
    const size_t tail_len = (rem < 56) ? 64 : 128;
    const uint64_t bits = static_cast<uint64_t>(len) * 8;
    for (int i = 0; i < 8; ++i) tail[tail_len - 1 - static_cast<size_t>(i)] = static_cast<uint8_t>(bits >> (8 * i));
    sha256_block(state, tail.data());
    if (tail_len == 128) sha256_block(state, tail.data() + 64);

    static const char* hex = "0123456789abcdef";
    std::string out(64, '0');
    for (int i = 0; i < 8; ++i) {
        for (int b = 0; b < 4; ++b) {
            const uint8_t byte = static_cast<uint8_t>(state[static_cast<size_t>(i)] >> (24 - 8 * b));
            out[static_cast<size_t>(i * 8 + b * 2)] = hex[byte >> 4];
            out[static_cast<size_t>(i * 8 + b * 2 + 1)] = hex[byte & 0xf];
        }
    }
    return out;
}

std::string sha256_hex(const std::vector<uint8_t>& data) { return sha256_hex(data.data(), data.size()); }

// ---------------------------------------------------------------------------
// raw file IO
// ---------------------------------------------------------------------------

void write_binary_file(const std::filesystem::path& path, const std::vector<uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

std::vector<uint8_t> read_binary_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
    const std::streamsize size = in.tellg();
    in.seekg(0);
    std::vector<uint8_t> bytes(static_cast<size_t>(size));
    in.read(reinterpret_cast<char*>(bytes.data()), size);
    if (!in) throw std::runtime_error("read failed for '" + path.string() + "'");
    return bytes;
}

// ---------------------------------------------------------------------------
// tensor container
// ---------------------------------------------------------------------------

namespace {

template <typename T>
void append_pod(std::vector<uint8_t>& out, T value) {
    const size_t at = out.size();
    out.resize(at + sizeof(T));
    std::memcpy(out.data() + at, &value, sizeof(T));
}

template <typename T>
T read_pod(const std::vector<uint8_t>& in, size_t& at) {
    if (at + sizeof(T) > in.size()) throw std::runtime_error("tensor file truncated");
    T value;
    std::memcpy(&value, in.data() + at, sizeof(T));
    at += sizeof(T);
    return value;
}

}  // namespace

void write_tensor_file(const std::filesystem::path& path, const TensorFile& file) {
    std::vector<uint8_t> out;
    out.push_back('V');
    out.push_back('I');
    out.push_back('C');
    out.push_back('N');
    append_pod<uint32_t>(out, kTensorFileVersion);
    const std::string header = file.header.dump();
    append_pod<uint64_t>(out, header.size());
    out.insert(out.end(), header.begin(), header.end());
    append_pod<uint64_t>(out, file.tensors.size());
    for (const auto& [name, tensor] : file.tensors) {
        append_pod<uint64_t>(out, name.size());
        out.insert(out.end(), name.begin(), name.end());
        append_pod<uint64_t>(out, tensor.shape.size());
        for (int64_t d : tensor.shape) append_pod<int64_t>(out, d);
        const uint64_t bytes = tensor.data.size() * sizeof(float);
        append_pod<uint64_t>(out, bytes);
        const size_t at = out.size();
        out.resize(at + bytes);
        std::memcpy(out.data() + at, tensor.data.data(), bytes);
    }
    write_binary_file(path, out);
}

TensorFile read_tensor_file(const std::filesystem::path& path) {
    const std::vector<uint8_t> in = read_binary_file(path);
    size_t at = 0;
    if (in.size() < 8 || in[0] != 'V' || in[1] != 'I' || in[2] != 'C' || in[3] != 'N') {
        throw std::runtime_error("'" + path.string() + "' is not a tensor container");
    }
    at = 4;
    const uint32_t version = read_pod<uint32_t>(in, at);
    if (version != kTensorFileVersion) {
        throw std::runtime_error("unsupported tensor container version " + std::to_string(version));
    }
    TensorFile file;
    const uint64_t header_len = read_pod<uint64_t>(in, at);
    if (at + header_len > in.size()) throw std::runtime_error("tensor file truncated");
    file.header = nlohmann::json::parse(in.begin() + static_cast<std::ptrdiff_t>(at),
                                        in.begin() + static_cast<std::ptrdiff_t>(at + header_len));
    at += header_len;
    const uint64_t count = read_pod<uint64_t>(in, at);
    for (uint64_t i = 0; i < count; ++i) {
        const uint64_t name_len = read_pod<uint64_t>(in, at);
        if (at + name_len > in.size()) throw std::runtime_error("tensor file truncated");
        std::string name(in.begin() + static_cast<std::ptrdiff_t>(at),
                         in.begin() + static_cast<std::ptrdiff_t>(at + name_len));
        at += name_len;
        const uint64_t ndim = read_pod<uint64_t>(in, at);
        Shape shape;
        for (uint64_t d = 0; d < ndim; ++d) shape.push_back(read_pod<int64_t>(in, at));
        const uint64_t bytes = read_pod<uint64_t>(in, at);
        if (bytes != static_cast<uint64_t>(numel_of(shape)) * sizeof(float)) {
            throw std::runtime_error("tensor '" + name + "' byte length " + std::to_string(bytes) +
                                     " does not match shape " + shape_str(shape));
        }
        if (at + bytes > in.size()) throw std::runtime_error("tensor file truncated");
        Tensor<float> tensor(shape);
        std::memcpy(tensor.data.data(), in.data() + at, bytes);
        at += bytes;
        require_finite(tensor, "checkpoint load");
        file.tensors.emplace(std::move(name), std::move(tensor));
    }
    return file;
}

}  // namespace vicon
