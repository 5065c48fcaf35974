#include "osnet/serialize.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace osnet {

namespace {

constexpr char kTensorMagic[4] = {'O', 'S', 'T', 'N'};
constexpr char kArchiveMagic[4] = {'O', 'S', 'A', 'R'};

template <typename T>
constexpr uint8_t dtype_code() {
    if constexpr (std::is_same_v<T, float>) return 0;
    else return 1;
}

void put_u32(std::ostream& os, uint32_t v) {
    const uint8_t b[4] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8), static_cast<uint8_t>(v >> 16),
                          static_cast<uint8_t>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t v) {
    uint8_t b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<uint8_t>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

uint32_t get_u32(std::istream& is) {
    uint8_t b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error("tensor/archive stream truncated");
    return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 | static_cast<uint32_t>(b[2]) << 16 |
           static_cast<uint32_t>(b[3]) << 24;
}

uint64_t get_u64(std::istream& is) {
    uint8_t b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw std::runtime_error("tensor/archive stream truncated");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

template <typename T>
void put_scalar(std::ostream& os, T v) {
    if constexpr (std::is_same_v<T, float>) {
        uint32_t bits;
        std::memcpy(&bits, &v, 4);
        put_u32(os, bits);
    } else {
        uint64_t bits;
        std::memcpy(&bits, &v, 8);
        put_u64(os, bits);
    }
}

template <typename T>
T get_scalar(std::istream& is) {
    T v;
    if constexpr (std::is_same_v<T, float>) {
        const uint32_t bits = get_u32(is);
        std::memcpy(&v, &bits, 4);
    } else {
        const uint64_t bits = get_u64(is);
        std::memcpy(&v, &bits, 8);
    }
    return v;
}

}  // namespace

template <typename T>
void save_tensor(std::ostream& os, const TensorT<T>& t) {
    os.write(kTensorMagic, 4);
    const uint8_t header[4] = {1, dtype_code<T>(), static_cast<uint8_t>(t.ndim()), 0};
    os.write(reinterpret_cast<const char*>(header), 4);
    for (int i = 0; i < t.ndim(); ++i) put_u32(os, static_cast<uint32_t>(t.dim(i)));
    for (int64_t i = 0; i < t.numel(); ++i) put_scalar(os, t.at(i));
}

template <typename T>
TensorPtrT<T> load_tensor(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kTensorMagic, 4) != 0)
        throw std::runtime_error("tensor file: bad magic (expected OSTN)");
    uint8_t header[4];
    is.read(reinterpret_cast<char*>(header), 4);
    if (!is) throw std::runtime_error("tensor file: truncated header");
    if (header[0] != 1) throw std::runtime_error("tensor file: unsupported version " + std::to_string(header[0]));
    if (header[1] != dtype_code<T>())
        throw std::runtime_error("tensor file: dtype code " + std::to_string(header[1]) +
                                 " does not match requested precision");
    const int ndim = header[2];
    if (ndim < 1 || ndim > 4) throw std::runtime_error("tensor file: rank must be 1..4");
    Shape shape(static_cast<size_t>(ndim));
    for (auto& d : shape) d = get_u32(is);
    auto t = make_tensor<T>(shape);
    for (int64_t i = 0; i < t->numel(); ++i) t->at(i) = get_scalar<T>(is);
    if (!is) throw std::runtime_error("tensor file: truncated payload");
    return t;
}

template <typename T>
void save_tensor_file(const std::string& path, const TensorT<T>& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    save_tensor(os, t);
}

template <typename T>
TensorPtrT<T> load_tensor_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    return load_tensor<T>(is);
}

void Archive::add(const std::string& name, std::vector<uint8_t> bytes) {
    for (const auto& [n, _] : entries_)
        if (n == name) throw std::runtime_error("archive: duplicate entry " + name);
    entries_.emplace_back(name, std::move(bytes));
}

bool Archive::has(const std::string& name) const {
    for (const auto& [n, _] : entries_)
        if (n == name) return true;
    return false;
}

const std::vector<uint8_t>& Archive::get(const std::string& name) const {
    for (const auto& [n, b] : entries_)
        if (n == name) return b;
    throw std::runtime_error("archive: missing entry " + name);
}

void Archive::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os.write(kArchiveMagic, 4);
    const uint8_t header[4] = {1, 0, 0, 0};
    os.write(reinterpret_cast<const char*>(header), 4);
    put_u32(os, static_cast<uint32_t>(entries_.size()));
    uint64_t toc_size = 0;
    for (const auto& [name, _] : entries_) toc_size += 4 + name.size() + 8 + 8;
    uint64_t offset = 4 + 4 + 4 + toc_size;
    for (const auto& [name, bytes] : entries_) {
        put_u32(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u64(os, offset);
        put_u64(os, bytes.size());
        offset += bytes.size();
    }
    for (const auto& [_, bytes] : entries_)
        os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw std::runtime_error("write failed: " + path);
}

Archive Archive::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kArchiveMagic, 4) != 0)
        throw std::runtime_error("archive: bad magic (expected OSAR): " + path);
    uint8_t header[4];
    is.read(reinterpret_cast<char*>(header), 4);
    if (!is || header[0] != 1) throw std::runtime_error("archive: unsupported version");
    const uint32_t count = get_u32(is);
    std::vector<std::pair<std::string, std::pair<uint64_t, uint64_t>>> toc;
    toc.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t len = get_u32(is);
        std::string name(len, '\0');
        is.read(name.data(), len);
        const uint64_t off = get_u64(is);
        const uint64_t size = get_u64(is);
        if (!is) throw std::runtime_error("archive: truncated table of contents");
        toc.emplace_back(std::move(name), std::make_pair(off, size));
    }
    Archive ar;
    for (auto& [name, span] : toc) {
        is.seekg(static_cast<std::streamoff>(span.first));
        std::vector<uint8_t> bytes(span.second);
        is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!is) throw std::runtime_error("archive: truncated payload for " + name);
        ar.add(name, std::move(bytes));
    }
    return ar;
}

template <typename T>
void archive_add_tensor(Archive& ar, const std::string& name, const TensorT<T>& t) {
    std::ostringstream os(std::ios::binary);
    save_tensor(os, t);
    const std::string s = os.str();
    ar.add(name, std::vector<uint8_t>(s.begin(), s.end()));
}

template <typename T>
TensorPtrT<T> archive_get_tensor(const Archive& ar, const std::string& name) {
    const auto& bytes = ar.get(name);
    std::istringstream is(std::string(bytes.begin(), bytes.end()), std::ios::binary);
    return load_tensor<T>(is);
}

void archive_add_text(Archive& ar, const std::string& name, const std::string& text) {
    ar.add(name, std::vector<uint8_t>(text.begin(), text.end()));
}

std::string archive_get_text(const Archive& ar, const std::string& name) {
    const auto& bytes = ar.get(name);
    return std::string(bytes.begin(), bytes.end());
}

template void save_tensor<float>(std::ostream&, const TensorT<float>&);
template void save_tensor<double>(std::ostream&, const TensorT<double>&);
template TensorPtrT<float> load_tensor<float>(std::istream&);
template TensorPtrT<double> load_tensor<double>(std::istream&);
template void save_tensor_file<float>(const std::string&, const TensorT<float>&);
template void save_tensor_file<double>(const std::string&, const TensorT<double>&);
template TensorPtrT<float> load_tensor_file<float>(const std::string&);
template TensorPtrT<double> load_tensor_file<double>(const std::string&);
template void archive_add_tensor<float>(Archive&, const std::string&, const TensorT<float>&);
template void archive_add_tensor<double>(Archive&, const std::string&, const TensorT<double>&);
template TensorPtrT<float> archive_get_tensor<float>(const Archive&, const std::string&);
template TensorPtrT<double> archive_get_tensor<double>(const Archive&, const std::string&);

}  // namespace osnet
