#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "osnet/tensor.hpp"

namespace osnet {

// Tensor blob format (little-endian throughout):
//   "OSTN" | u8 version=1 | u8 dtype (0=f32, 1=f64) | u8 ndim | u8 reserved=0
//   ndim x u32 extents | data, row-major
// Readers reject unknown magic, version, or dtype.
template <typename T>
void save_tensor(std::ostream& os, const TensorT<T>& t);

template <typename T>
TensorPtrT<T> load_tensor(std::istream& is);

template <typename T>
void save_tensor_file(const std::string& path, const TensorT<T>& t);

template <typename T>
TensorPtrT<T> load_tensor_file(const std::string& path);

// Uncompressed named-blob archive used for checkpoints:
//   "OSAR" | u8 version=1 | u8 reserved[3] | u32 entry count
//   entries: u32 name length | name bytes | u64 payload offset | u64 payload size
//   payloads in entry order, no padding
// Offsets are absolute; entry order is insertion order, so a loaded archive
// written back is byte-identical.
class Archive {
public:
    void add(const std::string& name, std::vector<uint8_t> bytes);
    bool has(const std::string& name) const;
    const std::vector<uint8_t>& get(const std::string& name) const;
    const std::vector<std::pair<std::string, std::vector<uint8_t>>>& entries() const { return entries_; }

    void save(const std::string& path) const;
    static Archive load(const std::string& path);

private:
    std::vector<std::pair<std::string, std::vector<uint8_t>>> entries_;
};

template <typename T>
void archive_add_tensor(Archive& ar, const std::string& name, const TensorT<T>& t);

template <typename T>
TensorPtrT<T> archive_get_tensor(const Archive& ar, const std::string& name);

void archive_add_text(Archive& ar, const std::string& name, const std::string& text);
std::string archive_get_text(const Archive& ar, const std::string& name);

}  // namespace osnet
