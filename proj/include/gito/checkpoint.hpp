#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "gito/tensor.hpp"

namespace gito {

// Binary tensor archive, all integers little-endian:
//
//   "GITO"  u32 version
//   [version 2 only]  u64 header length, UTF-8 header text
//   u64 tensor count
//   per tensor: u32 name length, UTF-8 name, u32 rank, rank x u64 dims,
//               [version 2 only] u32 element type (0 float32, 1 float64),
//               payload (row-major)
//
// Version 1 carries float32 tensors only. Version 2 adds a free-form text
// header, used by model checkpoints for configuration and normalisation
// statistics, and per-tensor element types.

inline constexpr std::uint32_t kCheckpointPlainVersion = 1;
inline constexpr std::uint32_t kCheckpointHeaderVersion = 2;

class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& what, std::uint64_t offset)
        : std::runtime_error(what + " (byte offset " + std::to_string(offset) + ")"), detail_(what), offset_(offset)
    {
    }
    std::uint64_t offset() const noexcept { return offset_; }
    /// The message without the offset suffix.
    const std::string& detail() const noexcept { return detail_; }

private:
    std::string detail_;
    std::uint64_t offset_;
};

struct StoredTensor {
    std::string name;
    Shape shape;
    std::vector<double> values;
    bool float64 = false;  // payload width on disk
};

struct Checkpoint {
    std::string header;  // written as version 2 when non-empty or any tensor is float64
    std::vector<StoredTensor> tensors;

    const StoredTensor* find(const std::string& name) const;
};

/// Stores at the tensor's own precision.
template <typename T>
StoredTensor store_tensor(const std::string& name, const Tensor<T>& t);

/// Copies stored values into an existing tensor of identical shape.
template <typename T>
void restore_tensor(const StoredTensor& stored, Tensor<T>& target);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::filesystem::path& path);

std::vector<char> encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(const std::vector<char>& bytes);

}  // namespace gito
