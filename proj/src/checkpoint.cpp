#include "gito/checkpoint.hpp"

#include <type_traits>

#include "gito/byte_io.hpp"

namespace gito {

const StoredTensor* Checkpoint::find(const std::string& name) const
{
    for (const auto& t : tensors)
        if (t.name == name)
            return &t;
    return nullptr;
}

template <typename T>
StoredTensor store_tensor(const std::string& name, const Tensor<T>& t)
{
    StoredTensor out{name, t.shape(), std::vector<double>(t.data().begin(), t.data().end()),
                     std::is_same_v<T, double>};
    return out;
}

template <typename T>
void restore_tensor(const StoredTensor& stored, Tensor<T>& target)
{
    if (stored.shape != target.shape())
        throw ShapeError("checkpoint tensor '" + stored.name + "' has shape " + shape_to_string(stored.shape) +
                         ", expected " + shape_to_string(target.shape()));
    auto dst = target.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i)
        dst[i] = static_cast<T>(stored.values[i]);
}

std::vector<char> encode_checkpoint(const Checkpoint& checkpoint)
{
    ByteWriter w;
    w.magic("GITO");
    bool extended = !checkpoint.header.empty();
    for (const auto& t : checkpoint.tensors)
        extended = extended || t.float64;
    w.u32(extended ? kCheckpointHeaderVersion : kCheckpointPlainVersion);
    if (extended) {
        w.u64(checkpoint.header.size());
        w.bytes(checkpoint.header);
    }
    w.u64(checkpoint.tensors.size());
    for (const auto& t : checkpoint.tensors) {
        w.u32(static_cast<std::uint32_t>(t.name.size()));
        w.bytes(t.name);
        w.u32(static_cast<std::uint32_t>(t.shape.size()));
        for (auto d : t.shape)
            w.u64(d);
        if (extended)
            w.u32(t.float64 ? 1 : 0);
        for (double v : t.values) {
            if (t.float64)
                w.f64(v);
            else
                w.f32(static_cast<float>(v));
        }
    }
    return w.take();
}

Checkpoint decode_checkpoint(const std::vector<char>& bytes)
{
    ByteReader r(bytes);
    r.expect_magic("GITO");
    const auto version = r.u32();
    if (version != kCheckpointPlainVersion && version != kCheckpointHeaderVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version), r.offset() - 4);
    Checkpoint out;
    if (version == kCheckpointHeaderVersion)
        out.header = r.string(r.u64());
    const auto count = r.u64();
    for (std::uint64_t i = 0; i < count; ++i) {
        StoredTensor t;
        t.name = r.string(r.u32());
        const auto rank = r.u32();
        if (rank == 0 || rank > 8)
            throw FormatError("implausible tensor rank " + std::to_string(rank), r.offset() - 4);
        std::uint64_t n = 1;
        for (std::uint32_t k = 0; k < rank; ++k) {
            const auto d = r.u64();
            if (d == 0)
                throw FormatError("zero tensor dimension", r.offset() - 8);
            t.shape.push_back(d);
            n *= d;
        }
        if (version == kCheckpointHeaderVersion) {
            const auto type = r.u32();
            if (type > 1)
                throw FormatError("unknown element type " + std::to_string(type), r.offset() - 4);
            t.float64 = type == 1;
        }
        const std::uint64_t width = t.float64 ? 8 : 4;
        if (n > r.remaining() / width)
            throw FormatError("tensor '" + t.name + "' payload exceeds file size", r.offset());
        t.values.resize(n);
        for (auto& v : t.values)
            v = t.float64 ? r.f64() : r.f32();
        out.tensors.push_back(std::move(t));
    }
    if (r.remaining() != 0)
        throw FormatError("trailing bytes after last tensor", r.offset());
    return out;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint)
{
    write_file(path, encode_checkpoint(checkpoint));
}

Checkpoint read_checkpoint(const std::filesystem::path& path)
{
    return decode_checkpoint(read_file(path));
}

template StoredTensor store_tensor(const std::string&, const Tensor<float>&);
template StoredTensor store_tensor(const std::string&, const Tensor<double>&);
template void restore_tensor(const StoredTensor&, Tensor<float>&);
template void restore_tensor(const StoredTensor&, Tensor<double>&);

}  // namespace gito
