#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "scf/dtype.hpp"

namespace scf {

using Shape = std::vector<std::int64_t>;

std::size_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Throws std::invalid_argument unless rank >= 1 and every dim is positive.
void validate_shape(const Shape& shape);

/// Dense f64 working tensor, row-major.
struct Tensor {
    Shape shape;
    std::vector<double> values;

    std::size_t size() const noexcept { return values.size(); }
    /// Length of the last axis (the softmax slice length under the default policy).
    std::size_t last_dim() const noexcept {
        return shape.empty() ? 0 : static_cast<std::size_t>(shape.back());
    }
};

/// One stored tensor: shape, on-disk dtype and the exact little-endian payload.
/// The f64 working view is materialized on request and never written back, so
/// stored bytes are only ever copied, not recomputed.
class TensorEntry {
public:
    TensorEntry() = default;
    TensorEntry(Shape shape, DType dtype, std::vector<std::byte> raw);

    /// Encodes f64 values into `dtype` (round-to-nearest-even for narrower types).
    static TensorEntry encode(Shape shape, DType dtype, std::span<const double> values);

    const Shape& shape() const noexcept { return shape_; }
    DType dtype() const noexcept { return dtype_; }
    std::span<const std::byte> raw() const noexcept { return raw_; }
    std::size_t size() const noexcept { return raw_.size() / byte_width(dtype_); }

    double value(std::size_t index) const noexcept;
    std::vector<double> values() const;
    Tensor working() const;

    bool bit_equal(const TensorEntry& other) const noexcept;

private:
    Shape shape_;
    DType dtype_ = DType::F32;
    std::vector<std::byte> raw_;
};

/// A checkpoint: tensors keyed by name (ordered), plus optional string metadata.
class TensorMap {
public:
    /// Throws std::invalid_argument on an empty or duplicate name.
    void insert(std::string name, TensorEntry entry);
    void insert_or_assign(std::string name, TensorEntry entry);

    bool contains(const std::string& name) const { return entries_.count(name) != 0; }
    const TensorEntry& at(const std::string& name) const;
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }
    std::vector<std::string> names() const;

    auto begin() const noexcept { return entries_.begin(); }
    auto end() const noexcept { return entries_.end(); }

    std::map<std::string, std::string>& metadata() noexcept { return metadata_; }
    const std::map<std::string, std::string>& metadata() const noexcept { return metadata_; }

private:
    std::map<std::string, TensorEntry> entries_;
    std::map<std::string, std::string> metadata_;
};

}  // namespace scf
