#include "scf/tensor.hpp"

#include <algorithm>
#include <stdexcept>

#include <fmt/format.h>
#include <fmt/ranges.h>

namespace scf {

std::size_t element_count(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

std::string shape_string(const Shape& shape) { return fmt::format("[{}]", fmt::join(shape, ",")); }

void validate_shape(const Shape& shape) {
    if (shape.empty()) throw std::invalid_argument("tensor rank must be >= 1");
    for (auto d : shape) {
        if (d <= 0) {
            throw std::invalid_argument(fmt::format("non-positive dimension in shape {}", shape_string(shape)));
        }
    }
}

TensorEntry::TensorEntry(Shape shape, DType dtype, std::vector<std::byte> raw)
    : shape_(std::move(shape)), dtype_(dtype), raw_(std::move(raw)) {
    validate_shape(shape_);
    if (raw_.size() != element_count(shape_) * byte_width(dtype_)) {
        throw std::invalid_argument(fmt::format("payload of {} bytes does not match {} {}", raw_.size(),
                                                dtype_name(dtype_), shape_string(shape_)));
    }
}

TensorEntry TensorEntry::encode(Shape shape, DType dtype, std::span<const double> values) {
    const std::size_t width = byte_width(dtype);
    std::vector<std::byte> raw(values.size() * width);
    for (std::size_t i = 0; i < values.size(); ++i) store_element(dtype, values[i], raw.data() + i * width);
    return TensorEntry(std::move(shape), dtype, std::move(raw));
}

double TensorEntry::value(std::size_t index) const noexcept {
    return load_element(dtype_, raw_.data() + index * byte_width(dtype_));
}

std::vector<double> TensorEntry::values() const {
    std::vector<double> out(size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = value(i);
    return out;
}

Tensor TensorEntry::working() const { return Tensor{shape_, values()}; }

bool TensorEntry::bit_equal(const TensorEntry& other) const noexcept {
    return dtype_ == other.dtype_ && shape_ == other.shape_ && std::ranges::equal(raw_, other.raw_);
}

void TensorMap::insert(std::string name, TensorEntry entry) {
    if (name.empty()) throw std::invalid_argument("tensor name must be non-empty");
    auto [it, inserted] = entries_.try_emplace(std::move(name), std::move(entry));
    if (!inserted) throw std::invalid_argument(fmt::format("duplicate tensor name '{}'", it->first));
}

void TensorMap::insert_or_assign(std::string name, TensorEntry entry) {
    if (name.empty()) throw std::invalid_argument("tensor name must be non-empty");
    entries_.insert_or_assign(std::move(name), std::move(entry));
}

const TensorEntry& TensorMap::at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range(fmt::format("no tensor named '{}'", name));
    return it->second;
}

std::vector<std::string> TensorMap::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [name, _] : entries_) out.push_back(name);
    return out;
}

}  // namespace scf
