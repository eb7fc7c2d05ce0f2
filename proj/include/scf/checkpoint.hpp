#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "scf/tensor.hpp"

namespace scf {

// Container layout (safetensors-compatible):
//   [u64 LE header length N][N bytes UTF-8 JSON header][payload]
// The header maps each tensor name to {"dtype", "shape", "data_offsets"} with
// offsets relative to the start of the payload, plus an optional
// "__metadata__" string map. Keys are written in lexicographic order.

class CheckpointError : public std::runtime_error {
public:
    enum class Kind { Io, MalformedHeader, TruncatedPayload, UnknownDtype, DuplicateName, InvalidTensor };

    CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

std::string_view kind_name(CheckpointError::Kind kind) noexcept;

struct TensorInfo {
    std::string name;
    DType dtype = DType::F32;
    Shape shape;
    std::uint64_t begin = 0;  // payload-relative byte offsets
    std::uint64_t end = 0;

    std::size_t byte_size() const noexcept { return static_cast<std::size_t>(end - begin); }
};

/// Parses the header eagerly and reads tensor payloads on demand, so a merge
/// only holds the tensors it is currently working on.
class CheckpointReader {
public:
    explicit CheckpointReader(const std::filesystem::path& path);

    const std::filesystem::path& path() const noexcept { return path_; }
    /// Sorted by name.
    const std::vector<TensorInfo>& tensors() const noexcept { return tensors_; }
    const std::map<std::string, std::string>& metadata() const noexcept { return metadata_; }

    bool contains(const std::string& name) const;
    const TensorInfo& info(const std::string& name) const;
    TensorEntry read(const std::string& name);

private:
    std::filesystem::path path_;
    std::ifstream file_;
    std::uint64_t payload_start_ = 0;
    std::vector<TensorInfo> tensors_;
    std::map<std::string, std::size_t> index_;
    std::map<std::string, std::string> metadata_;
};

struct TensorSpec {
    std::string name;
    DType dtype = DType::F32;
    Shape shape;
};

/// Writes the header up front from the declared layout, then accepts payloads
/// in name order. Output goes to a temporary sibling that is renamed onto the
/// target in commit(); an uncommitted writer removes its temporary on
/// destruction.
class CheckpointWriter {
public:
    CheckpointWriter(std::filesystem::path path, std::vector<TensorSpec> layout,
                     const std::map<std::string, std::string>& metadata = {});
    ~CheckpointWriter();

    CheckpointWriter(const CheckpointWriter&) = delete;
    CheckpointWriter& operator=(const CheckpointWriter&) = delete;

    /// Name of the next tensor expected, or empty when all have been written.
    const std::string& next_name() const;
    void write(const std::string& name, const TensorEntry& entry);
    void commit();

private:
    std::filesystem::path path_;
    std::filesystem::path temp_path_;
    std::ofstream file_;
    std::vector<TensorSpec> layout_;
    std::size_t next_ = 0;
    bool committed_ = false;
};

/// Serializes the JSON header (sorted keys, space padded to 8 bytes).
std::string encode_header(const std::vector<TensorSpec>& layout,
                          const std::map<std::string, std::string>& metadata);

TensorMap load_checkpoint(const std::filesystem::path& path);
void save_checkpoint(const TensorMap& map, const std::filesystem::path& path);

struct ShapeMismatch {
    std::string name;
    Shape base_shape;
    Shape secondary_shape;
};

struct AlignmentReport {
    std::vector<std::string> matched;  // same shape; dtype may differ
    std::vector<std::string> base_only;
    std::vector<std::string> secondary_only;
    std::vector<ShapeMismatch> shape_mismatch;
};

AlignmentReport align(const TensorMap& base, const TensorMap& secondary);
AlignmentReport align(const std::vector<TensorInfo>& base, const std::vector<TensorInfo>& secondary);

}  // namespace scf
