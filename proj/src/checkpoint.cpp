#include "scf/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <set>
#include <system_error>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace scf {

namespace fs = std::filesystem;
using json = nlohmann::json;
using Kind = CheckpointError::Kind;

namespace {

constexpr std::uint64_t kMaxHeaderBytes = 100ull << 20;
constexpr const char* kMetadataKey = "__metadata__";

[[noreturn]] void fail(Kind kind, const std::string& message) { throw CheckpointError(kind, message); }

TensorInfo parse_tensor_info(const std::string& name, const json& desc) {
    if (!desc.is_object()) fail(Kind::MalformedHeader, fmt::format("entry '{}' is not an object", name));
    const auto dtype_it = desc.find("dtype");
    const auto shape_it = desc.find("shape");
    const auto offsets_it = desc.find("data_offsets");
    if (dtype_it == desc.end() || shape_it == desc.end() || offsets_it == desc.end()) {
        fail(Kind::MalformedHeader, fmt::format("entry '{}' lacks dtype/shape/data_offsets", name));
    }
    if (!dtype_it->is_string()) fail(Kind::MalformedHeader, fmt::format("entry '{}' has a non-string dtype", name));

    TensorInfo info;
    info.name = name;
    const auto dtype = parse_dtype(dtype_it->get<std::string>());
    if (!dtype) {
        fail(Kind::UnknownDtype, fmt::format("entry '{}' has unsupported dtype '{}'", name, dtype_it->get<std::string>()));
    }
    info.dtype = *dtype;

    if (!shape_it->is_array()) fail(Kind::MalformedHeader, fmt::format("entry '{}' shape is not an array", name));
    for (const auto& d : *shape_it) {
        if (!d.is_number_integer()) fail(Kind::MalformedHeader, fmt::format("entry '{}' shape has a non-integer dim", name));
        info.shape.push_back(d.get<std::int64_t>());
    }
    try {
        validate_shape(info.shape);
    } catch (const std::invalid_argument& e) {
        fail(Kind::InvalidTensor, fmt::format("entry '{}': {}", name, e.what()));
    }

    if (!offsets_it->is_array() || offsets_it->size() != 2 || !(*offsets_it)[0].is_number_unsigned() ||
        !(*offsets_it)[1].is_number_unsigned()) {
        fail(Kind::MalformedHeader, fmt::format("entry '{}' data_offsets must be two unsigned integers", name));
    }
    info.begin = (*offsets_it)[0].get<std::uint64_t>();
    info.end = (*offsets_it)[1].get<std::uint64_t>();
    if (info.end < info.begin || info.end - info.begin != element_count(info.shape) * byte_width(info.dtype)) {
        fail(Kind::InvalidTensor, fmt::format("entry '{}' offsets [{},{}] disagree with {} {}", name, info.begin,
                                              info.end, dtype_name(info.dtype), shape_string(info.shape)));
    }
    return info;
}

}  // namespace

std::string_view kind_name(CheckpointError::Kind kind) noexcept {
    switch (kind) {
        case Kind::Io: return "io";
        case Kind::MalformedHeader: return "malformed-header";
        case Kind::TruncatedPayload: return "truncated-payload";
        case Kind::UnknownDtype: return "unknown-dtype";
        case Kind::DuplicateName: return "duplicate-name";
        case Kind::InvalidTensor: return "invalid-tensor";
    }
    return "unknown";
}

CheckpointReader::CheckpointReader(const fs::path& path) : path_(path) {
    std::error_code ec;
    const auto file_size = fs::file_size(path, ec);
    if (ec) fail(Kind::Io, fmt::format("cannot stat '{}': {}", path.string(), ec.message()));
    file_.open(path, std::ios::binary);
    if (!file_) fail(Kind::Io, fmt::format("cannot open '{}'", path.string()));

    if (file_size < 8) fail(Kind::MalformedHeader, fmt::format("'{}' is too short for a header", path.string()));
    std::uint64_t header_len = 0;
    file_.read(reinterpret_cast<char*>(&header_len), sizeof header_len);
    if (header_len == 0 || header_len > kMaxHeaderBytes || header_len > file_size - 8) {
        fail(Kind::MalformedHeader, fmt::format("'{}' declares a header of {} bytes", path.string(), header_len));
    }
    std::string header(header_len, '\0');
    file_.read(header.data(), static_cast<std::streamsize>(header_len));
    if (!file_) fail(Kind::Io, fmt::format("short read on header of '{}'", path.string()));
    payload_start_ = 8 + header_len;
    const std::uint64_t payload_size = file_size - payload_start_;

    std::set<std::string> seen;
    json root;
    try {
        root = json::parse(header, [&](int depth, json::parse_event_t event, json& parsed) {
            if (event == json::parse_event_t::key && depth == 1) {
                auto key = parsed.get<std::string>();
                if (!seen.insert(key).second) fail(Kind::DuplicateName, fmt::format("duplicate tensor name '{}'", key));
            }
            return true;
        });
    } catch (const json::exception& e) {
        fail(Kind::MalformedHeader, fmt::format("header of '{}' is not valid JSON: {}", path.string(), e.what()));
    }
    if (!root.is_object()) fail(Kind::MalformedHeader, "header is not a JSON object");

    for (const auto& [key, value] : root.items()) {
        if (key == kMetadataKey) {
            if (!value.is_object()) fail(Kind::MalformedHeader, "__metadata__ is not an object");
            for (const auto& [mk, mv] : value.items()) {
                if (!mv.is_string()) fail(Kind::MalformedHeader, fmt::format("metadata '{}' is not a string", mk));
                metadata_[mk] = mv.get<std::string>();
            }
            continue;
        }
        if (key.empty()) fail(Kind::MalformedHeader, "empty tensor name");
        tensors_.push_back(parse_tensor_info(key, value));
    }

    std::vector<const TensorInfo*> by_offset;
    for (const auto& t : tensors_) by_offset.push_back(&t);
    std::ranges::sort(by_offset, {}, [](const TensorInfo* t) { return t->begin; });
    std::uint64_t cursor = 0;
    for (const auto* t : by_offset) {
        if (t->begin < cursor) fail(Kind::InvalidTensor, fmt::format("tensor '{}' overlaps its predecessor", t->name));
        if (t->end > payload_size) {
            fail(Kind::TruncatedPayload, fmt::format("tensor '{}' ends at {} but payload holds {} bytes", t->name,
                                                     t->end, payload_size));
        }
        cursor = t->end;
    }

    std::ranges::sort(tensors_, {}, &TensorInfo::name);
    for (std::size_t i = 0; i < tensors_.size(); ++i) index_[tensors_[i].name] = i;
}

bool CheckpointReader::contains(const std::string& name) const { return index_.count(name) != 0; }

const TensorInfo& CheckpointReader::info(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range(fmt::format("'{}' has no tensor '{}'", path_.string(), name));
    return tensors_[it->second];
}

TensorEntry CheckpointReader::read(const std::string& name) {
    const TensorInfo& t = info(name);
    std::vector<std::byte> raw(t.byte_size());
    file_.clear();
    file_.seekg(static_cast<std::streamoff>(payload_start_ + t.begin));
    file_.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(file_.gcount()) != raw.size()) {
        fail(Kind::TruncatedPayload, fmt::format("short read of tensor '{}' in '{}'", name, path_.string()));
    }
    return TensorEntry(t.shape, t.dtype, std::move(raw));
}

std::string encode_header(const std::vector<TensorSpec>& layout, const std::map<std::string, std::string>& metadata) {
    json root = json::object();
    std::uint64_t offset = 0;
    for (const auto& spec : layout) {
        const std::uint64_t bytes = element_count(spec.shape) * byte_width(spec.dtype);
        root[spec.name] = {{"dtype", std::string(dtype_name(spec.dtype))},
                           {"shape", spec.shape},
                           {"data_offsets", {offset, offset + bytes}}};
        offset += bytes;
    }
    if (!metadata.empty()) root[kMetadataKey] = metadata;
    std::string text;
    try {
        text = root.dump();
    } catch (const json::exception& e) {
        fail(Kind::MalformedHeader, fmt::format("metadata cannot be serialized: {}", e.what()));
    }
    text.append((8 - text.size() % 8) % 8, ' ');
    return text;
}

CheckpointWriter::CheckpointWriter(fs::path path, std::vector<TensorSpec> layout,
                                   const std::map<std::string, std::string>& metadata)
    : path_(std::move(path)), layout_(std::move(layout)) {
    std::ranges::sort(layout_, {}, &TensorSpec::name);
    for (std::size_t i = 0; i < layout_.size(); ++i) {
        if (layout_[i].name.empty() || layout_[i].name == kMetadataKey) {
            throw std::invalid_argument(fmt::format("invalid tensor name '{}'", layout_[i].name));
        }
        if (i > 0 && layout_[i].name == layout_[i - 1].name) {
            throw std::invalid_argument(fmt::format("duplicate tensor name '{}'", layout_[i].name));
        }
        validate_shape(layout_[i].shape);
    }
    const std::string header = encode_header(layout_, metadata);

    temp_path_ = path_;
    temp_path_ += ".partial";
    file_.open(temp_path_, std::ios::binary | std::ios::trunc);
    if (!file_) fail(Kind::Io, fmt::format("cannot create '{}'", temp_path_.string()));
    const std::uint64_t header_len = header.size();
    file_.write(reinterpret_cast<const char*>(&header_len), sizeof header_len);
    file_.write(header.data(), static_cast<std::streamsize>(header.size()));
    if (!file_) fail(Kind::Io, fmt::format("write failed on '{}'", temp_path_.string()));
}

CheckpointWriter::~CheckpointWriter() {
    if (!committed_) {
        file_.close();
        std::error_code ec;
        fs::remove(temp_path_, ec);
    }
}

const std::string& CheckpointWriter::next_name() const {
    static const std::string kDone;
    return next_ < layout_.size() ? layout_[next_].name : kDone;
}

void CheckpointWriter::write(const std::string& name, const TensorEntry& entry) {
    if (next_ >= layout_.size() || layout_[next_].name != name) {
        throw std::logic_error(fmt::format("tensor '{}' written out of order (expected '{}')", name, next_name()));
    }
    const TensorSpec& spec = layout_[next_];
    if (spec.dtype != entry.dtype() || spec.shape != entry.shape()) {
        throw std::logic_error(fmt::format("tensor '{}' does not match its declared layout", name));
    }
    const auto raw = entry.raw();
    file_.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!file_) fail(Kind::Io, fmt::format("write failed on '{}'", temp_path_.string()));
    ++next_;
}

void CheckpointWriter::commit() {
    if (next_ != layout_.size()) {
        throw std::logic_error(fmt::format("commit with {} of {} tensors written", next_, layout_.size()));
    }
    file_.flush();
    file_.close();
    if (!file_) fail(Kind::Io, fmt::format("flush failed on '{}'", temp_path_.string()));
    std::error_code ec;
    fs::rename(temp_path_, path_, ec);
    if (ec) fail(Kind::Io, fmt::format("cannot rename onto '{}': {}", path_.string(), ec.message()));
    committed_ = true;
}

TensorMap load_checkpoint(const fs::path& path) {
    CheckpointReader reader(path);
    TensorMap map;
    for (const auto& t : reader.tensors()) map.insert(t.name, reader.read(t.name));
    map.metadata() = reader.metadata();
    return map;
}

void save_checkpoint(const TensorMap& map, const fs::path& path) {
    std::vector<TensorSpec> layout;
    for (const auto& [name, entry] : map) layout.push_back({name, entry.dtype(), entry.shape()});
    CheckpointWriter writer(path, std::move(layout), map.metadata());
    for (const auto& [name, entry] : map) writer.write(name, entry);
    writer.commit();
}

namespace {

struct Layout {
    std::string name;
    const Shape* shape;
};

AlignmentReport align_layouts(const std::vector<Layout>& base, const std::vector<Layout>& secondary) {
    std::map<std::string, const Shape*> sec;
    for (const auto& l : secondary) sec[l.name] = l.shape;
    AlignmentReport report;
    for (const auto& l : base) {
        auto it = sec.find(l.name);
        if (it == sec.end()) {
            report.base_only.push_back(l.name);
        } else if (*it->second == *l.shape) {
            report.matched.push_back(l.name);
        } else {
            report.shape_mismatch.push_back({l.name, *l.shape, *it->second});
        }
    }
    std::set<std::string> base_names;
    for (const auto& l : base) base_names.insert(l.name);
    for (const auto& l : secondary) {
        if (!base_names.count(l.name)) report.secondary_only.push_back(l.name);
    }
    std::ranges::sort(report.matched);
    std::ranges::sort(report.base_only);
    std::ranges::sort(report.secondary_only);
    std::ranges::sort(report.shape_mismatch, {}, &ShapeMismatch::name);
    return report;
}

}  // namespace

AlignmentReport align(const TensorMap& base, const TensorMap& secondary) {
    std::vector<Layout> b, s;
    for (const auto& [name, e] : base) b.push_back({name, &e.shape()});
    for (const auto& [name, e] : secondary) s.push_back({name, &e.shape()});
    return align_layouts(b, s);
}

AlignmentReport align(const std::vector<TensorInfo>& base, const std::vector<TensorInfo>& secondary) {
    std::vector<Layout> b, s;
    for (const auto& t : base) b.push_back({t.name, &t.shape});
    for (const auto& t : secondary) s.push_back({t.name, &t.shape});
    return align_layouts(b, s);
}

}  // namespace scf
