#include "alignlab/checkpoint.hpp"

#include <cstdint>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace alignlab {

namespace {

constexpr char kMagic[8] = {'A', 'L', 'B', 'C', 'K', 'P', 'T', '1'};

void write_u32(std::ofstream& out, std::uint32_t value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(value));
}

void write_i64(std::ofstream& out, std::int64_t value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(value));
}

void write_string(std::ofstream& out, const std::string& text) {
    write_u32(out, static_cast<std::uint32_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

std::uint32_t read_u32(std::ifstream& in) {
    std::uint32_t value = 0;
    in.read(reinterpret_cast<char*>(&value), sizeof(value));
    return value;
}

std::int64_t read_i64(std::ifstream& in) {
    std::int64_t value = 0;
    in.read(reinterpret_cast<char*>(&value), sizeof(value));
    return value;
}

std::string read_string(std::ifstream& in) {
    const std::uint32_t size = read_u32(in);
    std::string text(size, '\0');
    in.read(text.data(), size);
    return text;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamMap& params,
                     const std::map<std::string, std::string>& metadata) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
    out.write(kMagic, sizeof(kMagic));
    write_u32(out, static_cast<std::uint32_t>(metadata.size()));
    for (const auto& [key, value] : metadata) {
        write_string(out, key);
        write_string(out, value);
    }
    write_u32(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, tensor] : params) {
        write_string(out, name);
        const auto& shape = tensor.shape();
        write_u32(out, static_cast<std::uint32_t>(shape.size()));
        for (auto dim : shape) write_i64(out, dim);
        const auto data = tensor.data();
        out.write(reinterpret_cast<const char*>(data.data()),
                  static_cast<std::streamsize>(data.size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("checkpoint: short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::string(magic, 8) != std::string(kMagic, 8)) {
        throw std::runtime_error("checkpoint: bad magic in " + path);
    }
    Checkpoint checkpoint;
    const std::uint32_t metadata_count = read_u32(in);
    for (std::uint32_t i = 0; i < metadata_count; ++i) {
        std::string key = read_string(in);
        checkpoint.metadata[key] = read_string(in);
    }
    const std::uint32_t array_count = read_u32(in);
    for (std::uint32_t i = 0; i < array_count; ++i) {
        std::string name = read_string(in);
        const std::uint32_t rank = read_u32(in);
        Shape shape(rank);
        for (auto& dim : shape) dim = read_i64(in);
        std::vector<double> data(static_cast<std::size_t>(shape_numel(shape)));
        in.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(data.size() * sizeof(double)));
        if (!in) throw std::runtime_error("checkpoint: truncated array " + name);
        checkpoint.params[name] = Tensor::from_data(std::move(shape), std::move(data), true);
    }
    return checkpoint;
}

void write_embedding_dump(const std::string& path, const std::vector<EmbeddingRecord>& records) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("embedding dump: cannot write " + path);
    for (const auto& record : records) {
        nlohmann::json line;
        line["id"] = record.id;
        line["role"] = record.role;
        line["shape"] = record.shape;
        line["values"] = record.values;
        out << line.dump() << "\n";
    }
}

std::vector<EmbeddingRecord> read_embedding_dump(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("embedding dump: cannot open " + path);
    std::vector<EmbeddingRecord> records;
    std::string line;
    std::int64_t line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.empty()) continue;
        nlohmann::json parsed;
        try {
            parsed = nlohmann::json::parse(line);
        } catch (const std::exception& e) {
            throw std::runtime_error("embedding dump: bad JSON on line " +
                                     std::to_string(line_number) + ": " + e.what());
        }
        EmbeddingRecord record;
        record.id = parsed.at("id").get<std::string>();
        record.role = parsed.at("role").get<std::string>();
        record.shape = parsed.at("shape").get<std::vector<std::int64_t>>();
        record.values = parsed.at("values").get<std::vector<double>>();
        std::int64_t expected = 1;
        for (auto dim : record.shape) expected *= dim;
        if (expected != static_cast<std::int64_t>(record.values.size())) {
            throw std::runtime_error("embedding dump: shape/value mismatch on line " +
                                     std::to_string(line_number));
        }
        if (record.role != "image" && record.role != "text" && record.role != "patch_grid") {
            throw std::runtime_error("embedding dump: unknown role " + record.role);
        }
        records.push_back(std::move(record));
    }
    return records;
}

}  // namespace alignlab
