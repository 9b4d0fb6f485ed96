#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <map>
#include <string>
#include <vector>

#include "ridgegen/tensor.hpp"

namespace ridgegen {

// Self-describing checkpoint container: magic, little-endian header length,
// JSON header (kind, step, config echo, array directory, extras), then raw
// float32 blobs at the recorded offsets. Everything needed to reload is in
// the header, so files stay inspectable with a hex dump and a JSON parser.

inline constexpr char kCheckpointMagic[8] = {'R', 'G', 'C', 'K', 'P', 'T', '1', '\n'};

class CheckpointWriter {
 public:
  CheckpointWriter(std::string kind, nlohmann::json config, int64_t step) {
    header_["kind"] = std::move(kind);
    header_["config"] = std::move(config);
    header_["step"] = step;
    header_["arrays"] = nlohmann::json::array();
    header_["extra"] = nlohmann::json::object();
  }

  void add(const std::string& name, const Tensor<float>& t) {
    check_usage(t.defined(), "checkpoint: undefined tensor for " + name);
    nlohmann::json rec;
    rec["name"] = name;
    rec["shape"] = t.shape();
    rec["dtype"] = "f32";
    rec["offset"] = static_cast<int64_t>(blob_.size());
    rec["numel"] = t.numel();
    header_["arrays"].push_back(std::move(rec));
    const size_t bytes = static_cast<size_t>(t.numel()) * sizeof(float);
    const size_t at = blob_.size();
    blob_.resize(at + bytes);
    std::memcpy(blob_.data() + at, t.data(), bytes);
  }

  void add_extra(const std::string& key, nlohmann::json value) {
    header_["extra"][key] = std::move(value);
  }

  void write(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    check_usage(static_cast<bool>(out), "checkpoint: cannot open " + path.string());
    const std::string header = header_.dump();
    const uint64_t len = header.size();
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    char lenb[8];
    for (int i = 0; i < 8; ++i) lenb[i] = static_cast<char>((len >> (8 * i)) & 0xff);
    out.write(lenb, 8);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.write(reinterpret_cast<const char*>(blob_.data()),
              static_cast<std::streamsize>(blob_.size()));
    check_integrity(static_cast<bool>(out), "checkpoint: write failed for " + path.string());
  }

 private:
  nlohmann::json header_;
  std::vector<unsigned char> blob_;
};

struct Checkpoint {
  std::string kind;
  int64_t step = 0;
  nlohmann::json config;
  nlohmann::json extra;
  std::map<std::string, Tensor<float>> arrays;

  const Tensor<float>& array(const std::string& name) const {
    auto it = arrays.find(name);
    check_integrity(it != arrays.end(), "checkpoint: missing array " + name);
    return it->second;
  }

  static Checkpoint load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    check_usage(static_cast<bool>(in), "checkpoint: cannot open " + path.string());
    char magic[8];
    in.read(magic, 8);
    check_integrity(in.gcount() == 8 && std::memcmp(magic, kCheckpointMagic, 8) == 0,
                    "checkpoint: bad magic in " + path.string());
    char lenb[8];
    in.read(lenb, 8);
    check_integrity(in.gcount() == 8, "checkpoint: truncated header length");
    uint64_t len = 0;
    for (int i = 0; i < 8; ++i)
      len |= static_cast<uint64_t>(static_cast<unsigned char>(lenb[i])) << (8 * i);
    check_integrity(len > 0 && len < (1ull << 31), "checkpoint: implausible header length");
    std::string header(len, '\0');
    in.read(header.data(), static_cast<std::streamsize>(len));
    check_integrity(in.gcount() == static_cast<std::streamsize>(len),
                    "checkpoint: truncated header");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(header);
    } catch (const nlohmann::json::exception& e) {
      throw integrity_error("checkpoint: header is not valid json: " + std::string(e.what()));
    }
    std::vector<unsigned char> blob(std::istreambuf_iterator<char>(in), {});

    Checkpoint ck;
    ck.kind = j.at("kind").get<std::string>();
    ck.step = j.at("step").get<int64_t>();
    ck.config = j.value("config", nlohmann::json::object());
    ck.extra = j.value("extra", nlohmann::json::object());
    for (const auto& rec : j.at("arrays")) {
      const std::string name = rec.at("name").get<std::string>();
      const Shape shape = rec.at("shape").get<Shape>();
      const int64_t offset = rec.at("offset").get<int64_t>();
      const int64_t numel = rec.at("numel").get<int64_t>();
      check_integrity(rec.at("dtype").get<std::string>() == "f32",
                      "checkpoint: unsupported dtype for " + name);
      check_integrity(numel == shape_numel(shape), "checkpoint: shape/numel mismatch for " + name);
      const int64_t end = offset + numel * static_cast<int64_t>(sizeof(float));
      check_integrity(offset >= 0 && end <= static_cast<int64_t>(blob.size()),
                      "checkpoint: blob range out of bounds for " + name);
      Tensor<float> t(shape);
      std::memcpy(t.data(), blob.data() + offset, static_cast<size_t>(numel) * sizeof(float));
      check_integrity(ck.arrays.emplace(name, std::move(t)).second,
                      "checkpoint: duplicate array " + name);
    }
    return ck;
  }
};

}  // namespace ridgegen
