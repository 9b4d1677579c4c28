#include "carl/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace carl {

namespace {

constexpr char kMagic[8] = {'C', 'A', 'R', 'L', 'C', 'K', 'P', 'T'};

void write_u32(std::ostream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint32_t read_u32(std::istream& in, const std::string& what) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw PipelineError("checkpoint truncated while reading " + what);
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& header,
                     const std::map<std::string, Mat>& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PipelineError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof(kMagic));
  write_u32(out, kCheckpointVersion);
  const std::string header_str = header.dump();
  write_u32(out, static_cast<uint32_t>(header_str.size()));
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  write_u32(out, static_cast<uint32_t>(tensors.size()));
  for (const auto& [name, tensor] : tensors) {
    write_u32(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(out, static_cast<uint32_t>(tensor.rows()));
    write_u32(out, static_cast<uint32_t>(tensor.cols()));
    out.write(reinterpret_cast<const char*>(tensor.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(tensor.size())));
  }
  if (!out) throw PipelineError("short write to checkpoint " + path.string());
}

CheckpointData load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PipelineError("cannot read checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw PipelineError(path.string() + " is not a checkpoint file");
  }
  const uint32_t version = read_u32(in, "version");
  if (version != kCheckpointVersion) {
    throw PipelineError("checkpoint " + path.string() + " has unsupported version " +
                        std::to_string(version));
  }
  const uint32_t header_len = read_u32(in, "header length");
  std::string header_str(header_len, '\0');
  in.read(header_str.data(), header_len);
  if (!in) throw PipelineError("checkpoint truncated while reading header");

  CheckpointData data;
  try {
    data.header = nlohmann::json::parse(header_str);
  } catch (const nlohmann::json::parse_error& e) {
    throw PipelineError("checkpoint header is not valid JSON: " + std::string(e.what()));
  }

  const uint32_t n_tensors = read_u32(in, "tensor count");
  for (uint32_t i = 0; i < n_tensors; ++i) {
    const uint32_t name_len = read_u32(in, "tensor name length");
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const uint32_t rows = read_u32(in, "tensor rows");
    const uint32_t cols = read_u32(in, "tensor cols");
    Mat tensor(rows, cols);
    in.read(reinterpret_cast<char*>(tensor.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(tensor.size())));
    if (!in) throw PipelineError("checkpoint truncated in tensor '" + name + "'");
    data.tensors.emplace(std::move(name), std::move(tensor));
  }
  return data;
}

}  // namespace carl
