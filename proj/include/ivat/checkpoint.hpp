#pragma once

// Checkpoint file layout (little-endian throughout):
//
//   bytes 0..3    magic "IVCP"
//   bytes 4..7    format version, u32 (currently 1)
//   bytes 8..15   header length in bytes, u64
//   header        ASCII "key = value" lines: model configuration, parameter
//                 count, then one "vocab.<id> = <token>" line per entry
//   payload       every parameter tensor in model order, each element one
//                 IEEE-754 float32
//   trailer       CRC-32 of the payload, u32
//
// Weights are held in 64-bit floats in memory; only this serialization is
// 32-bit. save(load(file)) reproduces the file byte for byte.

#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "ivat/data.hpp"
#include "ivat/error.hpp"
#include "ivat/model.hpp"

namespace ivat {

namespace detail {

inline constexpr char kCheckpointMagic[4] = {'I', 'V', 'C', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::uint32_t crc32_update(std::uint32_t crc, const unsigned char* data, std::size_t len) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  crc ^= 0xFFFFFFFFu;
  for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out += static_cast<char>((v >> (8 * i)) & 0xFF);
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out += static_cast<char>((v >> (8 * i)) & 0xFF);
}

inline std::uint32_t get_u32(const std::string& s, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[off + i])) << (8 * i);
  return v;
}

inline std::uint64_t get_u64(const std::string& s, std::size_t off) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[off + i])) << (8 * i);
  return v;
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline void save_checkpoint(const EncoderModel& model, const Vocab& vocab, const std::string& path) {
  const ModelConfig& c = model.config;
  if (c.vocab_size != vocab.size())
    raise(ErrorKind::contract, "save_checkpoint: model vocab_size does not match vocabulary");
  std::string header;
  header += "vocab_size = " + std::to_string(c.vocab_size) + "\n";
  header += "d_model = " + std::to_string(c.d_model) + "\n";
  header += "n_layers = " + std::to_string(c.n_layers) + "\n";
  header += "n_heads = " + std::to_string(c.n_heads) + "\n";
  header += "d_ff = " + std::to_string(c.d_ff) + "\n";
  header += "max_len = " + std::to_string(c.max_len) + "\n";
  header += "n_classes = " + std::to_string(c.n_classes) + "\n";
  header += "dropout_rate = " + detail::format_double(c.dropout_rate) + "\n";
  header += "init_std = " + detail::format_double(c.init_std) + "\n";
  header += "init_seed = " + std::to_string(c.init_seed) + "\n";
  header += "param_count = " + std::to_string(param_count(c)) + "\n";
  for (std::size_t i = 0; i < vocab.size(); ++i)
    header += "vocab." + std::to_string(i) + " = " + vocab.id_to_token[i] + "\n";

  std::string payload;
  for (const auto& p : model.parameters())
    for (double v : p.value())
      detail::put_u32(payload, std::bit_cast<std::uint32_t>(static_cast<float>(v)));

  std::string out;
  out.append(detail::kCheckpointMagic, 4);
  detail::put_u32(out, detail::kCheckpointVersion);
  detail::put_u64(out, header.size());
  out += header;
  out += payload;
  detail::put_u32(out, detail::crc32_update(0, reinterpret_cast<const unsigned char*>(payload.data()),
                                            payload.size()));
  std::ofstream f(path, std::ios::binary);
  if (!f) raise(ErrorKind::io, "cannot write " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) raise(ErrorKind::io, "write failed for " + path);
}

struct LoadedCheckpoint {
  EncoderModel model;
  Vocab vocab;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) raise(ErrorKind::io, "cannot open " + path);
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (data.size() < 16 || data.compare(0, 4, detail::kCheckpointMagic, 4) != 0)
    raise(ErrorKind::checkpoint, path + ": not a checkpoint file");
  std::uint32_t version = detail::get_u32(data, 4);
  if (version != detail::kCheckpointVersion)
    raise(ErrorKind::checkpoint, path + ": unsupported checkpoint version " + std::to_string(version));
  std::uint64_t header_len = detail::get_u64(data, 8);
  if (16 + header_len > data.size()) raise(ErrorKind::checkpoint, path + ": truncated header");
  std::string header = data.substr(16, header_len);

  std::map<std::string, std::string> kv;
  std::size_t pos = 0;
  while (pos < header.size()) {
    std::size_t eol = header.find('\n', pos);
    if (eol == std::string::npos) eol = header.size();
    std::string line = header.substr(pos, eol - pos);
    pos = eol + 1;
    if (line.empty()) continue;
    std::size_t sep = line.find(" = ");
    if (sep == std::string::npos) raise(ErrorKind::checkpoint, path + ": malformed header line '" + line + "'");
    kv[line.substr(0, sep)] = line.substr(sep + 3);
  }
  auto need = [&](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) raise(ErrorKind::checkpoint, path + ": header missing '" + key + "'");
    return it->second;
  };

  ModelConfig c;
  try {
    c.vocab_size = std::stoull(need("vocab_size"));
    c.d_model = std::stoull(need("d_model"));
    c.n_layers = std::stoull(need("n_layers"));
    c.n_heads = std::stoull(need("n_heads"));
    c.d_ff = std::stoull(need("d_ff"));
    c.max_len = std::stoull(need("max_len"));
    c.n_classes = std::stoull(need("n_classes"));
    c.dropout_rate = std::stod(need("dropout_rate"));
    c.init_std = std::stod(need("init_std"));
    c.init_seed = std::stoull(need("init_seed"));
  } catch (const std::exception&) {
    raise(ErrorKind::checkpoint, path + ": malformed numeric header field");
  }
  try {
    c.validate();
  } catch (const Error& e) {
    raise(ErrorKind::checkpoint, path + ": invalid configuration: " + e.what());
  }
  std::size_t n_params = param_count(c);
  if (std::stoull(need("param_count")) != n_params)
    raise(ErrorKind::checkpoint, path + ": parameter count mismatch");

  Vocab vocab;
  for (std::size_t i = 4; i < c.vocab_size; ++i) vocab.add(need("vocab." + std::to_string(i)));
  for (int i = 0; i < 4; ++i)
    if (need("vocab." + std::to_string(i)) != vocab.id_to_token[static_cast<std::size_t>(i)])
      raise(ErrorKind::checkpoint, path + ": reserved vocabulary entries corrupted");
  if (vocab.size() != c.vocab_size) raise(ErrorKind::checkpoint, path + ": vocabulary size mismatch");

  std::size_t payload_off = 16 + header_len;
  std::size_t payload_len = n_params * 4;
  if (payload_off + payload_len + 4 != data.size())
    raise(ErrorKind::checkpoint, path + ": truncated or oversized payload");
  std::uint32_t crc = detail::crc32_update(
      0, reinterpret_cast<const unsigned char*>(data.data()) + payload_off, payload_len);
  if (crc != detail::get_u32(data, payload_off + payload_len))
    raise(ErrorKind::checkpoint, path + ": payload checksum mismatch");

  LoadedCheckpoint out;
  out.vocab = std::move(vocab);
  out.model = init_model(c);
  std::size_t cursor = payload_off;
  auto params = out.model.parameters();
  for (auto& p : params) {
    auto& value = p.value();
    for (double& v : value) {
      v = static_cast<double>(std::bit_cast<float>(detail::get_u32(data, cursor)));
      cursor += 4;
    }
  }
  return out;
}

}  // namespace ivat
