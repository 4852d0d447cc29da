#pragma once

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "deepway/errors.hpp"
#include "deepway/nn/model.hpp"

namespace deepway::nn {

// Weights file layout, all integers little-endian:
//   "DWAY" | u32 version | u32 header length | header JSON (UTF-8)
//   | f32 parameter blocks in header order | u32 CRC-32 of all preceding bytes
inline constexpr char weights_magic[4] = {'D', 'W', 'A', 'Y'};
inline constexpr std::uint32_t weights_version = 1;

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"input_size", c.input_size},     {"n_modules", c.n_modules},
          {"filters", c.filters},           {"first_kernel", c.first_kernel},
          {"inner_kernel", c.inner_kernel}, {"last_kernel", c.last_kernel},
          {"attention_reduction", c.attention_reduction}, {"spatial_kernel", c.spatial_kernel}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.input_size = j.at("input_size").get<int>();
    c.n_modules = j.at("n_modules").get<int>();
    c.filters = j.at("filters").get<int>();
    c.first_kernel = j.at("first_kernel").get<int>();
    c.inner_kernel = j.at("inner_kernel").get<int>();
    c.last_kernel = j.at("last_kernel").get<int>();
    c.attention_reduction = j.value("attention_reduction", c.attention_reduction);
    c.spatial_kernel = j.value("spatial_kernel", c.spatial_kernel);
  } catch (const nlohmann::json::exception& e) {
    throw format_error(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace detail {

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

inline std::uint32_t crc32_of(const unsigned char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace detail

template <typename T>
std::vector<unsigned char> serialize_weights(const Model<T>& model) {
  nlohmann::json header;
  header["config"] = to_json(model.config());
  header["parameters"] = nlohmann::json::array();
  for (std::size_t i = 0; i < model.parameters().size(); ++i)
    header["parameters"].push_back({{"name", model.names()[i]}, {"shape", model.parameters()[i].shape()}});
  const std::string text = header.dump();

  std::vector<unsigned char> out(std::begin(weights_magic), std::end(weights_magic));
  detail::put_u32(out, weights_version);
  detail::put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& p : model.parameters())
    for (T v : p.values()) detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  detail::put_u32(out, detail::crc32_of(out.data(), out.size()));
  return out;
}

template <typename T = float>
Model<T> deserialize_weights(const std::vector<unsigned char>& bytes, std::ostream* warn = &std::cerr) {
  if (bytes.size() < 16) throw format_error("weights file truncated (" + std::to_string(bytes.size()) + " bytes)");
  if (std::memcmp(bytes.data(), weights_magic, 4) != 0) throw format_error("not a weights file (bad magic)");
  const std::uint32_t version = detail::get_u32(bytes.data() + 4);
  if (version != weights_version) throw format_error("unsupported weights version " + std::to_string(version));
  const std::uint32_t header_len = detail::get_u32(bytes.data() + 8);
  if (12 + static_cast<std::size_t>(header_len) + 4 > bytes.size()) throw format_error("weights header truncated");
  const std::size_t body = bytes.size() - 4;
  if (detail::crc32_of(bytes.data(), body) != detail::get_u32(bytes.data() + body))
    throw integrity_error("weights checksum mismatch");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw format_error(std::string("weights header: ") + e.what());
  }
  if (!header.contains("config") || !header.contains("parameters") || !header["parameters"].is_array())
    throw format_error("weights header lacks config or parameters");
  Model<T> model(model_config_from_json(header["config"]), warn);
  const auto& listed = header["parameters"];
  if (listed.size() != model.parameters().size())
    throw format_error("weights file lists " + std::to_string(listed.size()) + " parameters, model has " +
                       std::to_string(model.parameters().size()));

  std::size_t offset = 12 + header_len;
  for (std::size_t i = 0; i < listed.size(); ++i) {
    auto& p = model.parameters()[i];
    try {
      if (listed[i].at("name").get<std::string>() != model.names()[i] ||
          listed[i].at("shape").get<std::vector<std::size_t>>() != p.shape())
        throw format_error("parameter " + std::to_string(i) + " does not match the model layout");
    } catch (const nlohmann::json::exception& e) {
      throw format_error(std::string("weights header: ") + e.what());
    }
    if (offset + 4 * p.size() > body) throw format_error("weights data truncated");
    for (auto& v : p.values()) {
      v = static_cast<T>(std::bit_cast<float>(detail::get_u32(bytes.data() + offset)));
      offset += 4;
    }
  }
  if (offset != body) throw format_error("trailing bytes after parameter data");
  return model;
}

// Writes through a temporary file and renames, so an interrupted write never
// replaces a good file with a partial one.
template <typename T>
void save_weights(const Model<T>& model, const std::filesystem::path& path) {
  const auto bytes = serialize_weights(model);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw storage_error("cannot open for writing: " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw storage_error("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw storage_error("cannot replace " + path.string() + ": " + ec.message());
}

template <typename T = float>
Model<T> load_weights(const std::filesystem::path& path, std::ostream* warn = &std::cerr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw format_error("cannot open weights file: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_weights<T>(bytes, warn);
}

}  // namespace deepway::nn
