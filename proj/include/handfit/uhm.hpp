#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "handfit/hand_model.hpp"

namespace handfit {

// Binary container: "UHM1", u32 LE manifest length, JSON manifest, then
// float32 LE blobs back to back in manifest order. See docs/formats.md.
struct UhmBlob {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<float> data;

  std::int64_t element_count() const;
};

struct UhmFile {
  std::string kind;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<UhmBlob> blobs;

  const UhmBlob& blob(const std::string& name) const;
  bool has_blob(const std::string& name) const;
};

std::uint32_t crc32_of(const void* data, std::size_t size);

std::string encode_uhm(const UhmFile& file);
// source names the input in error messages
UhmFile decode_uhm(std::string_view bytes, const std::string& source = "<memory>");

void write_uhm(const std::string& path, const UhmFile& file);
UhmFile read_uhm(const std::string& path);

// Arrays are stored as float32; a model whose values are float-representable
// survives save -> load bit for bit.
UhmFile model_to_uhm(const HandModel& model);
HandModel model_from_uhm(const UhmFile& file);
void save_model(const HandModel& model, const std::string& path);
HandModel load_model(const std::string& path);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view bytes);

}  // namespace handfit
