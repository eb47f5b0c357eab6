#pragma once

#include <cstring>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "das/core/io.hpp"

namespace das {

// "DASC", u32 manifest length, JSON manifest {format, meta, tensors:[{name, shape}]}, then one
// tensor dump per manifest entry in order. Payloads are f32.
template <typename T>
struct Checkpoint {
  std::vector<std::pair<std::string, Tensor<T>>> tensors;
  nlohmann::json meta = nlohmann::json::object();

  const Tensor<T>& at(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return t;
    throw FormatError("checkpoint has no tensor '" + name + "'");
  }
};

template <typename T>
void save_checkpoint(const std::filesystem::path& p, const Checkpoint<T>& ck) {
  nlohmann::ordered_json m;
  m["format"] = "das-checkpoint-1";
  m["meta"] = ck.meta;
  m["tensors"] = nlohmann::ordered_json::array();
  for (const auto& [n, t] : ck.tensors) m["tensors"].push_back({{"name", n}, {"shape", t.shape()}});
  const std::string text = m.dump();
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  auto os = io::detail::open_out(p);
  os.write("DASC", 4);
  io::detail::put_u32(os, static_cast<std::uint32_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [n, t] : ck.tensors) io::write_tensor(os, t);
  DAS_CHECK(os.good(), Error, "failed writing checkpoint " + p.string());
}

template <typename T = float>
Checkpoint<T> load_checkpoint(const std::filesystem::path& p) {
  auto is = io::detail::open_in(p);
  char magic[4];
  is.read(magic, 4);
  DAS_CHECK(is.gcount() == 4 && std::memcmp(magic, "DASC", 4) == 0, FormatError, p.string() + " is not a checkpoint");
  const std::uint32_t len = io::detail::get_u32(is);
  std::string text(len, '\0');
  is.read(text.data(), len);
  DAS_CHECK(static_cast<std::uint32_t>(is.gcount()) == len, FormatError, "truncated checkpoint manifest");
  Checkpoint<T> ck;
  try {
    const auto m = nlohmann::json::parse(text);
    ck.meta = m.at("meta");
    for (const auto& e : m.at("tensors")) {
      auto t = io::read_tensor<T>(is);
      DAS_CHECK(t.shape() == e.at("shape").get<Shape>(), FormatError, "checkpoint tensor shape disagrees with manifest");
      ck.tensors.emplace_back(e.at("name").get<std::string>(), std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad checkpoint manifest: ") + e.what());
  }
  return ck;
}

}  // namespace das
