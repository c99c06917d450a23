#pragma once

#include <iosfwd>
#include <string>

#include <json.hpp>

#include "daicl/nn/model.hpp"

namespace daicl::nn {

struct Checkpoint {
  Model model;
  std::size_t step = 0;
  nlohmann::json meta = nlohmann::json::object();
};

// Magic, version, JSON header {config, seed, step, meta, arrays}, then raw doubles.
void save_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint load_checkpoint(std::istream& in);
void save_checkpoint_file(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint_file(const std::string& path);

}  // namespace daicl::nn
