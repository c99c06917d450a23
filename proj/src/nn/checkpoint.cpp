#include "daicl/nn/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "daicl/common.hpp"

namespace daicl::nn {

namespace {

constexpr char kMagic[8] = {'D', 'A', 'I', 'C', 'L', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw Error(ErrorCode::CorruptCheckpoint, "truncated checkpoint");
  }
  return v;
}

}  // namespace

void save_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  nlohmann::json arrays = nlohmann::json::array();
  for (const auto& p : ckpt.model.params) {
    arrays.push_back({{"name", p.name},
                      {"rows", p.value.rows()},
                      {"cols", p.value.cols()},
                      {"trainable", p.trainable}});
  }
  nlohmann::json header{{"config", to_json(ckpt.model.config)},
                        {"seed", ckpt.model.seed},
                        {"step", ckpt.step},
                        {"meta", ckpt.meta},
                        {"arrays", arrays}};
  const std::string h = header.dump();
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, h.size());
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto& p : ckpt.model.params) {
    out.write(reinterpret_cast<const char*>(p.value.data()),
              static_cast<std::streamsize>(sizeof(double) * p.value.size()));
  }
  if (!out) throw Error(ErrorCode::Io, "checkpoint write failed");
}

Checkpoint load_checkpoint(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw Error(ErrorCode::CorruptCheckpoint, "bad checkpoint magic");
  }
  if (get<std::uint32_t>(in) != kVersion) {
    throw Error(ErrorCode::CorruptCheckpoint, "unsupported checkpoint version");
  }
  const auto len = get<std::uint64_t>(in);
  if (len > (1ULL << 32)) throw Error(ErrorCode::CorruptCheckpoint, "implausible header length");
  std::string h(len, '\0');
  if (!in.read(h.data(), static_cast<std::streamsize>(len))) {
    throw Error(ErrorCode::CorruptCheckpoint, "truncated header");
  }
  Checkpoint ck;
  try {
    const auto header = nlohmann::json::parse(h);
    ck.model.config = model_config_from_json(header.at("config"));
    ck.model.seed = header.at("seed").get<std::uint64_t>();
    ck.step = header.at("step").get<std::size_t>();
    ck.meta = header.value("meta", nlohmann::json::object());
    for (const auto& a : header.at("arrays")) {
      const auto rows = a.at("rows").get<Eigen::Index>();
      const auto cols = a.at("cols").get<Eigen::Index>();
      if (rows < 0 || cols < 0) throw Error(ErrorCode::CorruptCheckpoint, "negative shape");
      Matrix m(rows, cols);
      if (!in.read(reinterpret_cast<char*>(m.data()),
                   static_cast<std::streamsize>(sizeof(double) * m.size()))) {
        throw Error(ErrorCode::CorruptCheckpoint, "truncated array data");
      }
      ck.model.params.add(a.at("name").get<std::string>(), std::move(m),
                          a.at("trainable").get<bool>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CorruptCheckpoint, std::string("header: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::CorruptCheckpoint) throw;
    throw Error(ErrorCode::CorruptCheckpoint, e.what());
  }
  return ck;
}

void save_checkpoint_file(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path);
  save_checkpoint(out, ckpt);
}

Checkpoint load_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  return load_checkpoint(in);
}

}  // namespace daicl::nn
