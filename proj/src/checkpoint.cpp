#include "raven/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace raven {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'D', 'R', 'N', 'C'};

template <typename U>
void put(std::string& out, U v) {
  char b[sizeof(U)];
  std::memcpy(b, &v, sizeof(U));
  out.append(b, sizeof(U));
}

template <typename U>
U take(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(U) > in.size()) throw std::runtime_error("checkpoint: truncated header");
  U v;
  std::memcpy(&v, in.data() + pos, sizeof(U));
  pos += sizeof(U);
  return v;
}

}  // namespace

const NamedTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

std::string serialize_checkpoint(const Checkpoint& c) {
  nlohmann::json index = nlohmann::json::array();
  std::set<std::string> names;
  std::uint64_t offset = 0;
  for (const auto& t : c.tensors) {
    if (!names.insert(t.name).second) throw std::invalid_argument("checkpoint: duplicate tensor '" + t.name + "'");
    index.push_back({{"name", t.name}, {"shape", t.tensor.shape}, {"offset", offset}});
    offset += t.tensor.numel() * sizeof(float);
  }
  const nlohmann::json header{{"config", c.config}, {"step", c.step}, {"meta", c.meta}, {"tensors", index}};
  const std::string h = header.dump();
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, h.size());
  out += h;
  out.reserve(out.size() + offset);
  for (const auto& t : c.tensors)
    out.append(reinterpret_cast<const char*>(t.tensor.data.data()), t.tensor.numel() * sizeof(float));
  return out;
}

Checkpoint parse_checkpoint(const std::string& in) {
  if (in.size() < 4 || std::memcmp(in.data(), kMagic, 4) != 0) throw std::runtime_error("checkpoint: bad magic");
  std::size_t pos = 4;
  const auto version = take<std::uint32_t>(in, pos);
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: format version " + std::to_string(version) + " not supported (expected " +
                             std::to_string(kCheckpointVersion) + ")");
  const auto hlen = take<std::uint64_t>(in, pos);
  if (hlen > in.size() - pos) throw std::runtime_error("checkpoint: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(in.substr(pos, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("checkpoint: malformed header: ") + e.what());
  }
  pos += hlen;
  const std::size_t payload = in.size() - pos;

  Checkpoint c;
  try {
    c.config = header.at("config");
    c.step = header.at("step").get<std::uint64_t>();
    c.meta = header.value("meta", nlohmann::json::object());
    std::uint64_t expected = 0;
    for (const auto& e : header.at("tensors")) {
      NamedTensor t;
      t.name = e.at("name").get<std::string>();
      const auto shape = e.at("shape").get<Shape>();
      const auto offset = e.at("offset").get<std::uint64_t>();
      if (offset != expected)
        throw std::runtime_error("checkpoint: index/payload disagreement at tensor '" + t.name + "' (offset " +
                                 std::to_string(offset) + ", expected " + std::to_string(expected) + ")");
      const std::uint64_t bytes = shape_numel(shape) * sizeof(float);
      if (offset + bytes > payload)
        throw std::runtime_error("checkpoint: truncated payload at tensor '" + t.name + "'");
      t.tensor = Tensor<float>(shape);
      std::memcpy(t.tensor.data.data(), in.data() + pos + offset, bytes);
      expected += bytes;
      c.tensors.push_back(std::move(t));
    }
    if (expected != payload)
      throw std::runtime_error("checkpoint: index/payload disagreement (index covers " + std::to_string(expected) +
                               " bytes, payload has " + std::to_string(payload) + ")");
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("checkpoint: malformed index: ") + e.what());
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  const auto bytes = serialize_checkpoint(c);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

}  // namespace raven
