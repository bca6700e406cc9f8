#include "crowdcount/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "crowdcount/config.hpp"
#include "crowdcount/error.hpp"
#include "crowdcount/network.hpp"

namespace crowdcount {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

namespace {

constexpr char kMagic[8] = {'C', 'C', 'N', 'T', 'C', 'K', 'P', 'T'};

const char* kind_name(ParamKind k) {
  switch (k) {
    case ParamKind::ConvWeight: return "conv_weight";
    case ParamKind::LinearWeight: return "linear_weight";
    case ParamKind::LinearBias: return "linear_bias";
    case ParamKind::BnScale: return "bn_scale";
    case ParamKind::BnShift: return "bn_shift";
  }
  return "?";
}

ParamKind kind_from_name(const std::string& s) {
  for (auto k : {ParamKind::ConvWeight, ParamKind::LinearWeight, ParamKind::LinearBias,
                 ParamKind::BnScale, ParamKind::BnShift})
    if (s == kind_name(k)) return k;
  fail(ErrorCode::Load, "unknown parameter kind '" + s + "'");
}

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, size_t& pos, const std::string& origin) {
  require(pos + sizeof(T) <= in.size(), ErrorCode::Load, "checkpoint '" + origin + "' is truncated");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

std::string serialize_checkpoint(const ModelState& state) {
  json tensors = json::array();
  std::string data;
  auto emit = [&](const char* group, const std::string& name, const Tensor& t) {
    json entry = {{"group", group}, {"name", name}, {"shape", t.shape}};
    if (std::string(group) == "param") entry["kind"] = kind_name(state.kinds.at(name));
    tensors.push_back(entry);
    for (double v : t.data) put(data, static_cast<float>(v));
  };
  for (const auto& [n, t] : state.params) emit("param", n, t);
  for (const auto& [n, t] : state.buffers) emit("buffer", n, t);
  for (const auto& [n, t] : state.momentum) emit("momentum", n, t);

  json header = {{"arch", arch_to_json(state.arch)},
                 {"cc_max", state.stats.cc_max},
                 {"norm", {{"mean", state.norm.mean}, {"stddev", state.norm.stddev}}},
                 {"meta",
                  {{"epochs_completed", state.meta.epochs_completed},
                   {"steps", state.meta.steps},
                   {"seed", state.meta.seed}}},
                 {"tensors", tensors}};
  const std::string h = header.dump();

  std::string out(kMagic, sizeof(kMagic));
  put(out, kCheckpointVersion);
  put(out, static_cast<uint64_t>(h.size()));
  out += h;
  out += data;
  return out;
}

ModelState deserialize_checkpoint(const std::string& bytes, const std::string& origin) {
  require(bytes.size() >= sizeof(kMagic) && std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) == 0,
          ErrorCode::Load, "'" + origin + "' is not a checkpoint");
  size_t pos = sizeof(kMagic);
  const auto version = take<uint32_t>(bytes, pos, origin);
  require(version == kCheckpointVersion, ErrorCode::Load,
          "checkpoint '" + origin + "' has format version " + std::to_string(version) +
              ", expected " + std::to_string(kCheckpointVersion));
  const auto hlen = take<uint64_t>(bytes, pos, origin);
  require(pos + hlen <= bytes.size(), ErrorCode::Load, "checkpoint '" + origin + "' is truncated");

  ModelState state;
  try {
    const json header = json::parse(bytes.substr(pos, hlen));
    pos += hlen;
    state.arch = arch_from_json(header.at("arch"));
    state.stats.cc_max = header.at("cc_max").get<int64_t>();
    state.norm.mean = header.at("norm").at("mean").get<std::array<double, 3>>();
    state.norm.stddev = header.at("norm").at("stddev").get<std::array<double, 3>>();
    const auto& meta = header.at("meta");
    state.meta.epochs_completed = meta.at("epochs_completed").get<int64_t>();
    state.meta.steps = meta.at("steps").get<int64_t>();
    state.meta.seed = meta.at("seed").get<uint64_t>();
    for (const auto& e : header.at("tensors")) {
      Tensor t(e.at("shape").get<Shape>());
      for (auto& v : t.data) v = static_cast<double>(take<float>(bytes, pos, origin));
      const auto group = e.at("group").get<std::string>();
      const auto name = e.at("name").get<std::string>();
      if (group == "param") {
        state.kinds[name] = kind_from_name(e.at("kind").get<std::string>());
        state.params[name] = std::move(t);
      } else if (group == "buffer") {
        state.buffers[name] = std::move(t);
      } else if (group == "momentum") {
        state.momentum[name] = std::move(t);
      } else {
        fail(ErrorCode::Load, "unknown tensor group '" + group + "'");
      }
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::Load, "checkpoint '" + origin + "' has a malformed header: " + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Load) throw;
    fail(ErrorCode::Load, "checkpoint '" + origin + "': " + e.what());
  }
  require(pos == bytes.size(), ErrorCode::Load, "checkpoint '" + origin + "' has trailing data");
  require(state.stats.cc_max >= 1, ErrorCode::Load, "checkpoint '" + origin + "' has cc_max < 1");

  try {
    check_state_matches(state, Network(state.arch));
  } catch (const Error& e) {
    fail(ErrorCode::Load, "checkpoint '" + origin + "': " + e.what());
  }
  return state;
}

void save_checkpoint(const ModelState& state, const fs::path& path) {
  const std::string bytes = serialize_checkpoint(state);
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::Io, "cannot write checkpoint '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorCode::Io, "cannot write checkpoint '" + path.string() + "'");
}

ModelState load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::Io, "cannot open checkpoint '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str(), path.string());
}

}  // namespace crowdcount
