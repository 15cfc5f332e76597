#include "sunet/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "json.hpp"
#include "sunet/errors.hpp"

namespace sunet {

namespace {

using json = nlohmann::json;

constexpr char kMagic[4] = {'S', 'U', 'N', 'W'};

[[noreturn]] void bad_file(const std::string& path, const std::string& what) {
  throw DataFormatError(path + ": " + what);
}

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) bad_file(path, "truncated");
  return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}

void put_f32(std::ostream& os, const float* v, size_t n) {
  static_assert(sizeof(float) == 4);
  for (size_t i = 0; i < n; ++i) {
    uint32_t bits;
    std::memcpy(&bits, v + i, 4);
    put_u32(os, bits);
  }
}

void get_f32(std::istream& is, float* v, size_t n, const std::string& path) {
  for (size_t i = 0; i < n; ++i) {
    const uint32_t bits = get_u32(is, path);
    std::memcpy(v + i, &bits, 4);
  }
}

json spec_to_json(const ModelSpec& s) {
  json j;
  j["variant"] = variant_name(s.variant);
  j["in_channels"] = s.in_channels;
  j["out_channels"] = s.out_channels;
  j["base_channels"] = s.base_channels;
  j["top_level"] = s.top_level;
  j["pooling"] = pool_mode_name(s.pooling);
  j["steps"] = s.steps;
  return j;
}

ModelSpec spec_from_json(const json& j, const std::string& path) {
  try {
    ModelSpec s;
    s.variant = parse_variant(j.at("variant").get<std::string>());
    s.in_channels = j.at("in_channels").get<int>();
    s.out_channels = j.at("out_channels").get<int>();
    s.base_channels = j.at("base_channels").get<int>();
    s.top_level = j.at("top_level").get<int>();
    s.pooling = parse_pool_mode(j.at("pooling").get<std::string>());
    s.steps = j.at("steps").get<int>();
    return s;
  } catch (const json::exception& e) {
    bad_file(path, std::string("sidecar field error: ") + e.what());
  } catch (const UsageError& e) {
    bad_file(path, std::string("sidecar field error: ") + e.what());
  }
}

}  // namespace

void save_checkpoint(Model<float>& model, const std::string& path) {
  auto state = model.state();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataFormatError(path + ": cannot open for writing");
  os.write(kMagic, 4);
  put_u32(os, uint32_t(state.size()));
  for (auto& [name, t] : state) {
    put_u32(os, uint32_t(name.size()));
    os.write(name.data(), std::streamsize(name.size()));
    const auto& shape = t->shape();
    put_u32(os, uint32_t(shape.size()));
    for (int64_t d : shape) put_u32(os, uint32_t(d));
    put_f32(os, t->data(), size_t(t->numel()));
  }
  if (!os) throw DataFormatError(path + ": write failed");
  os.close();

  std::ofstream js(path + ".json", std::ios::trunc);
  if (!js) throw DataFormatError(path + ".json: cannot open for writing");
  js << spec_to_json(model.spec).dump(2) << "\n";
}

ModelSpec read_checkpoint_spec(const std::string& path) {
  const std::string side = path + ".json";
  std::ifstream js(side);
  if (!js) bad_file(side, "cannot open");
  json j;
  try {
    js >> j;
  } catch (const json::exception& e) {
    bad_file(side, std::string("invalid JSON: ") + e.what());
  }
  return spec_from_json(j, side);
}

Model<float> load_checkpoint(const std::string& path, std::shared_ptr<const Hierarchy> hier) {
  const ModelSpec spec = read_checkpoint_spec(path);
  if (!hier)
    hier = Hierarchy::build(spec.top_level, spec.variant == Variant::Unet18Repa);
  Rng rng(0);
  Model<float> model = build_model<float>(spec, hier, rng);
  auto state = model.state();

  std::ifstream is(path, std::ios::binary);
  if (!is) bad_file(path, "cannot open");
  char magic[4];
  if (!is.read(magic, 4)) bad_file(path, "truncated");
  if (std::memcmp(magic, kMagic, 4) != 0) bad_file(path, "bad magic, expected SUNW");
  const uint32_t count = get_u32(is, path);
  if (count != state.size())
    bad_file(path, "holds " + std::to_string(count) + " arrays, model needs " +
                       std::to_string(state.size()));
  for (auto& [name, t] : state) {
    const uint32_t name_len = get_u32(is, path);
    std::string got(name_len, '\0');
    if (!is.read(got.data(), name_len)) bad_file(path, "truncated");
    if (got != name) bad_file(path, "expected array '" + name + "', found '" + got + "'");
    const uint32_t rank = get_u32(is, path);
    const auto& shape = t->shape();
    if (rank != shape.size()) bad_file(path, "array '" + name + "' has the wrong rank");
    for (int64_t d : shape)
      if (get_u32(is, path) != uint32_t(d))
        bad_file(path, "array '" + name + "' has the wrong shape");
    get_f32(is, t->data(), size_t(t->numel()), path);
  }
  return model;
}

}  // namespace sunet
