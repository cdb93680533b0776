#include "samtta/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <utility>

namespace samtta {

namespace {

constexpr char kMagic[4] = {'T', 'T', 'A', 'F'};

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
    return std::bit_cast<double>(bits);
  }
  std::string str() {
    auto n = u32();
    need(n);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == bytes_.size(); }
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::size_t pos() const { return pos_; }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

std::vector<std::pair<std::string, std::uint32_t>> config_fields(const ModelConfig& c) {
  return {{"image_size", c.image_size},         {"patch_size", c.patch_size},
          {"embed_dim", c.embed_dim},           {"encoder_blocks", c.encoder_blocks},
          {"attention_heads", c.attention_heads}, {"lowres_size", c.lowres_size},
          {"highres_size", c.highres_size},     {"lora_rank", c.lora_rank},
          {"mlp_hidden", c.mlp_hidden},         {"lora_targets", static_cast<std::uint32_t>(c.lora_targets)}};
}

void set_config_field(ModelConfig& c, const std::string& name, std::uint32_t v) {
  if (name == "image_size") c.image_size = v;
  else if (name == "patch_size") c.patch_size = v;
  else if (name == "embed_dim") c.embed_dim = v;
  else if (name == "encoder_blocks") c.encoder_blocks = v;
  else if (name == "attention_heads") c.attention_heads = v;
  else if (name == "lowres_size") c.lowres_size = v;
  else if (name == "highres_size") c.highres_size = v;
  else if (name == "lora_rank") c.lora_rank = v;
  else if (name == "mlp_hidden") c.mlp_hidden = v;
  else if (name == "lora_targets") {
    if (v > 1) throw FormatError("checkpoint: unknown lora_targets value " + std::to_string(v));
    c.lora_targets = static_cast<LoraTargets>(v);
  } else {
    throw FormatError("checkpoint: unknown config field '" + name + "'");
  }
}

}  // namespace

std::vector<std::uint8_t> serialize_model(const SegModel& model) {
  Writer w;
  w.raw(kMagic, 4);
  w.u32(kCheckpointVersion);
  auto fields = config_fields(model.config());
  w.u32(static_cast<std::uint32_t>(fields.size()));
  for (const auto& [name, value] : fields) {
    w.str(name);
    w.u32(value);
  }
  const auto& params = model.params();  // std::map: sorted by name
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, tensor] : params) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(tensor.rank()));
    for (auto d : tensor.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : tensor.data()) w.f64(v);
  }
  return w.take();
}

SegModel deserialize_model(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  r.need(4);
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("checkpoint: bad magic (expected TTAF)");
  r.skip(4);
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  ModelConfig config;
  const auto n_fields = r.u32();
  for (std::uint32_t i = 0; i < n_fields; ++i) {
    auto name = r.str();
    set_config_field(config, name, r.u32());
  }
  try {
    config.validate();
  } catch (const ShapeError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }

  struct Record {
    Shape shape;
    std::vector<double> data;
  };
  std::map<std::string, Record> records;
  const auto n_tensors = r.u32();
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    auto name = r.str();
    Record rec;
    const auto rank = r.u32();
    for (std::uint32_t k = 0; k < rank; ++k) rec.shape.push_back(r.u32());
    const auto n = shape_numel(rec.shape);
    r.need(n * 8);
    rec.data.resize(n);
    for (auto& v : rec.data) v = r.f64();
    records.emplace(std::move(name), std::move(rec));
  }
  if (!r.at_end()) throw FormatError("checkpoint: trailing bytes after tensor records");

  SegModel model(config, 0);
  const bool lora = std::any_of(records.begin(), records.end(),
                                [](const auto& kv) { return SegModel::is_lora(kv.first); });
  if (lora) model.attach_lora(0);
  for (auto& [name, tensor] : model.params()) {
    auto it = records.find(name);
    if (it == records.end()) throw FormatError("checkpoint: missing tensor '" + name + "'");
    if (it->second.shape != tensor.shape()) {
      throw FormatError("checkpoint: tensor '" + name + "' has shape " + shape_str(it->second.shape) +
                        ", model expects " + shape_str(tensor.shape()));
    }
    auto dst = tensor.mutable_data();
    std::copy(it->second.data.begin(), it->second.data.end(), dst.begin());
    records.erase(it);
  }
  if (!records.empty()) throw FormatError("checkpoint: unexpected tensor '" + records.begin()->first + "'");
  model.set_train_mode(TrainMode::Frozen);
  return model;
}

void save_checkpoint(const SegModel& model, const std::filesystem::path& path) {
  auto bytes = serialize_model(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing " + path.string());
}

SegModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

std::uint64_t model_hash(const SegModel& model) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : serialize_model(model)) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace samtta
