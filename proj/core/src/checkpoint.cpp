#include "fmri_s4/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>

namespace fmri_s4::nn {

namespace {

constexpr std::uint32_t kMaxCount = 1u << 28;

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  void u32(std::uint32_t v) { put_le(v); }
  void f32(float v) { put_le(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { put_le(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void raw(const char* p, std::size_t n) { out_.write(p, static_cast<std::streamsize>(n)); }

 private:
  template <typename U>
  void put_le(U v) {
    std::array<char, sizeof(U)> bytes;
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
    out_.write(bytes.data(), bytes.size());
  }

  std::ostream& out_;
};

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  std::uint32_t u32() { return get_le<std::uint32_t>(); }
  float f32() { return std::bit_cast<float>(get_le<std::uint32_t>()); }
  double f64() { return std::bit_cast<double>(get_le<std::uint64_t>()); }
  std::string str() {
    const std::uint32_t n = count("string length");
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
  std::uint32_t count(const char* what) {
    const std::uint32_t n = u32();
    if (n > kMaxCount) throw CheckpointError(std::string("implausible ") + what + ": " + std::to_string(n));
    return n;
  }
  void raw(char* p, std::size_t n) {
    in_.read(p, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw CheckpointError("checkpoint is truncated");
  }

 private:
  template <typename U>
  U get_le() {
    std::array<unsigned char, sizeof(U)> bytes;
    raw(reinterpret_cast<char*>(bytes.data()), bytes.size());
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes[i]) << (8 * i);
    return v;
  }

  std::istream& in_;
};

}  // namespace

template <typename Real>
void write_checkpoint(std::ostream& out, const Model<Real>& model, const std::vector<std::string>& class_names) {
  Writer w(out);
  const ModelConfig& c = model.config();
  w.raw(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  for (std::size_t v : {c.n_rois, c.d_model, c.k, c.k_conv, c.k_s4, c.d_state, c.n_classes}) {
    w.u32(static_cast<std::uint32_t>(v));
  }
  w.f64(c.dropout);
  w.f64(c.delta_min);
  w.f64(c.delta_max);
  w.u32(static_cast<std::uint32_t>(class_names.size()));
  for (const auto& name : class_names) w.str(name);
  const auto params = model.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) {
    w.str(p->name);
    w.u32(static_cast<std::uint32_t>(p->shape.size()));
    for (std::size_t d : p->shape) w.u32(static_cast<std::uint32_t>(d));
    for (Real v : p->value) w.f32(static_cast<float>(v));
  }
  if (!out) throw CheckpointError("failed to write checkpoint");
}

template <typename Real>
LoadedModel<Real> read_checkpoint(std::istream& in) {
  Reader r(in);
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw CheckpointError("not a model checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  ModelConfig c;
  c.n_rois = r.u32();
  c.d_model = r.u32();
  c.k = r.u32();
  c.k_conv = r.u32();
  c.k_s4 = r.u32();
  c.d_state = r.u32();
  c.n_classes = r.u32();
  c.dropout = r.f64();
  c.delta_min = r.f64();
  c.delta_max = r.f64();
  try {
    c.validate();
  } catch (const InvalidConfig& e) {
    throw CheckpointError(std::string("checkpoint holds an invalid config: ") + e.what());
  }

  std::vector<std::string> class_names(r.count("class count"));
  for (auto& name : class_names) name = r.str();

  LoadedModel<Real> loaded{Model<Real>(c, 0), std::move(class_names)};
  std::map<std::string, Parameter<Real>*> by_name;
  for (auto* p : loaded.model.parameters()) by_name[p->name] = p;

  const std::uint32_t tensors = r.count("tensor count");
  if (tensors != by_name.size()) {
    throw CheckpointError("checkpoint has " + std::to_string(tensors) + " tensors, model expects " +
                          std::to_string(by_name.size()));
  }
  for (std::uint32_t i = 0; i < tensors; ++i) {
    const std::string name = r.str();
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointError("unexpected tensor '" + name + "'");
    Parameter<Real>& p = *it->second;
    std::vector<std::size_t> shape(r.count("rank"));
    for (auto& d : shape) d = r.u32();
    if (shape != p.shape) throw CheckpointError("tensor '" + name + "' has the wrong shape");
    for (auto& v : p.value) v = static_cast<Real>(r.f32());
    by_name.erase(it);
  }
  return loaded;
}

template <typename Real>
void save_checkpoint(const std::filesystem::path& path, const Model<Real>& model,
                     const std::vector<std::string>& class_names) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  write_checkpoint(out, model, class_names);
}

template <typename Real>
LoadedModel<Real> load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw MissingFile("checkpoint not found: " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  return read_checkpoint<Real>(in);
}

template void write_checkpoint(std::ostream&, const Model<float>&, const std::vector<std::string>&);
template void write_checkpoint(std::ostream&, const Model<double>&, const std::vector<std::string>&);
template LoadedModel<float> read_checkpoint(std::istream&);
template LoadedModel<double> read_checkpoint(std::istream&);
template void save_checkpoint(const std::filesystem::path&, const Model<float>&, const std::vector<std::string>&);
template void save_checkpoint(const std::filesystem::path&, const Model<double>&, const std::vector<std::string>&);
template LoadedModel<float> load_checkpoint(const std::filesystem::path&);
template LoadedModel<double> load_checkpoint(const std::filesystem::path&);

}  // namespace fmri_s4::nn
