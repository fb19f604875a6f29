#include "packedflow/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "packedflow/error.hpp"

namespace packedflow {

namespace {

constexpr char kMagic[8] = {'P', 'K', 'F', 'L', 'O', 'W', '\0', '\n'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  void need(std::size_t n) const {
    if (pos_ + n > in_.size())
      throw Error("model file truncated at byte " + std::to_string(pos_) + " (need " + std::to_string(n) +
                  " more)");
  }
  std::uint8_t u8() {
    need(1);
    return in_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  void expect_magic() {
    need(sizeof kMagic);
    if (std::memcmp(in_.data() + pos_, kMagic, sizeof kMagic) != 0) throw Error("not a packedflow model file");
    pos_ += sizeof kMagic;
  }
  bool at_end() const { return pos_ == in_.size(); }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_model(const PackedSpec& spec, const Params& params) {
  const auto plans = plan_layers(spec);
  params.check_shapes(plans);

  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kModelFormatVersion);
  w.u64(spec.num_estimators);
  w.u64(spec.alpha);
  w.u64(spec.gamma);
  w.u64(spec.in_features);
  w.u64(spec.out_features);
  w.u8(spec.dropout_enabled ? 1 : 0);
  w.f64(spec.dropout_p);
  w.u64(spec.hidden_widths.size());
  for (std::size_t h : spec.hidden_widths) w.u64(h);

  w.u64(plans.size());
  for (const LayerPlan& p : plans) {
    w.u8(static_cast<std::uint8_t>(p.role));
    w.u64(p.in_width);
    w.u64(p.out_width);
    w.u64(p.groups);
    w.u64(p.per_group_in);
    w.u64(p.per_group_out);
  }
  for (const LayerParams& layer : params.layers) {
    for (double v : layer.weights) w.f64(v);
    for (double v : layer.biases) w.f64(v);
  }
  return w.take();
}

ModelFile decode_model(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.expect_magic();
  const std::uint32_t version = r.u32();
  if (version != kModelFormatVersion)
    throw Error("unsupported model format version " + std::to_string(version));

  ModelFile m;
  m.spec.num_estimators = r.u64();
  m.spec.alpha = r.u64();
  m.spec.gamma = r.u64();
  m.spec.in_features = r.u64();
  m.spec.out_features = r.u64();
  m.spec.dropout_enabled = r.u8() != 0;
  m.spec.dropout_p = r.f64();
  const std::uint64_t num_hidden = r.u64();
  r.need(num_hidden * 8);
  m.spec.hidden_widths.resize(num_hidden);
  for (auto& h : m.spec.hidden_widths) h = r.u64();

  m.plans = plan_layers(m.spec);
  const std::uint64_t num_layers = r.u64();
  if (num_layers != m.plans.size()) throw Error("model file layer table does not match its spec");
  for (const LayerPlan& expected : m.plans) {
    LayerPlan p;
    const std::uint8_t role = r.u8();
    if (role > 2) throw Error("model file has an unknown layer role");
    p.role = static_cast<LayerRole>(role);
    p.in_width = r.u64();
    p.out_width = r.u64();
    p.groups = r.u64();
    p.per_group_in = r.u64();
    p.per_group_out = r.u64();
    if (!(p == expected)) throw Error("model file layer table does not match its spec");
  }

  m.params = Params::zeros_like(m.plans);
  for (LayerParams& layer : m.params.layers) {
    for (double& v : layer.weights) v = r.f64();
    for (double& v : layer.biases) v = r.f64();
  }
  if (!r.at_end()) throw Error("trailing bytes after model parameters");
  if (!m.params.all_finite()) throw Error("model file contains non-finite parameters");
  return m;
}

void save_model(const std::filesystem::path& path, const PackedSpec& spec, const Params& params) {
  const auto bytes = encode_model(spec, params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing " + path.string());
}

ModelFile load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open model file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_model(bytes);
}

}  // namespace packedflow
