#include "umm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>

namespace umm {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

class Writer {
 public:
  template <typename V>
  void pod(V v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    buf.insert(buf.end(), p, p + sizeof(V));
  }
  void str(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    buf.insert(buf.end(), s.begin(), s.end());
  }
  std::vector<std::uint8_t> buf;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& b, std::string path) : buf(b), path_(std::move(path)) {}
  template <typename V>
  V pod() {
    need(sizeof(V));
    V v;
    std::memcpy(&v, buf.data() + pos, sizeof(V));
    pos += sizeof(V);
    return v;
  }
  std::string str() {
    auto n = pod<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
    pos += n;
    return s;
  }
  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw std::runtime_error("truncated checkpoint: " + path_);
  }
  const std::vector<std::uint8_t>& buf;
  std::size_t pos = 0;

 private:
  std::string path_;
};

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

CheckpointInfo parse_header(Reader& r, const std::string& path) {
  r.need(4);
  if (std::memcmp(r.buf.data(), "UMMD", 4) != 0) throw std::runtime_error("not a checkpoint (bad magic): " + path);
  r.pos = 4;
  CheckpointInfo info;
  info.version = r.pod<std::uint32_t>();
  if (info.version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(info.version) + ": " + path);
  }
  info.digest = r.pod<std::uint64_t>();
  info.stage = r.str();
  info.config_text = r.str();
  auto n = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    CheckpointInfo::Entry e;
    e.name = r.str();
    e.group = static_cast<ParamGroup>(r.pod<std::uint8_t>());
    auto rank = r.pod<std::uint32_t>();
    for (std::uint32_t k = 0; k < rank; ++k) e.shape.push_back(r.pod<std::int32_t>());
    e.offset = r.pod<std::uint64_t>();
    info.tensors.push_back(std::move(e));
  }
  auto d = r.pod<std::uint32_t>();
  for (std::uint32_t c = 0; c < d; ++c) info.stats.mean.push_back(r.pod<double>());
  for (std::uint32_t c = 0; c < d; ++c) info.stats.std.push_back(r.pod<double>());
  info.vocab_text = r.str();
  return info;
}

}  // namespace

template <typename T>
std::vector<std::uint8_t> serialize_checkpoint(const Model<T>& model, const std::string& stage) {
  Writer w;
  w.buf.insert(w.buf.end(), {'U', 'M', 'M', 'D'});
  w.pod(kCheckpointVersion);
  w.pod(model.cfg.digest());
  w.str(stage);
  w.str(model.cfg.serialize());
  const auto& entries = model.store.entries();
  w.pod(static_cast<std::uint32_t>(entries.size()));
  std::uint64_t offset = 0;
  for (const auto& e : entries) {
    w.str(e.name);
    w.pod(static_cast<std::uint8_t>(e.group));
    w.pod(static_cast<std::uint32_t>(e.tensor.rank()));
    for (int d : e.tensor.shape()) w.pod(static_cast<std::int32_t>(d));
    w.pod(offset);
    offset += e.tensor.size();
  }
  w.pod(static_cast<std::uint32_t>(model.stats.mean.size()));
  for (double v : model.stats.mean) w.pod(v);
  for (double v : model.stats.std) w.pod(v);
  w.str(model.vocab.serialize());
  w.pod(offset);
  for (const auto& e : entries)
    for (T v : e.tensor.vec()) w.pod(static_cast<float>(v));
  return std::move(w.buf);
}

template <typename T>
void save_checkpoint(const Model<T>& model, const std::string& stage, const std::string& path) {
  auto bytes = serialize_checkpoint(model, stage);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("failed writing checkpoint: " + path);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw std::runtime_error("cannot move checkpoint into " + path);
}

CheckpointInfo read_checkpoint_info(const std::string& path) {
  auto bytes = read_file(path);
  Reader r(bytes, path);
  return parse_header(r, path);
}

template <typename T>
CheckpointInfo load_checkpoint(Model<T>& model, const std::string& path) {
  auto bytes = read_file(path);
  Reader r(bytes, path);
  CheckpointInfo info = parse_header(r, path);
  if (info.digest != model.cfg.digest()) {
    std::ostringstream os;
    os << "config digest mismatch: checkpoint " << std::hex << info.digest << ", config " << model.cfg.digest();
    throw std::runtime_error(os.str());
  }
  const auto& entries = model.store.entries();
  if (info.tensors.size() != entries.size()) throw std::runtime_error("checkpoint tensor count differs from model");
  const auto count = r.pod<std::uint64_t>();
  const std::size_t base = r.pos;
  r.need(count * sizeof(float));
  if (r.pos + count * sizeof(float) != bytes.size()) throw std::runtime_error("trailing bytes in checkpoint: " + path);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    const auto& ie = info.tensors[i];
    if (ie.name != e.name || ie.shape != e.tensor.shape() || ie.group != e.group) {
      throw std::runtime_error("checkpoint entry " + ie.name + " does not match model parameter " + e.name);
    }
    if (ie.offset + e.tensor.size() > count) throw std::runtime_error("checkpoint payload too short for " + ie.name);
    Tensor<T> t = e.tensor;
    auto dst = t.values();
    for (std::size_t k = 0; k < dst.size(); ++k) {
      float f;
      std::memcpy(&f, bytes.data() + base + (ie.offset + k) * sizeof(float), sizeof(float));
      dst[k] = static_cast<T>(f);
    }
  }
  model.stats = info.stats;
  Vocab v = Vocab::parse(info.vocab_text);
  if (!(v == model.vocab)) throw std::runtime_error("checkpoint vocab differs from model vocab");
  return info;
}

template std::vector<std::uint8_t> serialize_checkpoint(const Model<float>&, const std::string&);
template std::vector<std::uint8_t> serialize_checkpoint(const Model<double>&, const std::string&);
template void save_checkpoint(const Model<float>&, const std::string&, const std::string&);
template void save_checkpoint(const Model<double>&, const std::string&, const std::string&);
template CheckpointInfo load_checkpoint(Model<float>&, const std::string&);
template CheckpointInfo load_checkpoint(Model<double>&, const std::string&);

}  // namespace umm
