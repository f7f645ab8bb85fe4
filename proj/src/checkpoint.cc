#include "natseg/checkpoint.h"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

namespace natseg {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint IO assumes a little-endian host");

constexpr char kMagic[4] = {'N', 'S', 'E', 'G'};

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

class Writer {
 public:
  template <typename T>
  void pod(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
  }
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out.insert(out.end(), p, p + n);
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& b, const std::string& origin) : buf(b), origin(origin) {}
  template <typename T>
  T pod(const char* what) {
    T v;
    need(sizeof(T), what);
    std::memcpy(&v, buf.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
    pos += n;
    return s;
  }
  void need(std::size_t n, const char* what) const {
    if (pos + n > buf.size()) {
      throw IoError("checkpoint '" + origin + "' is truncated (while reading " + what + ")");
    }
  }
  const std::vector<std::uint8_t>& buf;
  std::string origin;
  std::size_t pos = 0;
};

const std::string& meta_get(const std::map<std::string, std::string>& m, const std::string& key) {
  auto it = m.find(key);
  if (it == m.end()) throw StateError("checkpoint metadata lacks '" + key + "'");
  return it->second;
}

std::int64_t meta_int(const std::map<std::string, std::string>& m, const std::string& key) {
  const std::string& v = meta_get(m, key);
  try {
    std::size_t used = 0;
    const long long x = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw StateError("checkpoint metadata '" + key + "' is not an integer: " + v);
  }
}

double meta_double(const std::map<std::string, std::string>& m, const std::string& key) {
  const std::string& v = meta_get(m, key);
  try {
    return std::stod(v);
  } catch (const std::exception&) {
    throw StateError("checkpoint metadata '" + key + "' is not a number: " + v);
  }
}

}  // namespace

const CheckpointEntry* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

ModelConfig Checkpoint::model_config() const {
  const auto& m = metadata;
  ModelConfig cfg = ModelConfig::make(parse_variant(meta_get(m, "model.variant")),
                                      static_cast<int>(meta_int(m, "model.input_h")),
                                      static_cast<int>(meta_int(m, "model.base_width")),
                                      static_cast<std::uint64_t>(std::stoull(meta_get(m, "model.seed"))));
  cfg.input_w = static_cast<int>(meta_int(m, "model.input_w"));
  for (int i = 0; i < 4; ++i) {
    cfg.widths[i] = static_cast<int>(meta_int(m, "model.width" + std::to_string(i)));
  }
  cfg.nat.dim = cfg.widths[3];
  cfg.nat.window = static_cast<int>(meta_int(m, "model.nat.window"));
  cfg.nat.proj_out = meta_int(m, "model.nat.proj_out") != 0;
  cfg.nat.proj_bias = meta_int(m, "model.nat.proj_bias") != 0;
  cfg.nat.residual = meta_int(m, "model.nat.residual") != 0;
  return cfg;
}

TrainCursor Checkpoint::cursor() const {
  TrainCursor c;
  if (!metadata.count("cursor.epoch")) return c;
  c.epoch = meta_int(metadata, "cursor.epoch");
  c.batch_in_epoch = meta_int(metadata, "cursor.batch_in_epoch");
  c.step = meta_int(metadata, "cursor.step");
  c.epoch_loss_sum = meta_double(metadata, "cursor.epoch_loss_sum");
  c.seed = std::stoull(meta_get(metadata, "cursor.seed"));
  c.loss = meta_get(metadata, "cursor.loss");
  return c;
}

Checkpoint capture_checkpoint(Model& model, const AdamState* adam, const TrainCursor* cursor) {
  Checkpoint ck;
  const ModelConfig& cfg = model.config();
  auto& m = ck.metadata;
  m["model.variant"] = variant_name(cfg.variant);
  m["model.input_h"] = std::to_string(cfg.input_h);
  m["model.input_w"] = std::to_string(cfg.input_w);
  m["model.base_width"] = std::to_string(cfg.base_width);
  for (int i = 0; i < 4; ++i) m["model.width" + std::to_string(i)] = std::to_string(cfg.widths[i]);
  m["model.nat.window"] = std::to_string(cfg.nat.window);
  m["model.nat.proj_out"] = cfg.nat.proj_out ? "1" : "0";
  m["model.nat.proj_bias"] = cfg.nat.proj_bias ? "1" : "0";
  m["model.nat.residual"] = cfg.nat.residual ? "1" : "0";
  m["model.seed"] = std::to_string(cfg.seed);

  const ParamList params = model.parameters();
  for (const auto& p : params) {
    auto d = p.tensor.data();
    ck.entries.push_back({"param/" + p.name, p.tensor.shape(), {d.begin(), d.end()}});
  }
  for (const auto& b : model.buffers()) {
    ck.entries.push_back({"buffer/" + b.name, Shape{1, static_cast<int>(b.values->size()), 1, 1}, *b.values});
  }
  if (adam) {
    m["adam.t"] = std::to_string(adam->t);
    m["adam.lr"] = fmt_double(adam->lr);
    m["adam.beta1"] = fmt_double(adam->beta1);
    m["adam.beta2"] = fmt_double(adam->beta2);
    m["adam.eps"] = fmt_double(adam->eps);
    if (adam->m.size() != params.size()) throw StateError("capture_checkpoint: optimizer does not match model");
    for (std::size_t i = 0; i < params.size(); ++i) {
      ck.entries.push_back({"adam.m/" + params[i].name, params[i].tensor.shape(), adam->m[i]});
      ck.entries.push_back({"adam.v/" + params[i].name, params[i].tensor.shape(), adam->v[i]});
    }
  }
  if (cursor) {
    m["cursor.epoch"] = std::to_string(cursor->epoch);
    m["cursor.batch_in_epoch"] = std::to_string(cursor->batch_in_epoch);
    m["cursor.step"] = std::to_string(cursor->step);
    m["cursor.epoch_loss_sum"] = fmt_double(cursor->epoch_loss_sum);
    m["cursor.seed"] = std::to_string(cursor->seed);
    m["cursor.loss"] = cursor->loss;
  }
  return ck;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck) {
  Writer w;
  w.bytes(kMagic, 4);
  w.pod<std::uint32_t>(ck.version);
  w.pod<std::uint32_t>(ck.value_bytes);
  std::string meta;
  for (const auto& [k, v] : ck.metadata) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw StateError("checkpoint metadata '" + k + "' contains a reserved character");
    }
    meta += k + "=" + v + "\n";
  }
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(meta.size()));
  w.bytes(meta.data(), meta.size());
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(ck.entries.size()));
  std::uint64_t offset = 0;
  for (const auto& e : ck.entries) {
    if (static_cast<std::int64_t>(e.values.size()) != e.shape.numel()) {
      throw StateError("checkpoint entry '" + e.name + "' holds " + std::to_string(e.values.size()) +
                       " values for shape " + e.shape.str());
    }
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(e.name.size()));
    w.bytes(e.name.data(), e.name.size());
    for (int d : {e.shape.n, e.shape.c, e.shape.h, e.shape.w}) w.pod<std::int32_t>(d);
    const std::uint64_t len = e.values.size() * ck.value_bytes;
    w.pod<std::uint64_t>(offset);
    w.pod<std::uint64_t>(len);
    offset += len;
  }
  for (const auto& e : ck.entries) {
    for (Real v : e.values) {
      if (ck.value_bytes == 4) w.pod<float>(static_cast<float>(v));
      else w.pod<double>(static_cast<double>(v));
    }
  }
  return std::move(w.out);
}

Checkpoint parse_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
  Reader r(bytes, origin);
  if (r.str(4, "magic") != std::string(kMagic, 4)) {
    throw IoError("'" + origin + "' is not a checkpoint (bad magic bytes)");
  }
  Checkpoint ck;
  ck.version = r.pod<std::uint32_t>("version");
  if (ck.version != kCheckpointVersion) {
    throw IoError("checkpoint '" + origin + "' has format version " + std::to_string(ck.version) +
                  "; this build reads version " + std::to_string(kCheckpointVersion));
  }
  ck.value_bytes = r.pod<std::uint32_t>("value width");
  if (ck.value_bytes != 4 && ck.value_bytes != 8) {
    throw IoError("checkpoint '" + origin + "' has unsupported value width " + std::to_string(ck.value_bytes));
  }
  const std::string meta = r.str(r.pod<std::uint32_t>("metadata length"), "metadata");
  std::istringstream ms(meta);
  for (std::string line; std::getline(ms, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError("checkpoint '" + origin + "' has a malformed metadata line");
    ck.metadata[line.substr(0, eq)] = line.substr(eq + 1);
  }
  const std::uint32_t count = r.pod<std::uint32_t>("entry count");
  struct Span {
    std::uint64_t offset, length;
  };
  std::vector<Span> spans;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    e.name = r.str(r.pod<std::uint32_t>("entry name length"), "entry name");
    e.shape.n = r.pod<std::int32_t>("entry shape");
    e.shape.c = r.pod<std::int32_t>("entry shape");
    e.shape.h = r.pod<std::int32_t>("entry shape");
    e.shape.w = r.pod<std::int32_t>("entry shape");
    const Span s{r.pod<std::uint64_t>("entry offset"), r.pod<std::uint64_t>("entry length")};
    if (e.shape.n < 1 || e.shape.c < 1 || e.shape.h < 1 || e.shape.w < 1 ||
        s.length != static_cast<std::uint64_t>(e.shape.numel()) * ck.value_bytes) {
      throw IoError("checkpoint '" + origin + "' entry '" + e.name + "' has an inconsistent manifest record");
    }
    spans.push_back(s);
    ck.entries.push_back(std::move(e));
  }
  const std::size_t data_start = r.pos;
  for (std::size_t i = 0; i < ck.entries.size(); ++i) {
    auto& e = ck.entries[i];
    r.pos = data_start + spans[i].offset;
    e.values.resize(static_cast<std::size_t>(e.shape.numel()));
    for (auto& v : e.values) {
      v = ck.value_bytes == 4 ? static_cast<Real>(r.pod<float>(e.name.c_str()))
                              : static_cast<Real>(r.pod<double>(e.name.c_str()));
    }
  }
  return ck;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  const auto bytes = serialize_checkpoint(ck);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write to '" + tmp + "' failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move '" + tmp + "' to '" + path + "': " + ec.message());
}

void save_checkpoint(const std::string& path, Model& model, const AdamState* adam,
                     const TrainCursor* cursor) {
  save_checkpoint(path, capture_checkpoint(model, adam, cursor));
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes, path);
}

void apply_checkpoint(const Checkpoint& ck, Model& model, AdamState* adam) {
  const ParamList params = model.parameters();
  BufferList buffers = model.buffers();
  const auto expect = [&](const std::string& name, const Shape& shape) -> const CheckpointEntry& {
    const CheckpointEntry* e = ck.find(name);
    if (!e) throw StateError("checkpoint lacks tensor '" + name + "'");
    if (e->shape != shape) {
      throw StateError("checkpoint tensor '" + name + "' has shape " + e->shape.str() +
                       ", model expects " + shape.str());
    }
    return *e;
  };
  // Validate everything before the first write.
  std::vector<const CheckpointEntry*> p_src, b_src, m_src, v_src;
  for (const auto& p : params) p_src.push_back(&expect("param/" + p.name, p.tensor.shape()));
  for (const auto& b : buffers) {
    b_src.push_back(&expect("buffer/" + b.name, Shape{1, static_cast<int>(b.values->size()), 1, 1}));
  }
  if (adam) {
    if (!ck.has_optimizer()) throw StateError("checkpoint holds no optimizer state");
    for (const auto& p : params) {
      m_src.push_back(&expect("adam.m/" + p.name, p.tensor.shape()));
      v_src.push_back(&expect("adam.v/" + p.name, p.tensor.shape()));
    }
  }
  AdamState next;
  if (adam) {
    next.t = meta_int(ck.metadata, "adam.t");
    next.lr = meta_double(ck.metadata, "adam.lr");
    next.beta1 = meta_double(ck.metadata, "adam.beta1");
    next.beta2 = meta_double(ck.metadata, "adam.beta2");
    next.eps = meta_double(ck.metadata, "adam.eps");
    for (std::size_t i = 0; i < params.size(); ++i) {
      next.m.push_back(m_src[i]->values);
      next.v.push_back(v_src[i]->values);
    }
  }

  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i].tensor;
    std::copy(p_src[i]->values.begin(), p_src[i]->values.end(), t.mutable_data().begin());
  }
  for (std::size_t i = 0; i < buffers.size(); ++i) *buffers[i].values = b_src[i]->values;
  if (adam) *adam = std::move(next);
}

}  // namespace natseg
