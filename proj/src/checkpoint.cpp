#include "cdon/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace cdon {

namespace {

constexpr char kMagic[4] = {'C', 'D', 'O', 'N'};

void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(const std::uint8_t* p, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : bytes_(b) {}
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }
  const std::uint8_t* take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw FormatError("checkpoint truncated at offset " + std::to_string(pos_) + " reading " +
                        what);
    }
    const std::uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint64_t uint(int bytes, const char* what) {
    return get_le(take(static_cast<std::size_t>(bytes), what), bytes);
  }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

// Names longer than this are treated as corruption rather than allocated.
constexpr std::uint64_t kMaxNameLength = 1u << 16;

}  // namespace

std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::f64:
    case DType::u64:
    case DType::i64:
      return 8;
    case DType::f32:
      return 4;
    case DType::u8:
      return 1;
  }
  throw FormatError("unknown dtype");
}

std::size_t Record::elements() const {
  std::size_t n = 1;
  for (std::uint32_t d : dims) n *= d;
  return n;
}

Record Record::from_tensor(const std::string& name, const Tensor4& t) {
  Record r;
  r.name = name;
  r.dtype = sizeof(real) == 8 ? DType::f64 : DType::f32;
  r.dims = {static_cast<std::uint32_t>(t.n()), static_cast<std::uint32_t>(t.c()),
            static_cast<std::uint32_t>(t.h()), static_cast<std::uint32_t>(t.w())};
  for (real v : t.data()) {
    if constexpr (sizeof(real) == 8) {
      put_le(r.payload, std::bit_cast<std::uint64_t>(static_cast<double>(v)), 8);
    } else {
      put_le(r.payload, std::bit_cast<std::uint32_t>(static_cast<float>(v)), 4);
    }
  }
  return r;
}

Record Record::from_text(const std::string& name, const std::string& text) {
  Record r;
  r.name = name;
  r.dtype = DType::u8;
  r.dims = {static_cast<std::uint32_t>(text.size())};
  r.payload.assign(text.begin(), text.end());
  return r;
}

Record Record::from_u64(const std::string& name, std::uint64_t v) {
  Record r;
  r.name = name;
  r.dtype = DType::u64;
  put_le(r.payload, v, 8);
  return r;
}

Tensor4 Record::to_tensor() const {
  if (dims.size() != 4 || (dtype != DType::f64 && dtype != DType::f32)) {
    throw FormatError("record '" + name + "' is not a rank-4 float tensor");
  }
  Tensor4 t({static_cast<int>(dims[0]), static_cast<int>(dims[1]), static_cast<int>(dims[2]),
             static_cast<int>(dims[3])});
  const std::size_t width = dtype_size(dtype);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const std::uint64_t bits = get_le(payload.data() + i * width, static_cast<int>(width));
    t[i] = dtype == DType::f64 ? static_cast<real>(std::bit_cast<double>(bits))
                               : static_cast<real>(std::bit_cast<float>(static_cast<std::uint32_t>(bits)));
  }
  return t;
}

std::string Record::to_text() const {
  if (dtype != DType::u8) throw FormatError("record '" + name + "' is not text");
  return std::string(payload.begin(), payload.end());
}

std::uint64_t Record::to_u64() const {
  if (dtype != DType::u64 || payload.size() != 8) throw FormatError("record '" + name + "' is not u64");
  return get_le(payload.data(), 8);
}

const Record* Checkpoint::find(const std::string& name) const {
  for (const Record& r : records) {
    if (r.name == name) return &r;
  }
  return nullptr;
}

const Record& Checkpoint::at(const std::string& name) const {
  if (const Record* r = find(name)) return *r;
  throw FormatError("checkpoint has no record '" + name + "'");
}

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_le(out, ckpt.version, 4);
  for (const Record& r : ckpt.records) {
    if (r.payload.size() != r.elements() * dtype_size(r.dtype)) {
      throw UsageError("record '" + r.name + "' payload does not match its dims");
    }
    put_le(out, r.name.size(), 4);
    out.insert(out.end(), r.name.begin(), r.name.end());
    out.push_back(static_cast<std::uint8_t>(r.dtype));
    out.push_back(static_cast<std::uint8_t>(r.dims.size()));
    for (std::uint32_t d : r.dims) put_le(out, d, 4);
    out.insert(out.end(), r.payload.begin(), r.payload.end());
  }
  return out;
}

Checkpoint deserialize(const std::vector<std::uint8_t>& bytes) {
  Reader in(bytes);
  const std::uint8_t* magic = in.take(4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("checkpoint: bad magic at offset 0");
  Checkpoint ck;
  ck.version = static_cast<std::uint32_t>(in.uint(4, "version"));
  if (ck.version != Checkpoint::kVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(ck.version) + " at offset 4");
  }
  while (!in.done()) {
    Record r;
    const std::size_t start = in.pos();
    const std::uint64_t len = in.uint(4, "name length");
    if (len > kMaxNameLength) {
      throw FormatError("checkpoint: implausible name length at offset " + std::to_string(start));
    }
    const std::uint8_t* name = in.take(len, "name");
    r.name.assign(name, name + len);
    const std::size_t dtype_at = in.pos();
    const std::uint64_t code = in.uint(1, "dtype");
    if (code > static_cast<std::uint64_t>(DType::i64)) {
      throw FormatError("checkpoint: unknown dtype " + std::to_string(code) + " at offset " +
                        std::to_string(dtype_at));
    }
    r.dtype = static_cast<DType>(code);
    const std::uint64_t rank = in.uint(1, "rank");
    for (std::uint64_t d = 0; d < rank; ++d) r.dims.push_back(static_cast<std::uint32_t>(in.uint(4, "dims")));
    const std::size_t payload = r.elements() * dtype_size(r.dtype);
    const std::uint8_t* p = in.take(payload, "payload");
    r.payload.assign(p, p + payload);
    ck.records.push_back(std::move(r));
  }
  return ck;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  const std::vector<std::uint8_t> bytes = serialize(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write checkpoint " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("short write to checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read checkpoint " + path);
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

Checkpoint make_checkpoint(Network& net, const OptimState& optim, const RunConfig& cfg, int step) {
  Checkpoint ck;
  const std::string text = cfg.to_text();
  ck.records.push_back(Record::from_u64("meta/step", static_cast<std::uint64_t>(step)));
  ck.records.push_back(Record::from_u64("meta/config_hash", fnv1a64(text)));
  ck.records.push_back(Record::from_text("meta/config", text));
  std::size_t i = 0;
  net.for_each_param([&](const std::string& name, Tensor4& t) {
    ck.records.push_back(Record::from_tensor("param/" + name, t));
    if (i < optim.velocity.size()) {
      ck.records.push_back(Record::from_tensor("optim/velocity/" + name, optim.velocity[i]));
    }
    ++i;
  });
  return ck;
}

RestoredRun restore(const Checkpoint& ckpt) {
  const std::string text = ckpt.at("meta/config").to_text();
  if (fnv1a64(text) != ckpt.at("meta/config_hash").to_u64()) {
    throw FormatError("checkpoint: config hash does not match stored config");
  }
  RestoredRun run{RunConfig::parse(text), {}, {}, 0};
  run.net = Network::build(run.config.train);
  run.step = static_cast<int>(ckpt.at("meta/step").to_u64());
  const TrainConfig& t = run.config.train;
  run.optim.momentum = t.momentum;
  run.optim.weight_decay = t.weight_decay;
  bool has_velocity = true;
  std::vector<Tensor4> velocity;
  run.net.for_each_param([&](const std::string& name, Tensor4& p) {
    Tensor4 loaded = ckpt.at("param/" + name).to_tensor();
    if (!(loaded.shape() == p.shape())) {
      throw FormatError("checkpoint: parameter '" + name + "' has shape " + loaded.shape().str() +
                        ", network expects " + p.shape().str());
    }
    std::copy(loaded.data().begin(), loaded.data().end(), p.data().begin());
    if (const Record* v = ckpt.find("optim/velocity/" + name)) {
      velocity.push_back(v->to_tensor());
    } else {
      has_velocity = false;
    }
  });
  if (has_velocity) run.optim.velocity = std::move(velocity);
  return run;
}

}  // namespace cdon
