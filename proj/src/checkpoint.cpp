#include "woundformer/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <sstream>

#include "woundformer/errors.hpp"

namespace woundformer {

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    u64(s.size());
    out_.append(s);
  }
  void raw(std::string_view s) { out_.append(s); }
  void doubles(const std::vector<double>& v) {
    for (double d : v) f64(d);
  }
  void tensors(const std::vector<StoredTensor>& ts) {
    u64(ts.size());
    for (const auto& t : ts) {
      str(t.name);
      u64(t.shape.size());
      for (Index e : t.shape) u64(static_cast<std::uint64_t>(e));
      doubles(t.data);
    }
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(in_[pos_++]);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint64_t n = count(1);
    std::string s(in_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s(in_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::vector<double> doubles(std::uint64_t n) {
    need(n * 8);
    std::vector<double> v(n);
    for (auto& d : v) d = f64();
    return v;
  }
  /// Length prefix, checked against the bytes left at `min_bytes` per item.
  std::uint64_t count(std::uint64_t min_bytes) {
    const std::uint64_t n = u64();
    if (min_bytes > 0 && n > (in_.size() - pos_) / min_bytes) throw FormatError("checkpoint: length field overruns file");
    return n;
  }
  std::vector<StoredTensor> tensors() {
    std::vector<StoredTensor> ts(count(16));
    for (auto& t : ts) {
      t.name = str();
      t.shape.resize(count(8));
      for (auto& e : t.shape) e = static_cast<Index>(u64());
      t.data = doubles(static_cast<std::uint64_t>(numel(t.shape)));
    }
    return ts;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > in_.size() - pos_) throw FormatError("checkpoint: truncated");
  }
  std::string_view in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& c) {
  Writer w;
  w.raw("WFCK");
  w.u32(Checkpoint::kVersion);
  w.str(c.model_config);
  w.tensors(c.parameters);
  w.tensors(c.buffers);
  w.tensors(c.best_parameters);
  w.tensors(c.best_buffers);

  w.u64(static_cast<std::uint64_t>(c.adam.step));
  w.f64(c.adam.beta1);
  w.f64(c.adam.beta2);
  w.f64(c.adam.eps);
  w.u64(c.adam.m.size());
  for (std::size_t i = 0; i < c.adam.m.size(); ++i) {
    w.u64(c.adam.m[i].size());
    w.doubles(c.adam.m[i]);
    w.doubles(c.adam.v[i]);
  }

  w.u64(static_cast<std::uint64_t>(c.epoch));
  w.f64(c.best_metric);
  w.i64(c.best_epoch);

  w.f64(c.scheduler.lr);
  w.f64(c.scheduler.factor);
  w.f64(c.scheduler.threshold);
  w.f64(c.scheduler.best);
  w.i64(c.scheduler.patience);
  w.i64(c.scheduler.bad_epochs);
  w.i64(c.scheduler.reductions);

  w.i64(c.stopper.patience);
  w.i64(c.stopper.bad_epochs);
  w.f64(c.stopper.threshold);
  w.f64(c.stopper.best);
  w.u8(c.stopped ? 1 : 0);

  w.str(c.rng_state);
  w.u64(c.history.size());
  for (const auto& h : c.history) {
    w.i64(h.epoch);
    w.f64(h.train_loss);
    w.f64(h.val_mean_dsc);
    w.f64(h.lr);
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.raw(4) != "WFCK") throw FormatError("checkpoint: bad magic");
  const std::uint32_t version = r.u32();
  if (version != Checkpoint::kVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint c;
  c.model_config = r.str();
  c.parameters = r.tensors();
  c.buffers = r.tensors();
  c.best_parameters = r.tensors();
  c.best_buffers = r.tensors();

  c.adam.step = static_cast<std::int64_t>(r.u64());
  c.adam.beta1 = r.f64();
  c.adam.beta2 = r.f64();
  c.adam.eps = r.f64();
  const std::uint64_t slots = r.count(8);
  for (std::uint64_t i = 0; i < slots; ++i) {
    const std::uint64_t n = r.count(16);
    c.adam.m.push_back(r.doubles(n));
    c.adam.v.push_back(r.doubles(n));
  }

  c.epoch = static_cast<int>(r.u64());
  c.best_metric = r.f64();
  c.best_epoch = static_cast<int>(r.i64());

  c.scheduler.lr = r.f64();
  c.scheduler.factor = r.f64();
  c.scheduler.threshold = r.f64();
  c.scheduler.best = r.f64();
  c.scheduler.patience = static_cast<int>(r.i64());
  c.scheduler.bad_epochs = static_cast<int>(r.i64());
  c.scheduler.reductions = static_cast<int>(r.i64());

  c.stopper.patience = static_cast<int>(r.i64());
  c.stopper.bad_epochs = static_cast<int>(r.i64());
  c.stopper.threshold = r.f64();
  c.stopper.best = r.f64();
  c.stopped = r.u8() != 0;

  c.rng_state = r.str();
  c.history.resize(r.count(32));
  for (auto& h : c.history) {
    h.epoch = static_cast<int>(r.i64());
    h.train_loss = r.f64();
    h.val_mean_dsc = r.f64();
    h.lr = r.f64();
  }
  if (!r.done()) throw FormatError("checkpoint: trailing bytes");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  try {
    return decode_checkpoint(os.str());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::vector<StoredTensor> snapshot(const std::vector<NamedTensor>& tensors) {
  std::vector<StoredTensor> out;
  out.reserve(tensors.size());
  for (const auto& t : tensors) {
    const auto d = t.tensor.data();
    out.push_back({t.name, t.tensor.shape(), std::vector<double>(d.begin(), d.end())});
  }
  return out;
}

void restore(std::vector<NamedTensor>& tensors, const std::vector<StoredTensor>& stored) {
  if (tensors.size() != stored.size()) {
    throw ShapeError("checkpoint holds " + std::to_string(stored.size()) + " tensors, model expects " +
                     std::to_string(tensors.size()));
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (tensors[i].name != stored[i].name || tensors[i].tensor.shape() != stored[i].shape) {
      throw ShapeError("checkpoint tensor " + stored[i].name + " " + to_string(stored[i].shape) +
                       " does not match model tensor " + tensors[i].name + " " +
                       to_string(tensors[i].tensor.shape()));
    }
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    auto dst = tensors[i].tensor.mutable_data();
    std::copy(stored[i].data.begin(), stored[i].data.end(), dst.begin());
  }
}

}  // namespace woundformer
