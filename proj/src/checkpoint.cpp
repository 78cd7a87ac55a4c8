#include "sfanet/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <set>

namespace sfanet {

namespace {

constexpr char kMagic[4] = {'S', 'F', 'A', 'C'};
constexpr const char* kOptimizerPrefix = "optimizer.";

template <typename T>
T to_little_endian(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    std::reverse(bytes, bytes + sizeof(T));
    std::memcpy(&v, bytes, sizeof(T));
  }
  return v;
}

class Writer {
 public:
  explicit Writer(std::vector<char>& out) : out_(out) {}
  template <typename T>
  void put(T v) {
    v = to_little_endian(v);
    const auto* p = reinterpret_cast<const char*>(&v);
    out_.insert(out_.end(), p, p + sizeof(T));
  }
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    out_.insert(out_.end(), c, c + n);
  }

 private:
  std::vector<char>& out_;
};

class Reader {
 public:
  Reader(const std::vector<char>& in, const std::filesystem::path& path) : in_(in), path_(path) {}
  template <typename T>
  T get() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return to_little_endian(v);
  }
  const char* take(std::size_t n) {
    if (in_.size() - pos_ < n) throw CheckpointError("checkpoint " + path_.string() + " is truncated");
    const char* p = in_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  const std::vector<char>& in_;
  const std::filesystem::path& path_;
  std::size_t pos_ = 0;
};

template <typename Scalar>
CheckpointRecord make_record(const std::string& name, const Shape& shape, const Buffer<Scalar>& values) {
  CheckpointRecord r{name, shape, std::vector<float>(static_cast<std::size_t>(values.size()))};
  for (Index i = 0; i < values.size(); ++i) r.values[static_cast<std::size_t>(i)] = static_cast<float>(values[i]);
  return r;
}

template <typename Scalar>
Buffer<Scalar> to_buffer(const CheckpointRecord& r) {
  Buffer<Scalar> b(static_cast<Index>(r.values.size()));
  for (std::size_t i = 0; i < r.values.size(); ++i) b[static_cast<Index>(i)] = static_cast<Scalar>(r.values[i]);
  return b;
}

// Destination for one model-side record name.
template <typename Scalar>
struct Slot {
  Shape shape;
  Buffer<Scalar>* buffer = nullptr;
  std::int64_t* counter = nullptr;
};

template <typename Scalar>
std::map<std::string, Slot<Scalar>> model_slots(Model<Scalar>& model) {
  std::map<std::string, Slot<Scalar>> slots;
  for (auto& p : model.parameters()) slots[p.name] = {p.tensor.shape(), &p.tensor.data(), nullptr};
  for (auto& bn : model.batch_norms()) {
    const Index c = bn.state->running_mean.size();
    slots[bn.name + ".running_mean"] = {{c}, &bn.state->running_mean, nullptr};
    slots[bn.name + ".running_var"] = {{c}, &bn.state->running_var, nullptr};
    slots[bn.name + ".num_batches_tracked"] = {{1}, nullptr, &bn.state->num_batches_tracked};
  }
  return slots;
}

}  // namespace

void write_checkpoint_records(const std::filesystem::path& path, const std::vector<CheckpointRecord>& records) {
  std::vector<char> bytes;
  Writer w(bytes);
  w.bytes(kMagic, 4);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    if (static_cast<Index>(r.values.size()) != shape_numel(r.shape)) {
      throw CheckpointError("record " + r.name + " payload does not match shape " + shape_string(r.shape));
    }
    w.put<std::uint32_t>(static_cast<std::uint32_t>(r.name.size()));
    w.bytes(r.name.data(), r.name.size());
    w.put<std::uint32_t>(static_cast<std::uint32_t>(r.shape.size()));
    for (Index e : r.shape) w.put<std::uint64_t>(static_cast<std::uint64_t>(e));
    for (float v : r.values) w.put<float>(v);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing " + path.string());
}

std::vector<CheckpointRecord> read_checkpoint_records(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(bytes, path);
  if (std::memcmp(r.take(4), kMagic, 4) != 0) {
    throw CheckpointError("checkpoint " + path.string() + " has bad magic bytes");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint " + path.string() + " has unsupported version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>();
  std::vector<CheckpointRecord> records;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointRecord rec;
    const auto name_len = r.get<std::uint32_t>();
    rec.name.assign(r.take(name_len), name_len);
    const auto rank = r.get<std::uint32_t>();
    std::uint64_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto e = r.get<std::uint64_t>();
      if (e != 0 && numel > r.remaining() / e) {
        throw CheckpointError("record " + rec.name + " in " + path.string() + " claims more data than the file holds");
      }
      numel *= e;
      rec.shape.push_back(static_cast<Index>(e));
    }
    if (numel > r.remaining() / sizeof(float)) {
      throw CheckpointError("checkpoint " + path.string() + " is truncated in record " + rec.name);
    }
    rec.values.resize(numel);
    for (auto& v : rec.values) v = r.get<float>();
    records.push_back(std::move(rec));
  }
  if (r.remaining() != 0) throw CheckpointError("checkpoint " + path.string() + " has trailing bytes");
  return records;
}

template <typename Scalar>
void save_checkpoint(const Model<Scalar>& model, const AdamState<Scalar>* optimizer,
                     const std::filesystem::path& path) {
  std::vector<CheckpointRecord> records;
  for (const auto& p : model.parameters()) records.push_back(make_record(p.name, p.tensor.shape(), p.tensor.data()));
  for (const auto& bn : model.batch_norms()) {
    const Index c = bn.state->running_mean.size();
    records.push_back(make_record(bn.name + ".running_mean", {c}, bn.state->running_mean));
    records.push_back(make_record(bn.name + ".running_var", {c}, bn.state->running_var));
    records.push_back(CheckpointRecord{bn.name + ".num_batches_tracked", {1},
                                       {static_cast<float>(bn.state->num_batches_tracked)}});
  }
  if (optimizer) {
    records.push_back(CheckpointRecord{std::string(kOptimizerPrefix) + "step", {1},
                                       {static_cast<float>(optimizer->step)}});
    records.push_back(CheckpointRecord{std::string(kOptimizerPrefix) + "batches", {1},
                                       {static_cast<float>(optimizer->batches)}});
    for (const auto& [name, m] : optimizer->exp_avg) {
      records.push_back(make_record(std::string(kOptimizerPrefix) + "exp_avg." + name, {m.size()}, m));
    }
    for (const auto& [name, v] : optimizer->exp_avg_sq) {
      records.push_back(make_record(std::string(kOptimizerPrefix) + "exp_avg_sq." + name, {v.size()}, v));
    }
  }
  write_checkpoint_records(path, records);
}

template <typename Scalar>
void load_checkpoint(const std::filesystem::path& path, Model<Scalar>& model, bool strict,
                     AdamState<Scalar>* optimizer) {
  const auto records = read_checkpoint_records(path);
  auto slots = model_slots(model);

  // Validate everything before the first write.
  std::set<std::string> seen;
  std::vector<std::pair<const CheckpointRecord*, Slot<Scalar>*>> plan;
  std::vector<const CheckpointRecord*> optimizer_records;
  for (const auto& rec : records) {
    if (!seen.insert(rec.name).second) throw CheckpointError("duplicate record " + rec.name + " in " + path.string());
    if (rec.name.rfind(kOptimizerPrefix, 0) == 0) {
      optimizer_records.push_back(&rec);
      continue;
    }
    auto it = slots.find(rec.name);
    if (it == slots.end()) {
      if (strict) throw CheckpointError("unexpected parameter " + rec.name + " in " + path.string());
      continue;
    }
    if (rec.shape != it->second.shape) {
      throw CheckpointError("shape mismatch for parameter " + rec.name + ": checkpoint " + shape_string(rec.shape) +
                            ", model " + shape_string(it->second.shape));
    }
    plan.emplace_back(&rec, &it->second);
  }
  if (strict) {
    for (const auto& [name, slot] : slots) {
      if (!seen.count(name)) throw CheckpointError("missing parameter " + name + " in " + path.string());
    }
  }

  std::optional<AdamState<Scalar>> restored;
  if (optimizer && !optimizer_records.empty()) {
    restored.emplace();
    bool have_batches = false;
    const std::string avg = std::string(kOptimizerPrefix) + "exp_avg.";
    const std::string avg_sq = std::string(kOptimizerPrefix) + "exp_avg_sq.";
    for (const auto* rec : optimizer_records) {
      if (rec->name == std::string(kOptimizerPrefix) + "step") {
        restored->step = static_cast<std::int64_t>(rec->values.at(0));
      } else if (rec->name == std::string(kOptimizerPrefix) + "batches") {
        restored->batches = static_cast<std::int64_t>(rec->values.at(0));
        have_batches = true;
      } else if (rec->name.rfind(avg_sq, 0) == 0) {
        restored->exp_avg_sq[rec->name.substr(avg_sq.size())] = to_buffer<Scalar>(*rec);
      } else if (rec->name.rfind(avg, 0) == 0) {
        restored->exp_avg[rec->name.substr(avg.size())] = to_buffer<Scalar>(*rec);
      }
    }
    if (!have_batches) restored->batches = restored->step;
    for (const auto& [name, m] : restored->exp_avg) {
      auto it = slots.find(name);
      if (it == slots.end() || it->second.buffer == nullptr || it->second.buffer->size() != m.size()) {
        throw CheckpointError("optimizer state for " + name + " does not match the model");
      }
    }
  }

  for (auto& [rec, slot] : plan) {
    if (slot->counter) {
      *slot->counter = static_cast<std::int64_t>(rec->values.at(0));
    } else {
      *slot->buffer = to_buffer<Scalar>(*rec);
    }
  }
  if (restored) *optimizer = std::move(*restored);
}

template void save_checkpoint(const Model<float>&, const AdamState<float>*, const std::filesystem::path&);
template void save_checkpoint(const Model<double>&, const AdamState<double>*, const std::filesystem::path&);
template void load_checkpoint(const std::filesystem::path&, Model<float>&, bool, AdamState<float>*);
template void load_checkpoint(const std::filesystem::path&, Model<double>&, bool, AdamState<double>*);

}  // namespace sfanet
