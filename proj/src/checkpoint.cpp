#include "vipt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

namespace vipt {

namespace {

constexpr char kMagic[8] = {'V', 'I', 'P', 'T', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return v;
  }

  std::string take(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointTruncatedError(std::string("checkpoint truncated while reading ") + what);
    }
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::string checkpoint_bytes(const ParamStore& store) {
  if (!store.materialized()) throw CheckpointError("cannot save a shape-only parameter store");
  std::string head(kMagic, sizeof(kMagic));
  put<std::uint16_t>(head, kCheckpointVersion);
  put<std::uint32_t>(head, static_cast<std::uint32_t>(store.size()));

  std::size_t manifest = head.size();
  for (const auto& e : store) manifest += 4 + e.spec.name.size() + 4 + 8 * e.spec.shape.size() + 1 + 8;

  std::uint64_t offset = manifest;
  for (const auto& e : store) {
    put<std::uint32_t>(head, static_cast<std::uint32_t>(e.spec.name.size()));
    head += e.spec.name;
    put<std::uint32_t>(head, static_cast<std::uint32_t>(e.spec.shape.size()));
    for (std::size_t d : e.spec.shape) put<std::uint64_t>(head, d);
    put<std::uint8_t>(head, e.trainable ? 1 : 0);
    put<std::uint64_t>(head, offset);
    offset += 4 * e.spec.numel();
  }
  head.reserve(offset);
  for (const auto& e : store) {
    for (double v : e.value.values()) put<std::uint32_t>(head, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return head;
}

void save_checkpoint(const ParamStore& store, const std::filesystem::path& path) {
  const std::string bytes = checkpoint_bytes(store);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

ParamStore parse_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (r.take(sizeof(kMagic), "magic") != std::string(kMagic, sizeof(kMagic))) {
    throw CheckpointHeaderError("not a checkpoint (bad magic)");
  }
  const auto version = r.get<std::uint16_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointHeaderError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>("entry count");

  struct Item {
    ParamSpec spec;
    bool trainable;
    std::uint64_t offset;
  };
  std::vector<Item> items;
  std::set<std::string> names;
  for (std::uint32_t i = 0; i < count; ++i) {
    Item it;
    const auto len = r.get<std::uint32_t>("name length");
    if (len == 0 || len > 4096) throw CheckpointHeaderError("implausible entry name length " + std::to_string(len));
    it.spec.name = r.take(len, "entry name");
    if (!names.insert(it.spec.name).second) throw CheckpointHeaderError("duplicate entry '" + it.spec.name + "'");
    const auto rank = r.get<std::uint32_t>("rank");
    if (rank == 0 || rank > 8) throw CheckpointHeaderError("implausible rank for '" + it.spec.name + "'");
    for (std::uint32_t k = 0; k < rank; ++k) {
      const auto d = r.get<std::uint64_t>("dims");
      if (d == 0 || d > (1ull << 32)) throw CheckpointHeaderError("implausible dimension for '" + it.spec.name + "'");
      it.spec.shape.push_back(static_cast<std::size_t>(d));
    }
    const auto flag = r.get<std::uint8_t>("trainable flag");
    if (flag > 1) throw CheckpointHeaderError("bad trainable flag for '" + it.spec.name + "'");
    it.trainable = flag == 1;
    it.offset = r.get<std::uint64_t>("payload offset");
    items.push_back(std::move(it));
  }

  std::uint64_t expected = r.pos();
  for (const auto& it : items) {
    if (it.offset != expected) throw CheckpointHeaderError("payload offset mismatch for '" + it.spec.name + "'");
    expected += 4 * it.spec.numel();
  }
  if (bytes.size() < expected) {
    throw CheckpointTruncatedError("checkpoint truncated: payload needs " + std::to_string(expected) +
                                   " bytes, file has " + std::to_string(bytes.size()));
  }
  if (bytes.size() > expected) throw CheckpointHeaderError("trailing bytes after checkpoint payload");

  ParamStore store;
  for (auto& it : items) {
    Tensor value(it.spec.shape);
    for (std::size_t i = 0; i < value.size(); ++i) {
      std::uint32_t bits = 0;
      for (std::size_t b = 0; b < 4; ++b) {
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[it.offset + 4 * i + b])) << (8 * b);
      }
      value[i] = static_cast<double>(std::bit_cast<float>(bits));
    }
    const std::string name = it.spec.name;
    store.declare(std::move(it.spec));
    store.set_value(name, std::move(value));
    store.at(name).trainable = it.trainable;
  }
  return store;
}

ParamStore load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_file(path)); }

namespace {

void copy_entry(ParamEntry& dst, const ParamEntry& src) {
  if (dst.spec.shape != src.spec.shape) {
    throw CheckpointShapeError("checkpoint entry '" + src.spec.name + "' has shape " + shape_str(src.spec.shape) +
                               ", model expects " + shape_str(dst.spec.shape));
  }
  dst.value = src.value;
}

}  // namespace

void load_into(ParamStore& store, const std::filesystem::path& path) {
  const ParamStore loaded = load_checkpoint(path);
  if (loaded.size() != store.size()) {
    throw CheckpointShapeError("checkpoint has " + std::to_string(loaded.size()) + " entries, model expects " +
                               std::to_string(store.size()));
  }
  for (auto& e : store) {
    if (!loaded.contains(e.spec.name)) throw CheckpointShapeError("checkpoint lacks entry '" + e.spec.name + "'");
    const ParamEntry& src = loaded.at(e.spec.name);
    copy_entry(e, src);
    e.trainable = src.trainable;
  }
}

void load_subset(ParamStore& store, const std::filesystem::path& path) {
  const ParamStore loaded = load_checkpoint(path);
  for (const auto& src : loaded) {
    if (!store.contains(src.spec.name)) {
      throw CheckpointShapeError("checkpoint entry '" + src.spec.name + "' does not exist in the model");
    }
    copy_entry(store.at(src.spec.name), src);
  }
}

}  // namespace vipt
