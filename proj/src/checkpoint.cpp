#include "ps/checkpoint.hpp"

#include <cstring>
#include <bit>
#include <fstream>
#include <map>

namespace ps {

namespace {

constexpr char kMagic[4] = {'P', 'S', 'E', 'G'};

void put_u32(std::ostream& out, uint32_t v) {
  uint8_t b[4] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8),
                  static_cast<uint8_t>(v >> 16), static_cast<uint8_t>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, uint64_t v) {
  uint8_t b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<uint8_t>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

uint32_t get_u32(std::istream& in) {
  uint8_t b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  PS_CHECK(in.gcount() == 4, "checkpoint: truncated u32");
  return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
         static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

uint64_t get_u64(std::istream& in) {
  uint8_t b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  PS_CHECK(in.gcount() == 8, "checkpoint: truncated u64");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

}  // namespace

void save_checkpoint(const std::string& path, const ParamList& tensors) {
  std::ofstream out(path, std::ios::binary);
  PS_CHECK(out.good(), "checkpoint: cannot write " << path);
  out.write(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  for (const NamedParam& p : tensors) {
    put_u32(out, static_cast<uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    out.put(p.tensor.dtype() == DType::kF32 ? 0 : 1);
    const Shape& s = p.tensor.shape();
    put_u32(out, static_cast<uint32_t>(s.size()));
    for (int64_t d : s) put_u64(out, static_cast<uint64_t>(d));
    dispatch_dtype(p.tensor.dtype(), [&](auto tag) {
      using T = decltype(tag);
      out.write(reinterpret_cast<const char*>(p.tensor.data<T>()),
                static_cast<std::streamsize>(p.tensor.numel() * sizeof(T)));
    });
  }
  PS_CHECK(out.good(), "checkpoint: short write to " << path);
}

namespace {

struct Record {
  DType dtype;
  Shape shape;
  std::vector<char> raw;
};

std::map<std::string, Record> read_records(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  PS_CHECK(in.good(), "checkpoint: cannot read " << path);
  char magic[4];
  in.read(magic, 4);
  PS_CHECK(in.gcount() == 4 && std::memcmp(magic, kMagic, 4) == 0,
           "checkpoint: bad magic bytes in " << path);
  uint32_t version = get_u32(in);
  PS_CHECK(version == kCheckpointVersion,
           "checkpoint: unsupported format version " << version);
  std::map<std::string, Record> records;
  while (in.peek() != EOF) {
    uint32_t nlen = get_u32(in);
    std::string name(nlen, '\0');
    in.read(name.data(), nlen);
    PS_CHECK(in.gcount() == static_cast<std::streamsize>(nlen), "checkpoint: truncated name");
    int tagb = in.get();
    PS_CHECK(tagb == 0 || tagb == 1, "checkpoint: bad dtype tag for " << name);
    Record rec;
    rec.dtype = tagb == 0 ? DType::kF32 : DType::kF64;
    uint32_t rank = get_u32(in);
    PS_CHECK(rank <= 8, "checkpoint: implausible rank for " << name);
    int64_t numel = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      int64_t d = static_cast<int64_t>(get_u64(in));
      rec.shape.push_back(d);
      numel *= d;
    }
    rec.raw.resize(static_cast<size_t>(numel) * dtype_size(rec.dtype));
    in.read(rec.raw.data(), static_cast<std::streamsize>(rec.raw.size()));
    PS_CHECK(in.gcount() == static_cast<std::streamsize>(rec.raw.size()),
             "checkpoint: truncated data for " << name);
    records.emplace(std::move(name), std::move(rec));
  }
  return records;
}

}  // namespace

void load_checkpoint(const std::string& path, const ParamList& tensors, bool strict) {
  std::map<std::string, Record> records = read_records(path);
  size_t used = 0;
  for (const NamedParam& p : tensors) {
    auto it = records.find(p.name);
    if (it == records.end()) {
      PS_CHECK(!strict, "checkpoint: missing tensor '" << p.name << "' (strict load)");
      continue;
    }
    const Record& rec = it->second;
    PS_CHECK(rec.shape == p.tensor.shape(),
             "checkpoint: shape mismatch for '" << p.name << "': stored "
                                                << shape_str(rec.shape) << " vs model "
                                                << shape_str(p.tensor.shape()));
    int64_t n = p.tensor.numel();
    Storage& dst = p.tensor.impl()->value;
    if (rec.dtype == DType::kF32) {
      const float* src = reinterpret_cast<const float*>(rec.raw.data());
      for (int64_t i = 0; i < n; ++i) dst.set(i, static_cast<double>(src[i]));
    } else {
      const double* src = reinterpret_cast<const double*>(rec.raw.data());
      for (int64_t i = 0; i < n; ++i) dst.set(i, src[i]);
    }
    ++used;
  }
  if (strict)
    PS_CHECK(used == records.size(), "checkpoint: " << records.size() - used
                                                    << " stored tensors not consumed (strict load)");
}

std::vector<std::string> checkpoint_names(const std::string& path) {
  std::vector<std::string> names;
  for (auto& [name, rec] : read_records(path)) names.push_back(name);
  return names;
}

}  // namespace ps
