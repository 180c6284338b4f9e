#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace semdepth {

/// One named n-dimensional float32 array.
struct ArrayRecord {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;

  std::size_t count() const {
    std::size_t n = 1;
    for (std::uint32_t d : dims) n *= d;
    return n;
  }
};

/// Ordered collection of named arrays; the on-disk checkpoint payload.
/// Values are stored as float32, so saving quantizes — callers that need a
/// resumed run to follow the in-process trajectory bit for bit must also
/// round their live parameters through float at save time.
struct ArrayStore {
  std::vector<ArrayRecord> arrays;

  const ArrayRecord* find(const std::string& name) const {
    for (const auto& a : arrays) {
      if (a.name == name) return &a;
    }
    return nullptr;
  }

  const ArrayRecord& require(const std::string& name) const {
    const ArrayRecord* a = find(name);
    if (!a) throw std::runtime_error("checkpoint: missing array '" + name + "'");
    return *a;
  }

  void add(std::string name, std::vector<std::uint32_t> dims, std::vector<float> values) {
    ArrayRecord rec;
    rec.name = std::move(name);
    rec.dims = std::move(dims);
    if (rec.name.empty() || rec.name.size() > 0xFFFF) {
      throw std::invalid_argument("ArrayStore: bad array name length");
    }
    if (rec.dims.empty() || rec.dims.size() > 255) {
      throw std::invalid_argument("ArrayStore: need 1..255 dims for '" + rec.name + "'");
    }
    if (find(rec.name)) {
      throw std::invalid_argument("ArrayStore: duplicate array '" + rec.name + "'");
    }
    rec.values = std::move(values);
    if (rec.values.size() != rec.count()) {
      throw std::invalid_argument("ArrayStore: dims/value count mismatch for '" + rec.name + "'");
    }
    arrays.push_back(std::move(rec));
  }

  void add_doubles(std::string name, std::vector<std::uint32_t> dims,
                   const std::vector<double>& values) {
    std::vector<float> f(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) f[i] = static_cast<float>(values[i]);
    add(std::move(name), std::move(dims), std::move(f));
  }
};

inline std::vector<double> to_doubles(const ArrayRecord& rec) {
  return {rec.values.begin(), rec.values.end()};
}

namespace detail {

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

struct ByteReader {
  const std::uint8_t* p;
  std::size_t remaining;
  std::string path;

  void need(std::size_t n) const {
    if (remaining < n) throw std::runtime_error("checkpoint '" + path + "' is truncated");
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(p[0] | (p[1] << 8));
    p += 2;
    remaining -= 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    p += 4;
    remaining -= 4;
    return v;
  }
  void bytes(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, p, n);
    p += n;
    remaining -= n;
  }
};

}  // namespace detail

inline std::string serialize_array_store(const ArrayStore& store) {
  std::string out;
  out += "SDCP";
  detail::put_u32(out, 1);  // format version
  detail::put_u32(out, static_cast<std::uint32_t>(store.arrays.size()));
  for (const ArrayRecord& a : store.arrays) {
    detail::put_u16(out, static_cast<std::uint16_t>(a.name.size()));
    out += a.name;
    out.push_back(static_cast<char>(a.dims.size()));
    for (std::uint32_t d : a.dims) detail::put_u32(out, d);
  }
  for (const ArrayRecord& a : store.arrays) {
    for (float v : a.values) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      detail::put_u32(out, bits);
    }
  }
  return out;
}

inline ArrayStore deserialize_array_store(const std::string& bytes, const std::string& path) {
  detail::ByteReader r{reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size(), path};
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, "SDCP", 4) != 0) {
    throw std::runtime_error("'" + path + "' is not a checkpoint file (bad magic)");
  }
  const std::uint32_t version = r.u32();
  if (version != 1) {
    throw std::runtime_error("'" + path + "' has unsupported checkpoint version " +
                             std::to_string(version));
  }
  const std::uint32_t count = r.u32();
  ArrayStore store;
  store.arrays.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    ArrayRecord& a = store.arrays[i];
    const std::uint16_t name_len = r.u16();
    a.name.resize(name_len);
    r.bytes(a.name.data(), name_len);
    r.need(1);
    const int ndim = *r.p;
    r.p += 1;
    r.remaining -= 1;
    if (ndim < 1) throw std::runtime_error("'" + path + "': zero-dim array '" + a.name + "'");
    a.dims.resize(ndim);
    for (int d = 0; d < ndim; ++d) a.dims[d] = r.u32();
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    ArrayRecord& a = store.arrays[i];
    const std::size_t n = a.count();
    if (n > (1u << 30)) throw std::runtime_error("'" + path + "': array '" + a.name + "' too big");
    a.values.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      std::uint32_t bits = r.u32();
      std::memcpy(&a.values[k], &bits, 4);
    }
  }
  if (r.remaining != 0) {
    throw std::runtime_error("'" + path + "' has trailing bytes after checkpoint payload");
  }
  return store;
}

inline void save_array_store(const std::string& path, const ArrayStore& store) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  const std::string bytes = serialize_array_store(store);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

inline ArrayStore load_array_store(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_array_store(bytes, path);
}

}  // namespace semdepth
