#include "protovae/npz.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <regex>
#include <stdexcept>

namespace protovae::npz {
namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error("npz: " + msg); }

template <typename T>
constexpr const char* descr_of() {
  if constexpr (std::is_same_v<T, float>) return "<f4";
  else if constexpr (std::is_same_v<T, double>) return "<f8";
  else if constexpr (std::is_same_v<T, std::uint8_t>) return "|u1";
  else if constexpr (std::is_same_v<T, std::int32_t>) return "<i4";
  else if constexpr (std::is_same_v<T, std::int64_t>) return "<i8";
  else if constexpr (std::is_same_v<T, std::uint64_t>) return "<u8";
}

template <typename T>
T load_le(const std::uint8_t* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

std::uint16_t u16(const std::uint8_t* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }
std::uint32_t u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
std::uint64_t u64(const std::uint8_t* p) { return u32(p) | (static_cast<std::uint64_t>(u32(p + 4)) << 32); }

void put16(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(v & 0xff);
  out.push_back((v >> 8) & 0xff);
}
void put32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  put16(out, v & 0xffff);
  put16(out, v >> 16);
}

// Converts element i of an array with the given descr.
template <typename Out>
Out element(const std::string& dtype, const std::uint8_t* p) {
  const char kind = dtype[1];
  const int width = std::stoi(dtype.substr(2));
  if (kind == 'f' && width == 4) return static_cast<Out>(load_le<float>(p));
  if (kind == 'f' && width == 8) return static_cast<Out>(load_le<double>(p));
  if ((kind == 'u' || kind == 'b') && width == 1) return static_cast<Out>(*p);
  if (kind == 'i' && width == 1) return static_cast<Out>(static_cast<std::int8_t>(*p));
  if (kind == 'u' && width == 2) return static_cast<Out>(load_le<std::uint16_t>(p));
  if (kind == 'i' && width == 2) return static_cast<Out>(load_le<std::int16_t>(p));
  if (kind == 'u' && width == 4) return static_cast<Out>(load_le<std::uint32_t>(p));
  if (kind == 'i' && width == 4) return static_cast<Out>(load_le<std::int32_t>(p));
  if (kind == 'u' && width == 8) return static_cast<Out>(load_le<std::uint64_t>(p));
  if (kind == 'i' && width == 8) return static_cast<Out>(load_le<std::int64_t>(p));
  fail("unsupported dtype " + dtype);
}

void check_dtype(const std::string& d) {
  static const std::regex ok(R"([<|=][fiub][1248])");
  if (!std::regex_match(d, ok)) fail("unsupported dtype '" + d + "' (only little-endian numeric arrays)");
}

std::vector<std::uint8_t> read_range(std::ifstream& in, std::uint64_t offset, std::uint64_t n) {
  std::vector<std::uint8_t> buf(n);
  in.seekg(static_cast<std::streamoff>(offset));
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
  if (!in) fail("truncated archive");
  return buf;
}

}  // namespace

std::size_t Array::count() const {
  std::size_t n = 1;
  for (auto s : shape) n *= static_cast<std::size_t>(s);
  return n;
}

std::size_t Array::item_size() const { return static_cast<std::size_t>(std::stoi(dtype.substr(2))); }

std::vector<double> Array::as_double() const {
  check_dtype(dtype);
  std::vector<double> out(count());
  const std::size_t w = item_size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = element<double>(dtype, bytes.data() + i * w);
  return out;
}

std::vector<std::int64_t> Array::as_int() const {
  check_dtype(dtype);
  std::vector<std::int64_t> out(count());
  const std::size_t w = item_size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = element<std::int64_t>(dtype, bytes.data() + i * w);
  return out;
}

template <typename T>
Array make_array(const std::vector<T>& values, std::vector<std::int64_t> shape) {
  Array a;
  a.dtype = descr_of<T>();
  a.shape = std::move(shape);
  if (a.count() != values.size()) fail("shape does not match value count");
  a.bytes.resize(values.size() * sizeof(T));
  if (!values.empty()) std::memcpy(a.bytes.data(), values.data(), a.bytes.size());
  return a;
}

Array make_text(const std::string& text) {
  return make_array(std::vector<std::uint8_t>(text.begin(), text.end()), {static_cast<std::int64_t>(text.size())});
}

std::string text_of(const Array& a) {
  if (a.dtype != "|u1") fail("text member must be |u1, got " + a.dtype);
  return std::string(a.bytes.begin(), a.bytes.end());
}

std::vector<std::uint8_t> encode_npy(const Array& a) {
  std::string header = "{'descr': '" + a.dtype + "', 'fortran_order': False, 'shape': (";
  for (std::size_t i = 0; i < a.shape.size(); ++i) {
    header += std::to_string(a.shape[i]);
    if (a.shape.size() == 1 || i + 1 < a.shape.size()) header += ",";
    if (i + 1 < a.shape.size()) header += " ";
  }
  header += "), }";
  // Magic (6) + version (2) + length (2) + header + '\n' is padded to 64 bytes.
  const std::size_t total = 10 + header.size() + 1;
  header.append((64 - total % 64) % 64, ' ');
  header += '\n';
  std::vector<std::uint8_t> out = {0x93, 'N', 'U', 'M', 'P', 'Y', 1, 0};
  put16(out, static_cast<std::uint32_t>(header.size()));
  out.insert(out.end(), header.begin(), header.end());
  out.insert(out.end(), a.bytes.begin(), a.bytes.end());
  return out;
}

Array decode_npy(const std::vector<std::uint8_t>& file) {
  if (file.size() < 10 || file[0] != 0x93 || std::memcmp(file.data() + 1, "NUMPY", 5) != 0) fail("not an npy file");
  const int major = file[6];
  std::size_t header_len = 0;
  std::size_t start = 0;
  if (major == 1) {
    header_len = u16(file.data() + 8);
    start = 10;
  } else if (major == 2 || major == 3) {
    if (file.size() < 12) fail("truncated npy header");
    header_len = u32(file.data() + 8);
    start = 12;
  } else {
    fail("unsupported npy version " + std::to_string(major));
  }
  if (start + header_len > file.size()) fail("truncated npy header");
  const std::string header(file.begin() + start, file.begin() + start + header_len);

  std::smatch m;
  Array a;
  if (!std::regex_search(header, m, std::regex(R"('descr':\s*'([^']+)')"))) fail("npy header lacks descr");
  a.dtype = m[1];
  check_dtype(a.dtype);
  if (std::regex_search(header, m, std::regex(R"('fortran_order':\s*True)"))) fail("fortran-ordered arrays are not supported");
  if (!std::regex_search(header, m, std::regex(R"('shape':\s*\(([^)]*)\))"))) fail("npy header lacks shape");
  const std::string dims = m[1];
  static const std::regex num(R"(\d+)");
  for (auto it = std::sregex_iterator(dims.begin(), dims.end(), num); it != std::sregex_iterator(); ++it) {
    a.shape.push_back(std::stoll(it->str()));
  }
  const std::size_t nbytes = a.count() * a.item_size();
  const std::size_t body = start + header_len;
  if (file.size() - body < nbytes) fail("npy data shorter than its shape");
  a.bytes.assign(file.begin() + body, file.begin() + body + nbytes);
  return a;
}

void write(const std::string& path, const std::vector<Member>& members) {
  std::vector<std::uint8_t> out;
  std::vector<std::uint8_t> central;
  constexpr std::uint32_t kDosDate = (0 << 9) | (1 << 5) | 1;  // 1980-01-01
  for (const auto& mem : members) {
    const std::string name = mem.name + ".npy";
    const auto data = encode_npy(mem.array);
    if (data.size() >= 0xffffffffu || out.size() >= 0xffffffffu) fail("member too large: " + name);
    const auto crc = static_cast<std::uint32_t>(crc32(0L, data.data(), static_cast<uInt>(data.size())));
    const auto offset = static_cast<std::uint32_t>(out.size());
    const auto size = static_cast<std::uint32_t>(data.size());

    put32(out, 0x04034b50);
    put16(out, 20);
    put16(out, 0);
    put16(out, 0);
    put16(out, 0);
    put16(out, kDosDate);
    put32(out, crc);
    put32(out, size);
    put32(out, size);
    put16(out, static_cast<std::uint32_t>(name.size()));
    put16(out, 0);
    out.insert(out.end(), name.begin(), name.end());
    out.insert(out.end(), data.begin(), data.end());

    put32(central, 0x02014b50);
    put16(central, 20);
    put16(central, 20);
    put16(central, 0);
    put16(central, 0);
    put16(central, 0);
    put16(central, kDosDate);
    put32(central, crc);
    put32(central, size);
    put32(central, size);
    put16(central, static_cast<std::uint32_t>(name.size()));
    put16(central, 0);
    put16(central, 0);
    put16(central, 0);
    put16(central, 0);
    put32(central, 0);
    put32(central, offset);
    central.insert(central.end(), name.begin(), name.end());
  }
  const auto cd_offset = static_cast<std::uint32_t>(out.size());
  out.insert(out.end(), central.begin(), central.end());
  put32(out, 0x06054b50);
  put16(out, 0);
  put16(out, 0);
  put16(out, static_cast<std::uint32_t>(members.size()));
  put16(out, static_cast<std::uint32_t>(members.size()));
  put32(out, static_cast<std::uint32_t>(central.size()));
  put32(out, cd_offset);
  put16(out, 0);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail("cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) fail("write failed for " + path);
}

Reader::Reader(const std::string& path) : path_(path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open " + path);
  in.seekg(0, std::ios::end);
  const auto file_size = static_cast<std::uint64_t>(in.tellg());
  if (file_size < 22) fail(path + " is not a zip archive");
  const std::uint64_t tail_len = std::min<std::uint64_t>(file_size, 22 + 0xffff);
  const auto tail = read_range(in, file_size - tail_len, tail_len);
  std::int64_t eocd = -1;
  for (std::int64_t i = static_cast<std::int64_t>(tail_len) - 22; i >= 0; --i) {
    if (u32(tail.data() + i) == 0x06054b50) {
      eocd = i;
      break;
    }
  }
  if (eocd < 0) fail(path + " is not a zip archive");
  std::uint64_t count = u16(tail.data() + eocd + 10);
  std::uint64_t cd_size = u32(tail.data() + eocd + 12);
  std::uint64_t cd_offset = u32(tail.data() + eocd + 16);
  if (cd_offset == 0xffffffffu || count == 0xffff) {
    // zip64 end-of-central-directory locator precedes the classic record.
    const std::uint64_t loc_pos = file_size - tail_len + eocd - 20;
    const auto loc = read_range(in, loc_pos, 20);
    if (u32(loc.data()) != 0x07064b50) fail("missing zip64 locator in " + path);
    const auto rec = read_range(in, u64(loc.data() + 8), 56);
    if (u32(rec.data()) != 0x06064b50) fail("bad zip64 record in " + path);
    count = u64(rec.data() + 32);
    cd_size = u64(rec.data() + 40);
    cd_offset = u64(rec.data() + 48);
  }
  const auto cd = read_range(in, cd_offset, cd_size);
  std::size_t p = 0;
  for (std::uint64_t e = 0; e < count; ++e) {
    if (p + 46 > cd.size() || u32(cd.data() + p) != 0x02014b50) fail("corrupt central directory in " + path);
    Entry entry;
    entry.method = u16(cd.data() + p + 10);
    entry.crc = u32(cd.data() + p + 16);
    entry.compressed = u32(cd.data() + p + 20);
    entry.size = u32(cd.data() + p + 24);
    const std::size_t name_len = u16(cd.data() + p + 28);
    const std::size_t extra_len = u16(cd.data() + p + 30);
    const std::size_t comment_len = u16(cd.data() + p + 32);
    entry.local_offset = u32(cd.data() + p + 42);
    entry.name.assign(cd.begin() + p + 46, cd.begin() + p + 46 + name_len);
    // zip64 extra field carries whichever of the three values overflowed, in this order.
    std::size_t x = p + 46 + name_len;
    const std::size_t x_end = x + extra_len;
    while (x + 4 <= x_end) {
      const std::uint16_t id = u16(cd.data() + x);
      const std::uint16_t len = u16(cd.data() + x + 2);
      if (id == 0x0001) {
        std::size_t q = x + 4;
        if (entry.size == 0xffffffffu) entry.size = u64(cd.data() + q), q += 8;
        if (entry.compressed == 0xffffffffu) entry.compressed = u64(cd.data() + q), q += 8;
        if (entry.local_offset == 0xffffffffu) entry.local_offset = u64(cd.data() + q);
      }
      x += 4 + len;
    }
    if (entry.name.size() > 4 && entry.name.ends_with(".npy")) entry.name.resize(entry.name.size() - 4);
    entries_.push_back(std::move(entry));
    p += 46 + name_len + extra_len + comment_len;
  }
}

std::vector<std::string> Reader::names() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) out.push_back(e.name);
  return out;
}

bool Reader::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.name == name; });
}

Array Reader::read(const std::string& name, bool verify_crc) const {
  const auto it = std::find_if(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.name == name; });
  if (it == entries_.end()) fail("no member '" + name + "' in " + path_);
  std::ifstream in(path_, std::ios::binary);
  const auto local = read_range(in, it->local_offset, 30);
  if (u32(local.data()) != 0x04034b50) fail("bad local header for " + name);
  const std::uint64_t data_pos = it->local_offset + 30 + u16(local.data() + 26) + u16(local.data() + 28);
  auto raw = read_range(in, data_pos, it->compressed);
  std::vector<std::uint8_t> data;
  if (it->method == 0) {
    data = std::move(raw);
  } else if (it->method == 8) {
    data.resize(it->size);
    z_stream zs{};
    if (inflateInit2(&zs, -MAX_WBITS) != Z_OK) fail("inflate init failed");
    std::uint64_t in_done = 0;
    std::uint64_t out_done = 0;
    int rc = Z_OK;
    // zlib counts are 32-bit; feed large members in slices.
    while (rc != Z_STREAM_END) {
      const auto in_chunk = static_cast<uInt>(std::min<std::uint64_t>(raw.size() - in_done, 1u << 30));
      const auto out_chunk = static_cast<uInt>(std::min<std::uint64_t>(data.size() - out_done, 1u << 30));
      zs.next_in = raw.data() + in_done;
      zs.avail_in = in_chunk;
      zs.next_out = data.data() + out_done;
      zs.avail_out = out_chunk;
      rc = inflate(&zs, Z_NO_FLUSH);
      in_done += in_chunk - zs.avail_in;
      out_done += out_chunk - zs.avail_out;
      if (rc != Z_OK && rc != Z_STREAM_END) {
        inflateEnd(&zs);
        fail("corrupt deflate data in member " + name);
      }
      if (rc == Z_OK && in_chunk == zs.avail_in && out_chunk == zs.avail_out) {
        inflateEnd(&zs);
        fail("truncated deflate data in member " + name);
      }
    }
    inflateEnd(&zs);
    if (out_done != data.size()) fail("size mismatch in member " + name);
  } else {
    fail("unsupported compression method " + std::to_string(it->method) + " for " + name);
  }
  if (!verify_crc) return decode_npy(data);
  uLong crc = crc32(0L, Z_NULL, 0);
  for (std::uint64_t off = 0; off < data.size(); off += 1u << 30) {
    crc = crc32(crc, data.data() + off, static_cast<uInt>(std::min<std::uint64_t>(data.size() - off, 1u << 30)));
  }
  if (static_cast<std::uint32_t>(crc) != it->crc) fail("CRC mismatch in member " + name);
  return decode_npy(data);
}

template Array make_array(const std::vector<float>&, std::vector<std::int64_t>);
template Array make_array(const std::vector<double>&, std::vector<std::int64_t>);
template Array make_array(const std::vector<std::uint8_t>&, std::vector<std::int64_t>);
template Array make_array(const std::vector<std::int32_t>&, std::vector<std::int64_t>);
template Array make_array(const std::vector<std::int64_t>&, std::vector<std::int64_t>);
template Array make_array(const std::vector<std::uint64_t>&, std::vector<std::int64_t>);

}  // namespace protovae::npz
