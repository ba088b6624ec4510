#pragma once

// NumPy .npy arrays and .npz archives (zip of .npy members). Writing uses
// stored members with fixed timestamps so equal contents give equal bytes.
// Reading accepts stored and deflated members, including zip64 sizes.

#include <cstdint>
#include <string>
#include <vector>

namespace protovae::npz {

struct Array {
  std::string dtype;  // numpy descr, e.g. "<f4", "|u1", "<i8"
  std::vector<std::int64_t> shape;
  std::vector<std::uint8_t> bytes;  // C order, little endian

  std::size_t count() const;
  std::size_t item_size() const;
  // Converts any supported numeric dtype.
  std::vector<double> as_double() const;
  std::vector<std::int64_t> as_int() const;
};

template <typename T>
Array make_array(const std::vector<T>& values, std::vector<std::int64_t> shape);
Array make_text(const std::string& text);
std::string text_of(const Array& a);

std::vector<std::uint8_t> encode_npy(const Array& a);
Array decode_npy(const std::vector<std::uint8_t>& file);

struct Member {
  std::string name;  // without the .npy suffix
  Array array;
};

void write(const std::string& path, const std::vector<Member>& members);

class Reader {
 public:
  explicit Reader(const std::string& path);
  // Member names without the .npy suffix, in archive order.
  std::vector<std::string> names() const;
  bool contains(const std::string& name) const;
  // With verify_crc false, integrity is left to the caller.
  Array read(const std::string& name, bool verify_crc = true) const;

 private:
  struct Entry {
    std::string name;
    std::uint16_t method = 0;
    std::uint64_t compressed = 0;
    std::uint64_t size = 0;
    std::uint64_t local_offset = 0;
    std::uint32_t crc = 0;
  };
  std::string path_;
  std::vector<Entry> entries_;
};

}  // namespace protovae::npz
