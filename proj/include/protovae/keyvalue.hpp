#pragma once

// "key = value" text files. Blank lines and lines starting with # are ignored.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace protovae::kv {

struct Entry {
  std::string key;
  std::string value;
  int line = 0;
};

std::vector<Entry> parse(const std::string& text);
std::string read_file(const std::string& path);

int to_int(const Entry& e);
std::uint64_t to_u64(const Entry& e);
double to_double(const Entry& e);
bool to_bool(const Entry& e);
std::vector<int> to_int_list(const Entry& e);  // comma separated

// Shortest text that parses back to the same double.
std::string format_double(double v);

// Throws listing the valid keys when key is not among them.
void reject_unknown(const std::string& key, const std::vector<std::string>& valid, const std::string& what);

}  // namespace protovae::kv
