#include "protovae/keyvalue.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace protovae::kv {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const Entry& e, const char* expected) {
  throw std::invalid_argument("line " + std::to_string(e.line) + ": value '" + e.value + "' for " + e.key +
                              " is not " + expected);
}

template <typename T>
T parse_number(const Entry& e, const char* expected) {
  T v{};
  const char* first = e.value.data();
  const char* last = first + e.value.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) bad_value(e, expected);
  return v;
}

}  // namespace

std::vector<Entry> parse(const std::string& text) {
  std::vector<Entry> out;
  std::istringstream in(text);
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const std::string s = trim(raw);
    if (s.empty() || s[0] == '#') continue;
    const auto eq = s.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("line " + std::to_string(line) + ": expected 'key = value', got '" + s + "'");
    }
    Entry e{trim(s.substr(0, eq)), trim(s.substr(eq + 1)), line};
    if (e.key.empty()) throw std::invalid_argument("line " + std::to_string(line) + ": empty key");
    out.push_back(std::move(e));
  }
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int to_int(const Entry& e) { return parse_number<int>(e, "an integer"); }
std::uint64_t to_u64(const Entry& e) { return parse_number<std::uint64_t>(e, "a non-negative integer"); }
double to_double(const Entry& e) { return parse_number<double>(e, "a number"); }

bool to_bool(const Entry& e) {
  if (e.value == "true" || e.value == "1") return true;
  if (e.value == "false" || e.value == "0") return false;
  bad_value(e, "true/false");
}

std::vector<int> to_int_list(const Entry& e) {
  std::vector<int> out;
  std::istringstream in(e.value);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(to_int(Entry{e.key, trim(item), e.line}));
  if (out.empty()) bad_value(e, "a comma-separated integer list");
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

void reject_unknown(const std::string& key, const std::vector<std::string>& valid, const std::string& what) {
  if (std::find(valid.begin(), valid.end(), key) != valid.end()) return;
  std::string list;
  for (const auto& k : valid) list += (list.empty() ? "" : ", ") + k;
  throw std::invalid_argument("unknown " + what + " key '" + key + "'; valid keys: " + list);
}

}  // namespace protovae::kv
