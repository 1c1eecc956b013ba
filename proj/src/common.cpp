#include "nst/common.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace nst {

uint64_t fnv1a64(std::string_view s, uint64_t state) {
  for (unsigned char c : s) {
    state ^= c;
    state *= 0x100000001b3ull;
  }
  return state;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) fail("read error on file: " + path);
  return ss.str();
}

void write_file(const std::string& path, std::string_view content) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(p.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail("cannot open file for writing: " + path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) fail("write error on file: " + path);
}

bool file_exists(const std::string& path) {
  std::error_code ec;
  return std::filesystem::exists(path, ec);
}

std::string lowercase_ascii(std::string s) {
  for (char& c : s) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return s;
}

namespace rng {

uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

uint64_t derive(uint64_t seed, std::string_view tag, uint64_t a, uint64_t b) {
  uint64_t s = seed ^ fnv1a64(tag);
  uint64_t h = splitmix64(s);
  s ^= a * 0x9e3779b97f4a7c15ull + 0x632be59bd9b4e019ull;
  h ^= splitmix64(s);
  s ^= b * 0xff51afd7ed558ccdull + 0x2545f4914f6cdd1dull;
  h ^= splitmix64(s);
  return h;
}

double Engine::normal() {
  // Box-Muller; the second coordinate is discarded to keep the stream layout
  // independent of call patterns.
  double u1 = uniform();
  double u2 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

size_t Engine::index(size_t n) {
  if (n == 0) fail("rng::Engine::index called with n = 0");
  uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  uint64_t x = gen_();
  while (x >= limit) x = gen_();
  return static_cast<size_t>(x % n);
}

}  // namespace rng

}  // namespace nst
