#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace kbtypo {

// Malformed or missing input files. The CLI maps this to exit code 2.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Transport or protocol failure talking to an out-of-process victim (exit code 3).
struct RemoteError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A single victim query returned an unusable answer. The attack on that
// example is abandoned and counted separately from accuracy.
struct VictimError : RemoteError {
  using RemoteError::RemoteError;
};

// Caller broke an operation's precondition.
struct ContractViolation : std::logic_error {
  using std::logic_error::logic_error;
};

inline bool is_ascii_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

inline bool is_ascii_alnum(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
}

inline bool is_ascii_punct(char c) {
  auto u = static_cast<unsigned char>(c);
  return (u >= 33 && u <= 47) || (u >= 58 && u <= 64) || (u >= 91 && u <= 96) ||
         (u >= 123 && u <= 126);
}

inline char to_lower_ascii(char c) {
  return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

inline std::string to_lower_ascii(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = to_lower_ascii(c);
  return out;
}

inline bool has_alnum(std::string_view s) {
  for (char c : s)
    if (is_ascii_alnum(c)) return true;
  return false;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && is_ascii_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_ascii_space(s.back())) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      out.push_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

// Byte range [begin, end) of one whitespace-delimited word.
struct Chunk {
  std::size_t begin = 0;
  std::size_t end = 0;
};

inline std::vector<Chunk> whitespace_chunks(std::string_view text) {
  std::vector<Chunk> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_ascii_space(text[i])) ++i;
    if (i == text.size()) break;
    std::size_t b = i;
    while (i < text.size() && !is_ascii_space(text[i])) ++i;
    out.push_back({b, i});
  }
  return out;
}

/// 64-bit FNV-1a. Used for vocab, config and corpus fingerprints in reports.
class Fnv1a {
 public:
  Fnv1a& update(std::string_view bytes) {
    for (unsigned char c : bytes) {
      state_ ^= c;
      state_ *= 0x100000001b3ULL;
    }
    return *this;
  }
  std::uint64_t value() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// The standard distributions are implementation-defined; these two draws keep
// seeded runs identical across standard libraries.
template <class Rng>
std::size_t uniform_index(Rng& rng, std::size_t n) {
  if (n <= 1) return 0;
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % bound);
  std::uint64_t r;
  do {
    r = static_cast<std::uint64_t>(rng());
  } while (r >= limit);
  return static_cast<std::size_t>(r % bound);
}

template <class Rng>
double uniform_real(Rng& rng, double lo, double hi) {
  const double u = static_cast<double>(static_cast<std::uint64_t>(rng()) >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

template <class Rng, class T>
void shuffle_in_place(Rng& rng, std::vector<T>& v) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = uniform_index(rng, i);
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace kbtypo
