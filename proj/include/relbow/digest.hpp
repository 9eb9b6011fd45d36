#ifndef RELBOW_DIGEST_HPP
#define RELBOW_DIGEST_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace relbow {

// Streaming FNV-1a (64 bit). Used for content digests of config slices,
// prompt templates and stage artifacts; not cryptographic.
class Fnv64 {
 public:
  Fnv64& update(std::string_view bytes) {
    for (unsigned char c : bytes) {
      state_ ^= c;
      state_ *= 0x100000001b3ULL;
    }
    return *this;
  }
  Fnv64& update(const void* data, std::size_t n) {
    return update(std::string_view(static_cast<const char*>(data), n));
  }
  std::uint64_t value() const { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::uint64_t fnv1a64(std::string_view bytes);
std::string digest_hex(std::string_view bytes);

// Digest of a file's contents. Throws IoError if the file cannot be read.
std::string digest_file(const std::filesystem::path& path);

}  // namespace relbow

#endif  // RELBOW_DIGEST_HPP
