#include "relbow/digest.hpp"

#include <cstdio>
#include <fstream>

#include "relbow/errors.hpp"

namespace relbow {

std::string Fnv64::hex() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(state_));
  return std::string(buf);
}

std::uint64_t fnv1a64(std::string_view bytes) { return Fnv64().update(bytes).value(); }

std::string digest_hex(std::string_view bytes) { return Fnv64().update(bytes).hex(); }

std::string digest_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file for digest: " + path.string());
  Fnv64 h;
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
    h.update(buf, static_cast<std::size_t>(in.gcount()));
  return h.hex();
}

}  // namespace relbow
