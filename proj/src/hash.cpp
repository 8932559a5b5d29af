#include <edd/hash.hpp>

#include <openssl/sha.h>

#include <cstdio>

namespace edd {

std::string sha1_hex(std::string_view data) {
  unsigned char digest[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char*>(data.data()), data.size(), digest);
  std::string out;
  char buf[3];
  for (unsigned char b : digest) {
    std::snprintf(buf, sizeof buf, "%02x", b);
    out += buf;
  }
  return out;
}

std::string content_hash(std::string_view content) {
  std::string blob = "blob " + std::to_string(content.size());
  blob.push_back('\0');
  blob.append(content);
  return sha1_hex(blob);
}

}  // namespace edd
