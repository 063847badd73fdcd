#include "somnoflow/digest.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <stdexcept>

namespace somnoflow {

struct Sha256::Impl {
  EVP_MD_CTX* ctx{EVP_MD_CTX_new()};
  bool done{false};
  ~Impl() { EVP_MD_CTX_free(ctx); }
};

Sha256::Sha256() : impl_(std::make_unique<Impl>()) {
  if (!impl_->ctx || EVP_DigestInit_ex(impl_->ctx, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256: digest context unavailable");
  }
}

Sha256::~Sha256() = default;

void Sha256::update(const void* data, std::size_t size) {
  if (impl_->done) throw std::logic_error("sha256: update after finalize");
  if (size > 0) EVP_DigestUpdate(impl_->ctx, data, size);
}

void Sha256::update(std::span<const std::byte> bytes) { update(bytes.data(), bytes.size()); }

std::string Sha256::hex() {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(impl_->ctx, md, &len);
  impl_->done = true;
  std::string out(static_cast<std::size_t>(len) * 2, '0');
  for (unsigned int i = 0; i < len; ++i) std::snprintf(&out[2 * i], 3, "%02x", md[i]);
  return out;
}

std::string sha256_hex(std::span<const std::byte> bytes) {
  Sha256 h;
  h.update(bytes);
  return h.hex();
}

}  // namespace somnoflow
