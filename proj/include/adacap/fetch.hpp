#pragma once

// Needs OpenSSL (link the adacap_fetch target).

#include <openssl/evp.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>

#include "httplib.h"

namespace adacap::fetch {

namespace fs = std::filesystem;

struct FetchError : std::runtime_error {
  enum class Kind { bad_url, network, http_status, checksum, io };
  Kind kind;
  FetchError(Kind k, const std::string& what) : std::runtime_error(what), kind(k) {}
};

inline std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) != 1 || EVP_DigestFinal_ex(ctx, digest, &len) != 1) {
    EVP_MD_CTX_free(ctx);
    throw std::runtime_error("sha256: OpenSSL digest failed");
  }
  EVP_MD_CTX_free(ctx);
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xF];
  }
  return out;
}

inline std::string sha256_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw FetchError(FetchError::Kind::io, "cannot read " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return sha256_hex(s.str());
}

struct Url {
  std::string origin;  // scheme://host[:port]
  std::string path;    // starts with '/'
  std::string basename;
};

inline Url parse_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw FetchError(FetchError::Kind::bad_url, "url has no scheme: " + url);
  const std::string scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https")
    throw FetchError(FetchError::Kind::bad_url, "unsupported scheme '" + scheme + "' in " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  Url u;
  u.origin = url.substr(0, path_start);
  u.path = path_start == std::string::npos ? "/" : url.substr(path_start);
  if (u.origin.size() == scheme_end + 3) throw FetchError(FetchError::Kind::bad_url, "url has no host: " + url);
  std::string p = u.path.substr(0, u.path.find_first_of("?#"));
  u.basename = p.substr(p.find_last_of('/') + 1);
  return u;
}

struct FetchOptions {
  std::string url;
  fs::path cache_dir = "data/cache";
  std::string filename;                // defaults to the last path segment of the url
  std::optional<std::string> sha256;   // lowercase hex; verified when given
  int timeout_seconds = 60;
};

struct FetchResult {
  fs::path path;
  std::string sha256;
  std::size_t bytes = 0;
  bool from_cache = false;
};

/// GET into the cache directory. A cached file whose checksum matches is
/// reused; a download with the wrong checksum is discarded, never cached.
inline FetchResult fetch(const FetchOptions& opt) {
  const Url u = parse_url(opt.url);
  const std::string name = opt.filename.empty() ? u.basename : opt.filename;
  if (name.empty()) throw FetchError(FetchError::Kind::bad_url, "cannot derive a file name from " + opt.url);
  std::error_code ec;
  fs::create_directories(opt.cache_dir, ec);
  if (ec) throw FetchError(FetchError::Kind::io, "cannot create " + opt.cache_dir.string() + ": " + ec.message());
  const fs::path dest = opt.cache_dir / name;

  if (fs::exists(dest) && opt.sha256) {
    const std::string have = sha256_file(dest);
    if (have == *opt.sha256) return {dest, have, static_cast<std::size_t>(fs::file_size(dest)), true};
  }

  httplib::Client client(u.origin);
  client.set_follow_location(true);
  client.set_connection_timeout(opt.timeout_seconds);
  client.set_read_timeout(opt.timeout_seconds);
  const auto res = client.Get(u.path);
  if (!res) throw FetchError(FetchError::Kind::network, "GET " + opt.url + " failed: " + httplib::to_string(res.error()));
  if (res->status != 200)
    throw FetchError(FetchError::Kind::http_status, "GET " + opt.url + " returned HTTP " + std::to_string(res->status));
  const std::string digest = sha256_hex(res->body);
  if (opt.sha256 && digest != *opt.sha256)
    throw FetchError(FetchError::Kind::checksum,
                     "checksum mismatch for " + opt.url + ": expected " + *opt.sha256 + ", got " + digest);

  const fs::path tmp = dest.string() + ".part";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(res->body.data(), static_cast<std::streamsize>(res->body.size()));
    if (!out) throw FetchError(FetchError::Kind::io, "cannot write " + tmp.string());
  }
  fs::rename(tmp, dest, ec);
  if (ec) throw FetchError(FetchError::Kind::io, "cannot move download into " + dest.string() + ": " + ec.message());
  return {dest, digest, res->body.size(), false};
}

}  // namespace adacap::fetch
