#include "dynkd/fetch.hpp"

#include <curl/curl.h>
#include <zlib.h>

#include <array>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "dynkd/error.hpp"

namespace dynkd {

namespace {

std::size_t write_to_stream(char* ptr, std::size_t size, std::size_t nmemb, void* user) {
  auto* out = static_cast<std::ofstream*>(user);
  out->write(ptr, static_cast<std::streamsize>(size * nmemb));
  return *out ? size * nmemb : 0;
}

std::size_t parse_octal(const char* field, std::size_t len) {
  std::size_t v = 0;
  for (std::size_t i = 0; i < len && field[i] != '\0' && field[i] != ' '; ++i) {
    if (field[i] < '0' || field[i] > '7') throw IngestionError("bad octal field in tar header", 0);
    v = v * 8 + static_cast<std::size_t>(field[i] - '0');
  }
  return v;
}

std::filesystem::path safe_member_path(const std::string& name) {
  const std::filesystem::path p(name);
  if (p.is_absolute()) throw IngestionError("absolute path in archive: " + name, 0);
  for (const auto& part : p) {
    if (part == "..") throw IngestionError("parent reference in archive: " + name, 0);
  }
  return p;
}

}  // namespace

std::string default_archive_url(DatasetName name) {
  switch (name) {
    case DatasetName::cifar10:
      return "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz";
    case DatasetName::cifar100:
      return "https://www.cs.toronto.edu/~kriz/cifar-100-binary.tar.gz";
    case DatasetName::synthetic:
      break;
  }
  throw ConfigError("synthetic datasets are generated, not downloaded");
}

void download_file(const std::string& url, const std::filesystem::path& dest) {
  std::ofstream out(dest, std::ios::binary | std::ios::trunc);
  if (!out) throw IngestionError("cannot write " + dest.string(), 0);
  CURL* curl = curl_easy_init();
  if (!curl) throw IngestionError("libcurl initialisation failed", 0);
  curl_easy_setopt(curl, CURLOPT_URL, url.c_str());
  curl_easy_setopt(curl, CURLOPT_FOLLOWLOCATION, 1L);
  curl_easy_setopt(curl, CURLOPT_FAILONERROR, 1L);
  curl_easy_setopt(curl, CURLOPT_WRITEFUNCTION, write_to_stream);
  curl_easy_setopt(curl, CURLOPT_WRITEDATA, &out);
  const CURLcode rc = curl_easy_perform(curl);
  curl_easy_cleanup(curl);
  out.close();
  if (rc != CURLE_OK) {
    std::filesystem::remove(dest);
    throw IngestionError("download of " + url + " failed: " + curl_easy_strerror(rc), 0);
  }
}

void extract_tar_gz(const std::filesystem::path& archive, const std::filesystem::path& dest_dir) {
  gzFile gz = gzopen(archive.string().c_str(), "rb");
  if (!gz) throw IngestionError("cannot open archive " + archive.string(), 0);
  long long offset = 0;
  std::array<char, 512> header{};
  auto read_block = [&](char* buf, std::size_t len) {
    const int got = gzread(gz, buf, static_cast<unsigned>(len));
    if (got != static_cast<int>(len)) {
      gzclose(gz);
      throw IngestionError("truncated archive " + archive.string(), offset);
    }
    offset += static_cast<long long>(len);
  };
  std::vector<char> data;
  while (true) {
    read_block(header.data(), header.size());
    if (header[0] == '\0') break;  // end-of-archive marker
    std::string name(header.data(), strnlen(header.data(), 100));
    const std::string prefix(header.data() + 345, strnlen(header.data() + 345, 155));
    if (!prefix.empty()) name = prefix + "/" + name;
    const std::size_t size = parse_octal(header.data() + 124, 12);
    const char type = header[156];
    const std::size_t padded = (size + 511) / 512 * 512;
    data.resize(padded);
    if (padded > 0) read_block(data.data(), padded);
    const auto target = dest_dir / safe_member_path(name);
    if (type == '5') {
      std::filesystem::create_directories(target);
    } else if (type == '0' || type == '\0') {
      std::filesystem::create_directories(target.parent_path());
      std::ofstream out(target, std::ios::binary | std::ios::trunc);
      out.write(data.data(), static_cast<std::streamsize>(size));
      if (!out) {
        gzclose(gz);
        throw IngestionError("cannot write " + target.string(), offset);
      }
    }
  }
  gzclose(gz);
}

void fetch_cifar(DatasetName name, const std::filesystem::path& root,
                 const std::string& expected_sha256) {
  if (expected_sha256.empty()) {
    throw ConfigError("dataset.archive_sha256 must be set to verify a download");
  }
  std::filesystem::create_directories(root);
  const std::string url = default_archive_url(name);
  const auto archive = root / url.substr(url.find_last_of('/') + 1);
  download_file(url, archive);
  const std::string actual = sha256_file(archive);
  if (actual != expected_sha256) {
    throw IntegrityError("checksum mismatch for " + archive.string() + ": expected " +
                         expected_sha256 + ", got " + actual);
  }
  extract_tar_gz(archive, root);
}

}  // namespace dynkd
