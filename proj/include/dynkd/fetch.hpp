#pragma once

#include <filesystem>
#include <string>

#include "dynkd/data.hpp"

namespace dynkd {

std::string default_archive_url(DatasetName name);

/// HTTP(S) GET into `dest` via libcurl. Throws IngestionError on failure.
void download_file(const std::string& url, const std::filesystem::path& dest);

/// Unpacks a gzip-compressed ustar archive (regular files and directories
/// only) under `dest_dir`. Rejects absolute paths and ".." components.
void extract_tar_gz(const std::filesystem::path& archive, const std::filesystem::path& dest_dir);

/// Downloads the binary CIFAR archive into `root`, verifies it against
/// `expected_sha256` (IntegrityError on mismatch) and unpacks it.
void fetch_cifar(DatasetName name, const std::filesystem::path& root,
                 const std::string& expected_sha256);

}  // namespace dynkd
