#pragma once

#include <filesystem>
#include <fstream>
#include <string>

namespace vvopt {

/// Shortest round-trip decimal form of a double (std::to_chars), so repeated
/// runs produce byte-identical files.
std::string fmt_double(double value);

/**
 * Writes to `<path>.tmp` and renames onto `path` on commit, so a crashed or
 * failed run never leaves a partial file at the final name.
 */
class AtomicFile {
public:
  explicit AtomicFile(std::filesystem::path path);
  ~AtomicFile();

  std::ofstream& stream() { return out_; }
  void commit();

private:
  std::filesystem::path path_;
  std::filesystem::path tmp_;
  std::ofstream out_;
  bool committed_ = false;
};

}  // namespace vvopt
