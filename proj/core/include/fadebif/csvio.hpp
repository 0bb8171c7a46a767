#ifndef FADEBIF_CSVIO_HPP
#define FADEBIF_CSVIO_HPP

#include <map>
#include <span>
#include <string>
#include <vector>

#include "fadebif/common.hpp"

namespace fadebif::csv {

// All numeric CSV output uses 17 significant digits in scientific
// notation so re-runs can be compared byte for byte.
std::string format_double(double v);

class Writer {
 public:
  explicit Writer(const std::string& path);
  ~Writer();
  Writer(const Writer&) = delete;
  Writer& operator=(const Writer&) = delete;

  void comment(const std::string& line);  // "# ..." header line
  void header(const std::vector<std::string>& columns);
  void row(std::span<const double> values);

 private:
  struct Impl;
  Impl* impl_;
};

std::string run_header(const std::string& system, const std::map<std::string, double>& params,
                       std::uint64_t seed, double dt);

}  // namespace fadebif::csv

#endif
