#include "fadebif/csvio.hpp"

#include <cstdint>
#include <cstdio>
#include <sstream>

namespace fadebif::csv {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.16e", v);
  return buf;
}

struct Writer::Impl {
  std::FILE* f = nullptr;
};

Writer::Writer(const std::string& path) : impl_(new Impl) {
  impl_->f = std::fopen(path.c_str(), "wb");
  if (!impl_->f) throw Error("cannot open '" + path + "' for writing");
}

Writer::~Writer() {
  if (impl_->f) std::fclose(impl_->f);
  delete impl_;
}

void Writer::comment(const std::string& line) {
  std::fprintf(impl_->f, "# %s\n", line.c_str());
}

void Writer::header(const std::vector<std::string>& columns) {
  for (std::size_t i = 0; i < columns.size(); ++i)
    std::fprintf(impl_->f, "%s%s", columns[i].c_str(), i + 1 < columns.size() ? "," : "\n");
}

void Writer::row(std::span<const double> values) {
  for (std::size_t i = 0; i < values.size(); ++i)
    std::fprintf(impl_->f, "%s%s", format_double(values[i]).c_str(),
                 i + 1 < values.size() ? "," : "\n");
}

std::string run_header(const std::string& system, const std::map<std::string, double>& params,
                       std::uint64_t seed, double dt) {
  std::ostringstream out;
  out << "system=" << system;
  for (const auto& [k, v] : params) out << " " << k << "=" << format_double(v);
  out << " seed=" << seed << " dt=" << format_double(dt);
  return out.str();
}

}  // namespace fadebif::csv
