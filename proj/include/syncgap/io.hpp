#ifndef SYNCGAP_IO_HPP
#define SYNCGAP_IO_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <variant>
#include <vector>

namespace syncgap {

// Serialize a double with 17 significant digits (round-trip exact).
std::string fmt17(double x);

// CSV table with a declared header. Rows are validated against the header
// arity before the file is written; all-or-nothing emission.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  using Cell = std::variant<double, long long, std::string>;
  void add_row(std::vector<Cell> cells);
  void append_from(const CsvTable& other);  // headers must match

  const std::vector<std::string>& header() const { return header_; }
  std::size_t row_count() const { return rows_.size(); }

  std::string to_string() const;
  void write(const std::string& path) const;

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<Cell>> rows_;
};

// FNV-1a 64-bit checksum of a byte string, as a hex literal.
std::string fnv1a64_hex(const std::string& bytes);
std::string file_checksum(const std::string& path);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

// Deterministic parallel map: fn(i) for i in [0, n). Results must be written
// to pre-assigned slots by the callee; the pool only partitions indices.
// Thread count is capped by the REPLICA_SYNC_THREADS environment variable.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);
int effective_thread_cap();

}  // namespace syncgap

#endif  // SYNCGAP_IO_HPP
