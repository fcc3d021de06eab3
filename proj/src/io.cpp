#include "syncgap/io.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace syncgap {

std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

void CsvTable::add_row(std::vector<Cell> cells) {
  if (cells.size() != header_.size())
    throw std::invalid_argument("CsvTable: row arity does not match header");
  rows_.push_back(std::move(cells));
}

void CsvTable::append_from(const CsvTable& other) {
  if (other.header_ != header_)
    throw std::invalid_argument("CsvTable: cannot append a table with a different schema");
  rows_.insert(rows_.end(), other.rows_.begin(), other.rows_.end());
}

std::string CsvTable::to_string() const {
  std::ostringstream out;
  for (std::size_t j = 0; j < header_.size(); ++j) {
    if (j) out << ',';
    out << header_[j];
  }
  out << '\n';
  for (const auto& row : rows_) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j) out << ',';
      if (std::holds_alternative<double>(row[j]))
        out << fmt17(std::get<double>(row[j]));
      else if (std::holds_alternative<long long>(row[j]))
        out << std::get<long long>(row[j]);
      else
        out << std::get<std::string>(row[j]);
    }
    out << '\n';
  }
  return out.str();
}

void CsvTable::write(const std::string& path) const {
  write_text_file(path, to_string());
}

std::string fnv1a64_hex(const std::string& bytes) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string file_checksum(const std::string& path) {
  return fnv1a64_hex(read_text_file(path));
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << content;
  if (!f) throw std::runtime_error("write failed: " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for reading: " + path);
  std::ostringstream out;
  out << f.rdbuf();
  return out.str();
}

int effective_thread_cap() {
  int cap = static_cast<int>(std::thread::hardware_concurrency());
  if (cap <= 0) cap = 1;
  if (const char* env = std::getenv("REPLICA_SYNC_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) cap = std::min(cap, v);
  }
  return cap;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  if (n == 0) return;
  const int threads = std::min<std::size_t>(static_cast<std::size_t>(effective_thread_cap()), n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  std::atomic<bool> failed{false};
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&]() {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n || failed.load()) return;
        try {
          fn(i);
        } catch (...) {
          failed.store(true);
          return;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failed.load()) throw std::runtime_error("parallel_for: worker failed");
}

}  // namespace syncgap
