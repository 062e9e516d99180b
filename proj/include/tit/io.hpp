#pragma once

// File outputs shared by the CLI and the trainers: RFC-style CSV, 8-bit
// grayscale PGM images, and the append-only training metrics stream.

#include <cstdint>
#include <string>
#include <vector>

#include "tit/blocks.hpp"
#include "tit/training.hpp"

namespace tit {

// Quotes a CSV field iff it contains a comma, quote, or newline; embedded
// quotes are doubled.
std::string csv_escape(const std::string& field);
std::string csv_row(const std::vector<std::string>& fields);
// Strict single-row parser matching csv_row's discipline.
std::vector<std::string> csv_parse_row(const std::string& line);

std::string format_double(double v);

// Binary 8-bit grayscale PGM (P5).
void write_pgm(const std::string& path, int rows, int cols, const std::vector<std::uint8_t>& pixels);

// Min-max scales a weight matrix into 0..255 (constant maps render mid-gray).
std::vector<std::uint8_t> to_grayscale(const std::vector<double>& values);

// One CSV per training run: header written once, one row per update.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::string& path);
  void append(const TrainMetricsRow& row);
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

// Attention-record export: raw weights as CSV plus a min-max scaled PGM twin.
void write_attention_csv(const std::string& path, const AttentionRecord& rec);
void write_attention_pgm(const std::string& path, const AttentionRecord& rec);

}  // namespace tit
