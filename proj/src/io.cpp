#include "tit/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "tit/checkpoint.hpp"  // IoError

namespace tit {

std::string csv_escape(const std::string& field) {
  bool needs_quotes = field.find_first_of(",\"\n\r") != std::string::npos;
  if (!needs_quotes) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += "\"";
  return out;
}

std::string csv_row(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out += ",";
    out += csv_escape(fields[i]);
  }
  return out;
}

std::vector<std::string> csv_parse_row(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool in_quotes = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      in_quotes = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (in_quotes) throw IoError("csv: unterminated quoted field");
  out.push_back(cur);
  return out;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

void write_pgm(const std::string& path, int rows, int cols,
               const std::vector<std::uint8_t>& pixels) {
  if (pixels.size() != static_cast<std::size_t>(rows) * cols)
    throw IoError("pgm: pixel count does not match dimensions");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open image for writing: " + path);
  os << "P5\n" << cols << " " << rows << "\n255\n";
  os.write(reinterpret_cast<const char*>(pixels.data()),
           static_cast<std::streamsize>(pixels.size()));
  if (!os) throw IoError("write failure on image: " + path);
}

std::vector<std::uint8_t> to_grayscale(const std::vector<double>& values) {
  double lo = values.empty() ? 0.0 : values[0];
  double hi = lo;
  for (double v : values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  std::vector<std::uint8_t> out(values.size());
  double range = hi - lo;
  for (std::size_t i = 0; i < values.size(); ++i)
    out[i] = range > 0.0 ? static_cast<std::uint8_t>(std::lround((values[i] - lo) / range * 255.0))
                         : static_cast<std::uint8_t>(128);
  return out;
}

MetricsWriter::MetricsWriter(const std::string& path) : path_(path) {
  std::ofstream os(path_, std::ios::trunc);
  if (!os) throw IoError("cannot open metrics csv for writing: " + path_);
  os << csv_row({"wall_clock_s", "env_steps", "updates", "mean_return", "std_return",
                 "policy_loss", "value_loss", "entropy"})
     << "\n";
}

void MetricsWriter::append(const TrainMetricsRow& row) {
  std::ofstream os(path_, std::ios::app);
  if (!os) throw IoError("cannot append to metrics csv: " + path_);
  char wall[64];
  std::snprintf(wall, sizeof(wall), "%.3f", row.wall_clock_s);
  os << csv_row({wall, std::to_string(row.env_steps), std::to_string(row.updates),
                 format_double(row.mean_return), format_double(row.std_return),
                 format_double(row.policy_loss), format_double(row.value_loss),
                 format_double(row.entropy)})
     << "\n";
}

void write_attention_csv(const std::string& path, const AttentionRecord& rec) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open attention csv for writing: " + path);
  for (int i = 0; i < rec.rows; ++i) {
    std::vector<std::string> fields;
    fields.reserve(static_cast<std::size_t>(rec.cols));
    for (int j = 0; j < rec.cols; ++j)
      fields.push_back(format_double(rec.weights[static_cast<std::size_t>(i) * rec.cols + j]));
    os << csv_row(fields) << "\n";
  }
}

void write_attention_pgm(const std::string& path, const AttentionRecord& rec) {
  write_pgm(path, rec.rows, rec.cols, to_grayscale(rec.weights));
}

}  // namespace tit
