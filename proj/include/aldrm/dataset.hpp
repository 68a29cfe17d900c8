#pragma once

// Long-format longitudinal data: one record per subject with time-constant
// covariates, ordered observation times and responses.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace aldrm {

/// Thrown for malformed or inconsistent input data. Carries an optional
/// 1-based line number.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what, long line = 0)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  long line() const { return line_; }

 private:
  long line_;
};

struct SubjectRecord {
  std::string id;
  std::map<std::string, double> covariates;
  std::vector<double> times;
  std::vector<double> y;
};

struct LongitudinalDataset {
  std::vector<std::string> covariate_names;
  std::vector<SubjectRecord> subjects;

  std::size_t n_subjects() const { return subjects.size(); }

  std::size_t n_observations() const {
    std::size_t n = 0;
    for (const auto& s : subjects) n += s.y.size();
    return n;
  }

  void validate() const {
    if (subjects.empty()) throw DataError("dataset has no subjects");
    for (const auto& s : subjects) {
      if (s.y.empty()) throw DataError("subject '" + s.id + "' has no observations");
      if (s.y.size() != s.times.size())
        throw DataError("subject '" + s.id + "': times and y lengths differ");
      for (std::size_t j = 0; j < s.y.size(); ++j) {
        if (!std::isfinite(s.times[j])) throw DataError("subject '" + s.id + "': non-finite time");
        if (!std::isfinite(s.y[j])) throw DataError("subject '" + s.id + "': missing response");
        if (j > 0 && s.times[j] < s.times[j - 1])
          throw DataError("subject '" + s.id + "': times must be non-decreasing");
      }
      if (s.covariates.size() != covariate_names.size())
        throw DataError("subject '" + s.id + "': covariate set differs from header");
      for (const auto& name : covariate_names)
        if (!s.covariates.count(name))
          throw DataError("subject '" + s.id + "': missing covariate '" + name + "'");
    }
  }
};

/// Shortest text that round-trips a double.
inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Quotes a CSV field when it contains a comma, quote or line break.
inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

/// Splits one CSV record. Double-quoted fields may contain commas and
/// doubled quotes; unquoted fields are trimmed of surrounding blanks.
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  bool quoted = false, was_quoted = false;
  auto flush = [&] {
    if (was_quoted) {
      out.push_back(cell);
    } else {
      const auto b = cell.find_first_not_of(" \t\r");
      const auto e = cell.find_last_not_of(" \t\r");
      out.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
    }
    cell.clear();
    was_quoted = false;
  };
  for (std::size_t k = 0; k < line.size(); ++k) {
    const char c = line[k];
    if (quoted) {
      if (c == '"' && k + 1 < line.size() && line[k + 1] == '"') {
        cell += '"';
        ++k;
      } else if (c == '"') {
        quoted = false;
      } else {
        cell += c;
      }
    } else if (c == '"' && cell.find_first_not_of(" \t") == std::string::npos) {
      cell.clear();
      quoted = was_quoted = true;
    } else if (c == ',') {
      flush();
    } else if (!(was_quoted && (c == ' ' || c == '\t' || c == '\r'))) {
      cell += c;
    }
  }
  flush();
  return out;
}

inline double parse_real(const std::string& s, long line, const std::string& what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError("cannot parse " + what + " value '" + s + "'", line);
  }
}

/// Writes columns id,time,y,<covariates...>.
inline void write_dataset_csv(std::ostream& os, const LongitudinalDataset& data) {
  os << "id,time,y";
  for (const auto& c : data.covariate_names) os << ',' << csv_field(c);
  os << '\n';
  for (const auto& s : data.subjects) {
    for (std::size_t j = 0; j < s.y.size(); ++j) {
      os << csv_field(s.id) << ',' << format_real(s.times[j]) << ',' << format_real(s.y[j]);
      for (const auto& c : data.covariate_names) os << ',' << format_real(s.covariates.at(c));
      os << '\n';
    }
  }
}

/// Reads a long-format CSV. Rows of a subject must be contiguous; subjects
/// keep the order of first appearance.
inline LongitudinalDataset read_dataset_csv(std::istream& is) {
  std::string line;
  long lineno = 0;
  std::vector<std::string> header;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    header = split_csv_line(line);
    break;
  }
  if (header.empty()) throw DataError("empty data file");
  int id_col = -1, time_col = -1, y_col = -1;
  std::vector<int> cov_cols;
  LongitudinalDataset data;
  for (int c = 0; c < static_cast<int>(header.size()); ++c) {
    if (header[c] == "id") id_col = c;
    else if (header[c] == "time") time_col = c;
    else if (header[c] == "y") y_col = c;
    else {
      cov_cols.push_back(c);
      data.covariate_names.push_back(header[c]);
    }
  }
  if (id_col < 0 || time_col < 0 || y_col < 0)
    throw DataError("header must contain id, time and y columns", lineno);

  std::map<std::string, std::size_t> seen;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw DataError("expected " + std::to_string(header.size()) + " fields, found " +
                          std::to_string(cells.size()),
                      lineno);
    const std::string& id = cells[id_col];
    if (id.empty()) throw DataError("empty subject id", lineno);
    if (data.subjects.empty() || data.subjects.back().id != id) {
      if (seen.count(id)) throw DataError("rows of subject '" + id + "' are not contiguous", lineno);
      seen[id] = data.subjects.size();
      SubjectRecord rec;
      rec.id = id;
      for (std::size_t k = 0; k < cov_cols.size(); ++k)
        rec.covariates[data.covariate_names[k]] =
            parse_real(cells[cov_cols[k]], lineno, data.covariate_names[k]);
      data.subjects.push_back(std::move(rec));
    } else {
      auto& rec = data.subjects.back();
      for (std::size_t k = 0; k < cov_cols.size(); ++k) {
        const double v = parse_real(cells[cov_cols[k]], lineno, data.covariate_names[k]);
        if (v != rec.covariates[data.covariate_names[k]])
          throw DataError("covariate '" + data.covariate_names[k] + "' varies within subject '" +
                              id + "'",
                          lineno);
      }
    }
    auto& rec = data.subjects.back();
    rec.times.push_back(parse_real(cells[time_col], lineno, "time"));
    rec.y.push_back(parse_real(cells[y_col], lineno, "y"));
  }
  data.validate();
  return data;
}

inline LongitudinalDataset read_dataset_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open data file '" + path + "'");
  return read_dataset_csv(is);
}

/// Z-scores the named covariates across subjects (one value per subject).
inline void standardize_covariates(LongitudinalDataset& data, const std::vector<std::string>& names) {
  for (const auto& name : names) {
    if (std::find(data.covariate_names.begin(), data.covariate_names.end(), name) ==
        data.covariate_names.end())
      throw DataError("cannot standardize unknown covariate '" + name + "'");
    double sum = 0.0, sq = 0.0;
    for (const auto& s : data.subjects) sum += s.covariates.at(name);
    const double n = static_cast<double>(data.subjects.size());
    const double m = sum / n;
    for (const auto& s : data.subjects) sq += std::pow(s.covariates.at(name) - m, 2);
    const double sd = n > 1 ? std::sqrt(sq / (n - 1.0)) : 0.0;
    if (!(sd > 0.0)) throw DataError("covariate '" + name + "' has zero variance");
    for (auto& s : data.subjects) s.covariates[name] = (s.covariates[name] - m) / sd;
  }
}

/// FNV-1a 64-bit digest, hex encoded.
inline std::string digest_bytes(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Digest of the canonical CSV serialization, independent of the input's
/// formatting.
inline std::string dataset_digest(const LongitudinalDataset& data) {
  std::ostringstream os;
  write_dataset_csv(os, data);
  return digest_bytes(os.str());
}

}  // namespace aldrm
