#include "svq/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "svq/util.hpp"

namespace svq {

namespace {

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

MetricsLog::MetricsLog(std::vector<std::string> columns) : columns_(std::move(columns)) {
  for (const auto& c : columns_) {
    if (c.empty() || c == "step" || c.find(',') != std::string::npos) {
      throw MetricsError("invalid metrics column name '" + c + "'");
    }
  }
}

MetricsLog MetricsLog::tokenizer() {
  return MetricsLog({"L_SVQ", "L_TOKEN", "codebook_loss", "commitment_loss", "utilization"});
}

MetricsLog MetricsLog::pretrain(bool with_mvm) {
  if (with_mvm) return MetricsLog({"L", "L_MVM", "L_MLM", "L_VTM"});
  return MetricsLog({"L", "L_MLM", "L_VTM"});
}

void MetricsLog::append(long step, std::vector<double> values) {
  if (values.size() != columns_.size()) {
    throw MetricsError("metrics row has " + std::to_string(values.size()) + " values, expected " +
                       std::to_string(columns_.size()));
  }
  if (!steps_.empty() && step <= steps_.back()) {
    throw MetricsError("metrics step " + std::to_string(step) + " does not follow " + std::to_string(steps_.back()));
  }
  steps_.push_back(step);
  rows_.push_back(std::move(values));
}

bool MetricsLog::has_column(const std::string& name) const {
  for (const auto& c : columns_) {
    if (c == name) return true;
  }
  return false;
}

std::size_t MetricsLog::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < columns_.size(); ++i) {
    if (columns_[i] == name) return i;
  }
  throw MetricsError("no metrics column '" + name + "'");
}

std::vector<double> MetricsLog::column(const std::string& name) const {
  const std::size_t c = index_of(name);
  std::vector<double> out;
  out.reserve(rows_.size());
  for (const auto& r : rows_) out.push_back(r[c]);
  return out;
}

double MetricsLog::value(std::size_t row, const std::string& name) const { return rows_.at(row)[index_of(name)]; }

std::string MetricsLog::to_csv() const {
  std::ostringstream os;
  os << "step";
  for (const auto& c : columns_) os << ',' << c;
  os << '\n';
  for (std::size_t i = 0; i < steps_.size(); ++i) {
    os << steps_[i];
    for (double v : rows_[i]) os << ',' << format_double(v);
    os << '\n';
  }
  return os.str();
}

MetricsLog MetricsLog::from_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line)) throw MetricsError("empty metrics file");
  auto header = split_commas(line);
  if (header.empty() || header[0] != "step") throw MetricsError("metrics header must start with 'step'");
  MetricsLog log(std::vector<std::string>(header.begin() + 1, header.end()));
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto cells = split_commas(line);
    if (cells.size() != header.size()) {
      throw MetricsError("metrics line " + std::to_string(lineno) + " has " + std::to_string(cells.size()) +
                         " cells, expected " + std::to_string(header.size()));
    }
    std::vector<double> values;
    long step = 0;
    try {
      step = std::stol(cells[0]);
      for (std::size_t i = 1; i < cells.size(); ++i) values.push_back(parse_double(cells[i]));
    } catch (const std::exception&) {
      throw MetricsError("metrics line " + std::to_string(lineno) + ": malformed number in '" + line + "'");
    }
    log.append(step, std::move(values));
  }
  return log;
}

void MetricsLog::write(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw MetricsError("cannot write metrics file '" + path + "'");
  out << to_csv();
}

MetricsLog MetricsLog::read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MetricsError("cannot read metrics file '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return from_csv(os.str());
}

std::vector<double> moving_average(const std::vector<double>& xs, std::size_t window) {
  std::vector<double> out(xs.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    acc += xs[i];
    if (i >= window) acc -= xs[i - window];
    out[i] = acc / static_cast<double>(std::min(i + 1, window));
  }
  return out;
}

}  // namespace svq
