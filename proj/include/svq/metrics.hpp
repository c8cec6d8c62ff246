#pragma once

// Append-only per-step metrics with a fixed CSV header.
//
//   tokenizer: step,L_SVQ,L_TOKEN,codebook_loss,commitment_loss,utilization
//   pretrain:  step,L,L_MVM,L_MLM,L_VTM   (L_MVM absent when MVM is off)

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace svq {

class MetricsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MetricsLog {
 public:
  MetricsLog() = default;
  explicit MetricsLog(std::vector<std::string> columns);  // value columns, without "step"

  static MetricsLog tokenizer();
  static MetricsLog pretrain(bool with_mvm);

  // Steps must be strictly increasing.
  void append(long step, std::vector<double> values);

  const std::vector<std::string>& columns() const { return columns_; }
  const std::vector<long>& steps() const { return steps_; }
  std::size_t size() const { return steps_.size(); }
  bool has_column(const std::string& name) const;
  std::vector<double> column(const std::string& name) const;
  double value(std::size_t row, const std::string& name) const;

  std::string to_csv() const;
  static MetricsLog from_csv(const std::string& text);
  void write(const std::string& path) const;
  static MetricsLog read(const std::string& path);

 private:
  std::size_t index_of(const std::string& name) const;

  std::vector<std::string> columns_;
  std::vector<long> steps_;
  std::vector<std::vector<double>> rows_;
};

// Trailing moving average with the given window (shorter at the start).
std::vector<double> moving_average(const std::vector<double>& xs, std::size_t window);

}  // namespace svq
