#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "ppscm/panel.hpp"

namespace fixtures {

/// Panel from an outcome matrix; treat[i] < 0 marks a never-treated unit,
/// otherwise it is the 0-based adoption period.
inline ppscm::PanelData make_panel(const Eigen::MatrixXd& y, const std::vector<int>& treat) {
  ppscm::PanelData p;
  p.outcomes = y;
  for (Eigen::Index i = 0; i < y.rows(); ++i) p.unit_ids.push_back("u" + std::to_string(i));
  for (Eigen::Index t = 0; t < y.cols(); ++t) p.times.push_back(2000 + t);
  for (int v : treat) p.treat_index.push_back(v < 0 ? ppscm::kNever : v);
  return p;
}

struct Instance {
  ppscm::PanelData panel;
  ppscm::EventConfig cfg;
  ppscm::DonorSets donors;
};

/// Random staggered panel: J treated units adopting between periods
/// first_adopt and first_adopt + spread, the rest never treated.
inline Instance random_instance(std::mt19937_64& rng, int N, int J, int T, int horizon,
                                int max_lags, int first_adopt, int spread) {
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_int_distribution<int> adopt(first_adopt, first_adopt + spread);
  Eigen::MatrixXd y(N, T);
  for (int i = 0; i < N; ++i) {
    const double level = z(rng);
    for (int t = 0; t < T; ++t) y(i, t) = level + 0.3 * z(rng) + 0.05 * t;
  }
  std::vector<int> treat(N, -1);
  std::vector<int> times;
  for (int j = 0; j < J; ++j) times.push_back(adopt(rng));
  std::sort(times.begin(), times.end());
  for (int j = 0; j < J; ++j) treat[j] = times[j];
  Instance inst;
  inst.panel = make_panel(y, treat);
  inst.cfg = ppscm::make_event_config(inst.panel, horizon, max_lags);
  inst.donors = ppscm::donor_sets(inst.panel, inst.cfg);
  return inst;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("ppscm_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::filesystem::path write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  return path;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace fixtures
