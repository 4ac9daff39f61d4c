#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "cwcf/cwcf.hpp"

namespace testing_util {

namespace fs = std::filesystem;

// Scratch directory removed on destruction.
struct TempDir {
  fs::path path;
  TempDir() {
    static std::random_device rd;
    path = fs::temp_directory_path() / ("cwcf-test-" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  fs::path operator/(const std::string& name) const { return path / name; }
};

inline void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

// Dataset from explicit raw values, unit costs unless given.
inline cwcf::Dataset tiny_dataset(const cwcf::Matrix& raw, const std::vector<int>& labels, int n_classes,
                                  std::vector<double> costs = {}, cwcf::SplitFractions f = {1.0, 0.0, 0.0}) {
  const auto n = static_cast<std::size_t>(raw.cols());
  std::vector<std::string> names;
  for (std::size_t j = 0; j < n; ++j) names.push_back("f" + std::to_string(j));
  if (costs.empty()) costs.assign(n, 1.0);
  cwcf::ByteMatrix present = cwcf::ByteMatrix::Ones(raw.rows(), raw.cols());
  return cwcf::assemble_dataset(names, raw, present, labels, n_classes, costs, f, 7);
}

inline cwcf::QNetwork random_net(int inputs, int hidden, int actions, std::uint64_t seed, double head = 1.0) {
  cwcf::QNetwork net(cwcf::NetShape{inputs, hidden, actions});
  cwcf::Rng rng(seed);
  net.init(rng, head);
  std::normal_distribution<double> g(0.0, 0.1);
  for (auto& p : net.params) p += g(rng);  // nonzero biases too
  return net;
}

// Random Q table, normalized pi, and rewards/actions/mu for Retrace checks.
struct RandomEpisode {
  std::vector<cwcf::RetraceStep> steps;
  cwcf::Matrix q, pi;
};

inline RandomEpisode random_episode(cwcf::Rng& rng, int actions, std::size_t len) {
  std::uniform_real_distribution<double> u(-1.0, 0.2);
  RandomEpisode e;
  e.q = cwcf::Matrix(len, actions);
  e.pi = cwcf::Matrix(len, actions);
  for (std::size_t t = 0; t < len; ++t) {
    double sum = 0.0;
    for (int a = 0; a < actions; ++a) {
      e.q(t, a) = u(rng);
      e.pi(t, a) = cwcf::uniform01(rng);
      sum += e.pi(t, a);
    }
    e.pi.row(t) /= sum;
    e.steps.push_back({u(rng), static_cast<int>(cwcf::uniform_index(rng, actions)), 0.05 + 0.95 * cwcf::uniform01(rng)});
  }
  return e;
}

}  // namespace testing_util
