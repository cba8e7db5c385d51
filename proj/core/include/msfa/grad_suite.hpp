#pragma once

#include <cstdint>
#include <string>
#include <vector>

// Finite-difference checks of every differentiable building block on random small fixtures.
namespace msfa::grad_suite {

struct Options {
  std::uint64_t seed = 0;
  std::size_t fixtures = 20;
  double tolerance = 1e-4;
  double step = 1e-3;  // finite-difference step
  // Restrict to entries whose name contains this substring (empty: all).
  std::string filter;
};

struct Entry {
  std::string name;
  std::size_t fixtures = 0;
  std::size_t coords = 0;
  std::size_t skipped = 0;
  double max_rel_err = 0.0;
  bool pass = true;
  std::string worst;  // "<fixture>:<parameter>[<index>]" of the worst coordinate
};

std::vector<std::string> entry_names();
std::vector<Entry> run(const Options& options);

}  // namespace msfa::grad_suite
