// SPDX-License-Identifier: Apache-2.0
//
// Test-only helpers: central finite-difference gradient oracle and random
// tensor builders.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <string>

#include <unistd.h>

#include "iatn/data.hpp"
#include "iatn/ndgrad/graph.hpp"
#include "iatn/ndgrad/optim.hpp"

namespace iatn::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "param[index]: analytic vs numeric"
  std::size_t checked = 0;
};

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

/// Compares backward() against central differences on every entry of every
/// parameter in `store`. `loss_fn` must rebuild the graph on each call.
inline GradCheckResult check_gradients(nd::ParamStore& store,
                                       const std::function<nd::Var()>& loss_fn,
                                       double step = 1e-5) {
  const nd::Gradients analytic = nd::backward(loss_fn());
  GradCheckResult result;
  for (const nd::Var& p : store.all()) {
    nd::Tensor& value = p->mutable_value();
    auto found = analytic.find(p->name());
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double saved = value[i];
      value[i] = saved + step;
      const double plus = loss_fn()->value().item();
      value[i] = saved - step;
      const double minus = loss_fn()->value().item();
      value[i] = saved;
      const double numeric = (plus - minus) / (2.0 * step);
      const double a = found == analytic.end() ? 0.0 : found->second[i];
      const double err = relative_error(a, numeric);
      ++result.checked;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        char buf[96];
        std::snprintf(buf, sizeof buf, "]: analytic %.6g vs numeric %.6g", a, numeric);
        result.worst = p->name() + "[" + std::to_string(i) + buf;
      }
    }
  }
  return result;
}

inline nd::Tensor random_tensor(const nd::Shape& shape, nd::Rng& rng, double scale = 1.0) {
  nd::Tensor t(shape);
  for (double& v : t.data()) v = rng.normal(0.0, scale);
  return t;
}

/// sum(v * w) for a fixed random w, so gradient checks see distinct
/// upstream gradients per entry.
inline nd::Var random_projection(const nd::Var& v, std::uint64_t seed) {
  nd::Rng rng(seed);
  return nd::sum(nd::mul(v, nd::constant(random_tensor(v->shape(), rng))));
}

/// Fresh temporary directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("iatn_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

/// Repository root, passed in by CTest; falls back to the working directory.
inline std::filesystem::path source_dir() {
  const char* env = std::getenv("IATN_SOURCE_DIR");
  return env ? std::filesystem::path(env) : std::filesystem::current_path();
}

/// Small synthetic dataset written under `dir`.
inline SyntheticConfig tiny_synthetic() {
  SyntheticConfig c;
  c.num_entities = 8;
  c.num_relations = 2;
  c.facts_per_entity = 2;
  c.num_questions = 14;
  c.seed = 3;
  return c;
}

/// Toy dimensions used by gradient and plumbing tests.
inline std::string toy_train_config() {
  return "d=4\nh=3\ns=5\nu=7\ng_hidden=4\nT=2\nbatch_size=4\nmax_epochs=2\n";
}

}  // namespace iatn::testing
