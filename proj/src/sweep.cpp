#include <omp.h>

#include "hatkv/harness.hpp"

namespace hatkv {

namespace {

RunMetrics one(const RunConfig& base, std::uint64_t seed) {
  RunConfig cfg = base;
  cfg.seed = seed;
  return run_scenario(cfg).metrics;
}

}  // namespace

std::vector<RunMetrics> sweep_serial(const RunConfig& base, const std::vector<std::uint64_t>& seeds) {
  std::vector<RunMetrics> out;
  out.reserve(seeds.size());
  for (auto s : seeds) out.push_back(one(base, s));
  return out;
}

// Each run owns its simulation; results land in seed order. Exceptions are
// carried out of the parallel region and rethrown for the lowest index.
std::vector<RunMetrics> sweep_parallel(const RunConfig& base, const std::vector<std::uint64_t>& seeds) {
  std::vector<RunMetrics> out(seeds.size());
  std::vector<std::exception_ptr> errors(seeds.size());
  const auto n = static_cast<std::int64_t>(seeds.size());
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < n; ++i) {
    try {
      out[static_cast<std::size_t>(i)] = one(base, seeds[static_cast<std::size_t>(i)]);
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

std::vector<std::vector<Finding>> check_batch_serial(const std::vector<History>& hs,
                                                     const std::vector<Phenomenon>& ps) {
  std::vector<std::vector<Finding>> out;
  out.reserve(hs.size());
  for (const auto& h : hs) out.push_back(Checker(h).detect(ps));
  return out;
}

std::vector<std::vector<Finding>> check_batch_parallel(const std::vector<History>& hs,
                                                       const std::vector<Phenomenon>& ps) {
  std::vector<std::vector<Finding>> out(hs.size());
  std::vector<std::exception_ptr> errors(hs.size());
  const auto n = static_cast<std::int64_t>(hs.size());
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < n; ++i) {
    try {
      out[static_cast<std::size_t>(i)] = Checker(hs[static_cast<std::size_t>(i)]).detect(ps);
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

}  // namespace hatkv
