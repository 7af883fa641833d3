#pragma once

// Finite-difference oracle for gradients.  The loss builder is re-invoked
// after nudging single parameter entries, so the analytic gradient from one
// backward() pass can be compared against centered differences computed
// entirely without the tape.

#include <cstdint>
#include <functional>
#include <vector>

#include "retex/rng.hpp"
#include "retex/tensor.hpp"

struct FdReport {
  double max_rel_err = 0;
  std::size_t checked = 0;
};

// params: leaves with requires_grad = true that `loss_fn` reads.
// loss_fn: rebuilds the scalar loss from the current parameter values.
// probes_per_param: 0 checks every entry, otherwise a random subset.
inline FdReport fd_check(const std::vector<retex::Tensor>& params,
                         const std::function<retex::Tensor()>& loss_fn,
                         double eps = 1e-5, std::size_t probes_per_param = 0,
                         std::uint64_t probe_seed = 1) {
  for (const auto& p : params) p.zero_grad();
  retex::Tensor loss = loss_fn();
  loss.backward();

  std::vector<std::vector<double>> analytic;
  for (const auto& p : params) {
    if (p.has_grad()) {
      analytic.emplace_back(p.grad().begin(), p.grad().end());
    } else {
      analytic.emplace_back(p.numel(), 0.0);
    }
  }

  retex::Rng rng(probe_seed);
  FdReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    std::vector<double>& value = params[pi].raw();
    std::vector<std::size_t> entries;
    if (probes_per_param == 0 || probes_per_param >= value.size()) {
      entries.resize(value.size());
      for (std::size_t i = 0; i < value.size(); ++i) entries[i] = i;
    } else {
      for (std::size_t i = 0; i < probes_per_param; ++i)
        entries.push_back(rng.index(value.size()));
    }
    for (std::size_t i : entries) {
      double saved = value[i];
      value[i] = saved + eps;
      double up = loss_fn().item();
      value[i] = saved - eps;
      double down = loss_fn().item();
      value[i] = saved;
      double numeric = (up - down) / (2 * eps);
      double a = analytic[pi][i];
      double denom = std::max(std::abs(a), std::abs(numeric));
      double err;
      if (denom < 1e-6) {
        err = std::abs(a - numeric) > 1e-8 ? 1.0 : 0.0;
      } else {
        err = std::abs(a - numeric) / denom;
      }
      report.max_rel_err = std::max(report.max_rel_err, err);
      ++report.checked;
    }
  }
  for (const auto& p : params) p.zero_grad();
  return report;
}
