#pragma once

// Central-finite-difference verification of analytic gradients. The numeric
// side never touches the tape: the loss function is re-evaluated with
// perturbed parameters and no recording.

#include <cmath>
#include <string>
#include <vector>

#include "tit/tensor.hpp"

namespace tit {

template <class Real>
struct GradCheckEntry {
  std::string name;
  Real max_rel_err = 0;
  std::size_t worst_index = 0;
};

template <class Real>
struct GradCheckReport {
  std::vector<GradCheckEntry<Real>> per_param;
  Real max_rel_err = 0;
  Real tol = 0;
  bool passed = false;
};

// f: () -> scalar Tensor<Real>, deterministic (dropout disabled).
// `floor` guards the relative-error denominator so near-zero gradients are
// compared absolutely at scale `floor`.
template <class Real, class F>
GradCheckReport<Real> finite_difference_check(F&& f,
                                              const std::vector<std::pair<std::string, Tensor<Real>>>& params,
                                              Real h, Real tol, Real floor) {
  for (auto& [name, p] : params) {
    (void)name;
    const_cast<Tensor<Real>&>(p).zero_grad();
  }

  // Analytic pass.
  {
    Tape<Real> tape;
    TapeScope<Real> scope(tape);
    Tensor<Real> loss = f();
    tape.backward(loss);
  }
  std::vector<std::vector<Real>> analytic;
  analytic.reserve(params.size());
  for (auto& [name, p] : params) {
    (void)name;
    analytic.push_back(const_cast<Tensor<Real>&>(p).grad());
  }

  GradCheckReport<Real> report;
  report.tol = tol;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<Real>& p = const_cast<Tensor<Real>&>(params[pi].second);
    GradCheckEntry<Real> entry;
    entry.name = params[pi].first;
    for (std::size_t i = 0; i < p.numel(); ++i) {
      Real saved = p.value()[i];
      p.value()[i] = saved + h;
      Real f_plus = f().item();
      p.value()[i] = saved - h;
      Real f_minus = f().item();
      p.value()[i] = saved;
      Real numeric = (f_plus - f_minus) / (2 * h);
      Real a = analytic[pi][i];
      Real denom = std::max({std::abs(a), std::abs(numeric), floor});
      Real rel = std::abs(a - numeric) / denom;
      if (rel > entry.max_rel_err) {
        entry.max_rel_err = rel;
        entry.worst_index = i;
      }
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.per_param.push_back(std::move(entry));
  }
  report.passed = report.max_rel_err < tol;
  return report;
}

}  // namespace tit
