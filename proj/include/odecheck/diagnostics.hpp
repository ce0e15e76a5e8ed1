#pragma once

#include <string>
#include <vector>

#include "odecheck/sampler.hpp"

namespace odecheck {

/// Draws of one scalar quantity, [chain][draw].
using ChainMatrix = std::vector<std::vector<double>>;

struct ParamSummary {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  double rhat = 0.0;
  double ess_bulk = 0.0;
  double ess_tail = 0.0;
  double ess_mean = 0.0;
  double mcse_mean = 0.0;
};

struct ConvergenceSummary {
  std::vector<ParamSummary> params;
  double max_rhat = 0.0;
  double min_ess_bulk = 0.0;
  double min_ess_tail = 0.0;
};

/// Split chains in half, dropping the middle draw when the length is odd.
ChainMatrix split_chains(const ChainMatrix& x);
/// Normal scores of the pooled fractional ranks, (r - 3/8) / (S + 1/4), ties averaged.
ChainMatrix rank_normalize(const ChainMatrix& x);

/// Classic R-hat on already-split chains.
double rhat_basic(const ChainMatrix& split);
/// ESS with Geyer's initial monotone sequence, on already-split chains.
double ess_basic(const ChainMatrix& split);

/// max of rank-normalized split-R-hat for the draws and for |x - median|.
double rhat_rank(const ChainMatrix& x);
double ess_bulk(const ChainMatrix& x);
/// min of the 5% and 95% quantile-indicator ESS.
double ess_tail(const ChainMatrix& x);
/// ESS for the mean, no rank normalization.
double ess_mean(const ChainMatrix& x);

/// Needs >= 2 chains and >= 100 draws each. Throws DegenerateChains when a
/// parameter is constant across all draws.
ConvergenceSummary convergence_summary(const Draws& draws);
ParamSummary summarize_param(const std::string& name, const ChainMatrix& x);

}  // namespace odecheck
