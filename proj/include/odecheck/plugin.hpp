#pragma once

// Interface for out-of-tree models. A plugin is a shared object built against
// these headers with the same compiler. It declares its dimension and
// parameter names through PosteriorModel, its RHS through system(), and its
// priors and likelihood through log_prior / log_likelihood. Deriving from
// OdeModelBase gives both the double and the Dual overloads from one template.
//
//   extern "C" odecheck::PosteriorModel* odecheck_create_model(const char* data_path);
//
// `data_path` is the `data` config value, possibly empty. Ownership of the
// returned object passes to the caller. Throwing is allowed.

#include "odecheck/models.hpp"

#define ODECHECK_PLUGIN_ENTRY "odecheck_create_model"

namespace odecheck {
using PluginFactory = PosteriorModel* (*)(const char* data_path);
}  // namespace odecheck
