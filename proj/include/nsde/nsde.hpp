#pragma once

// Everything in one include.

#include "nsde/adam.hpp"
#include "nsde/brownian.hpp"
#include "nsde/checkpoint.hpp"
#include "nsde/config.hpp"
#include "nsde/dataset.hpp"
#include "nsde/errors.hpp"
#include "nsde/gradcheck.hpp"
#include "nsde/lab.hpp"
#include "nsde/mlp.hpp"
#include "nsde/model.hpp"
#include "nsde/oracles.hpp"
#include "nsde/path.hpp"
#include "nsde/rng.hpp"
#include "nsde/solver.hpp"
#include "nsde/tensor.hpp"
#include "nsde/training.hpp"
#include "nsde/wasserstein.hpp"
