#pragma once

// =============================================================================
// Umbrella header: the whole lattice homogenization laboratory.
//
//   grid        periodic lattice, fields, exact forward/backward calculus
//   fourier     FFT conventions, discrete symbols, plan cache
//   rng         counter-based deterministic sampling primitives
//   ensemble    stationary Gaussian fields and elliptic coefficient maps
//   elliptic    preconditioned Krylov solvers for -div(a D u) = div F
//   correctors  corrector hierarchy phi^n, sigma^n and effective tensors
//   commutator  homogenization commutators and their standard form
//   sensitivity test functions, functional derivatives, auxiliary fields
//   lab         experiment drivers, fitting, CSV/manifest persistence
// =============================================================================

#include "homlab/grid.hpp"
#include "homlab/fourier.hpp"
#include "homlab/rng.hpp"
#include "homlab/ensemble.hpp"
#include "homlab/elliptic.hpp"
#include "homlab/correctors.hpp"
#include "homlab/commutator.hpp"
#include "homlab/sensitivity.hpp"
#include "homlab/lab.hpp"
