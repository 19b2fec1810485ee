#ifndef HESSLAB_HESSLAB_HPP
#define HESSLAB_HESSLAB_HPP

#include "hesslab/activation.hpp"
#include "hesslab/dynamics.hpp"
#include "hesslab/errors.hpp"
#include "hesslab/hessian.hpp"
#include "hesslab/hessian_analytic.hpp"
#include "hesslab/hessian_empirical.hpp"
#include "hesslab/io.hpp"
#include "hesslab/net.hpp"
#include "hesslab/parallel.hpp"
#include "hesslab/quadrature.hpp"
#include "hesslab/rng.hpp"
#include "hesslab/spectral.hpp"
#include "hesslab/theory.hpp"

#endif
