#pragma once

#include "statfem/errors.hpp"
#include "statfem/experiments.hpp"
#include "statfem/fem.hpp"
#include "statfem/gaussian.hpp"
#include "statfem/gp_field.hpp"
#include "statfem/io.hpp"
#include "statfem/linear_model.hpp"
#include "statfem/mesh.hpp"
#include "statfem/nonlinear.hpp"
#include "statfem/random.hpp"
#include "statfem/samplers.hpp"
#include "statfem/version.hpp"
