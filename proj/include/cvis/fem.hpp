#pragma once

#include "cvis/fem/assembly.hpp"
#include "cvis/fem/banded.hpp"
#include "cvis/fem/kl.hpp"
#include "cvis/fem/mesh.hpp"
#include "cvis/fem/mindlin.hpp"
#include "cvis/fem/plane_stress.hpp"
#include "cvis/fem/quadrature.hpp"
