#pragma once

#include "core.hpp"
#include "dynamics.hpp"
#include "partition.hpp"
#include "identify.hpp"
#include "qp.hpp"
#include "geometry.hpp"
#include "uncertainty.hpp"
#include "control.hpp"
#include "lyapunov.hpp"
#include "verify.hpp"
#include "svg.hpp"
#include "config.hpp"
#include "harness.hpp"
