#pragma once

// Umbrella header for the automatic subdifferentiation engine and its
// verification oracles.

#include "subgrad/asd.hpp"
#include "subgrad/branch_program.hpp"
#include "subgrad/dsl.hpp"
#include "subgrad/eval.hpp"
#include "subgrad/library.hpp"
#include "subgrad/meter.hpp"
#include "subgrad/oracle.hpp"
#include "subgrad/polynomial.hpp"
#include "subgrad/program.hpp"
#include "subgrad/rational.hpp"
#include "subgrad/tape.hpp"
