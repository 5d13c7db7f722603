#pragma once

#include "phenowave/config.hpp"
#include "phenowave/error.hpp"
#include "phenowave/grid.hpp"
#include "phenowave/io.hpp"
#include "phenowave/measure.hpp"
#include "phenowave/operators.hpp"
#include "phenowave/parabolic.hpp"
#include "phenowave/parallel.hpp"
#include "phenowave/perron.hpp"
#include "phenowave/spectral.hpp"
#include "phenowave/stationary.hpp"
#include "phenowave/validation.hpp"
#include "phenowave/waves.hpp"
