#pragma once

#include "aldrm/aldist.hpp"
#include "aldrm/dataset.hpp"
#include "aldrm/diagnostics.hpp"
#include "aldrm/modelspec.hpp"
#include "aldrm/random.hpp"
#include "aldrm/sampler.hpp"
#include "aldrm/selection.hpp"
#include "aldrm/simgen.hpp"
