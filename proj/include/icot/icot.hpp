#pragma once

#include "icot/ads.hpp"
#include "icot/decoder.hpp"
#include "icot/error.hpp"
#include "icot/image.hpp"
#include "icot/matrix.hpp"
#include "icot/model.hpp"
#include "icot/overlay.hpp"
#include "icot/prompting.hpp"
#include "icot/rng.hpp"
#include "icot/tokens.hpp"
#include "icot/trace_io.hpp"
