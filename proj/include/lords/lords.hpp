#pragma once

#include "lords/adamw.hpp"
#include "lords/blockwise.hpp"
#include "lords/codebook.hpp"
#include "lords/error.hpp"
#include "lords/io.hpp"
#include "lords/matrix.hpp"
#include "lords/metrics.hpp"
#include "lords/peft.hpp"
#include "lords/random.hpp"
#include "lords/refine.hpp"
#include "lords/ste.hpp"
