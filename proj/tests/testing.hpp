#pragma once

#include <torch/torch.h>

// c10 logging defines its own CHECK; the test macros take precedence.
#undef CHECK
#include "doctest.h"
