// Copyright 2026 moesep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include "moesep/checkpoint.hpp"
#include "moesep/config.hpp"
#include "moesep/conformer.hpp"
#include "moesep/css.hpp"
#include "moesep/dsp.hpp"
#include "moesep/gradcheck.hpp"
#include "moesep/loss.hpp"
#include "moesep/mixsim.hpp"
#include "moesep/moe.hpp"
#include "moesep/nn.hpp"
#include "moesep/optimizer.hpp"
#include "moesep/tensor.hpp"
#include "moesep/train.hpp"
#include "moesep/verify.hpp"
#include "moesep/wav.hpp"
