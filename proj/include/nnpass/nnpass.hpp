#pragma once

#include "nnpass/attack.hpp"
#include "nnpass/config.hpp"
#include "nnpass/dataset.hpp"
#include "nnpass/errors.hpp"
#include "nnpass/io.hpp"
#include "nnpass/model.hpp"
#include "nnpass/ops.hpp"
#include "nnpass/parallel.hpp"
#include "nnpass/passport_gen.hpp"
#include "nnpass/passport_layer.hpp"
#include "nnpass/rng.hpp"
#include "nnpass/serialize.hpp"
#include "nnpass/stats.hpp"
#include "nnpass/tensor.hpp"
#include "nnpass/train.hpp"
#include "nnpass/verify.hpp"
