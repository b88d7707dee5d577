#pragma once

#include "eiou/common.hpp"
#include "eiou/corpus.hpp"
#include "eiou/decode_eval.hpp"
#include "eiou/gradcheck.hpp"
#include "eiou/losses.hpp"
#include "eiou/rope.hpp"
#include "eiou/scorer.hpp"
#include "eiou/span_tensor.hpp"
#include "eiou/sweep.hpp"
#include "eiou/trainer.hpp"
