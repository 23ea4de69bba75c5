#ifndef GARET_GARET_HPP
#define GARET_GARET_HPP

#include "garet/core.hpp"
#include "garet/dataset.hpp"
#include "garet/encoder.hpp"
#include "garet/eval.hpp"
#include "garet/finetune.hpp"
#include "garet/optimizer.hpp"
#include "garet/params_io.hpp"
#include "garet/pretrain.hpp"
#include "garet/selection.hpp"
#include "garet/video.hpp"

#endif  // GARET_GARET_HPP
