#pragma once

#include "mclner/analysis.hpp"
#include "mclner/checkpoint.hpp"
#include "mclner/codeswitch.hpp"
#include "mclner/common.hpp"
#include "mclner/corpus.hpp"
#include "mclner/gradcheck.hpp"
#include "mclner/gradcheck_suite.hpp"
#include "mclner/io.hpp"
#include "mclner/lexicon.hpp"
#include "mclner/model.hpp"
#include "mclner/objectives.hpp"
#include "mclner/optim.hpp"
#include "mclner/relcodec.hpp"
#include "mclner/selftrain.hpp"
#include "mclner/synth.hpp"
#include "mclner/tape.hpp"
#include "mclner/tensor.hpp"
