#pragma once

#include "sacodec/autograd.hpp"
#include "sacodec/bitstream.hpp"
#include "sacodec/checkpoint.hpp"
#include "sacodec/codebook_io.hpp"
#include "sacodec/codec.hpp"
#include "sacodec/config.hpp"
#include "sacodec/corpus.hpp"
#include "sacodec/decoder.hpp"
#include "sacodec/discriminators.hpp"
#include "sacodec/encoder.hpp"
#include "sacodec/error.hpp"
#include "sacodec/hash.hpp"
#include "sacodec/losses.hpp"
#include "sacodec/model.hpp"
#include "sacodec/nn.hpp"
#include "sacodec/optim.hpp"
#include "sacodec/quantizer.hpp"
#include "sacodec/random.hpp"
#include "sacodec/resample.hpp"
#include "sacodec/signal.hpp"
#include "sacodec/tensor.hpp"
#include "sacodec/trainer.hpp"
#include "sacodec/wav.hpp"
