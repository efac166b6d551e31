#ifndef GOGNN_GOGNN_HPP
#define GOGNN_GOGNN_HPP

#include "gognn/cli.hpp"
#include "gognn/config.hpp"
#include "gognn/error.hpp"
#include "gognn/evalpred.hpp"
#include "gognn/gog.hpp"
#include "gognn/hgnn.hpp"
#include "gognn/ingest.hpp"
#include "gognn/io.hpp"
#include "gognn/rng.hpp"
#include "gognn/siamese.hpp"
#include "gognn/synth.hpp"
#include "gognn/tensor.hpp"

#endif  // GOGNN_GOGNN_HPP
