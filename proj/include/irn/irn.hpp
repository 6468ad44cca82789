#pragma once

#include "irn/errors.hpp"
#include "irn/eval.hpp"
#include "irn/invnet.hpp"
#include "irn/latent_codec.hpp"
#include "irn/metrics.hpp"
#include "irn/model.hpp"
#include "irn/optim.hpp"
#include "irn/pngio.hpp"
#include "irn/tensor.hpp"
#include "irn/training.hpp"
#include "irn/wavelet.hpp"
