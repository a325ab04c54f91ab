// csiam/csiam.hpp — umbrella header.

#pragma once

#include "csiam/alignment.hpp"
#include "csiam/checkpoint.hpp"
#include "csiam/config.hpp"
#include "csiam/contrastive.hpp"
#include "csiam/features.hpp"
#include "csiam/fft.hpp"
#include "csiam/grad_check.hpp"
#include "csiam/graph.hpp"
#include "csiam/losses.hpp"
#include "csiam/masking.hpp"
#include "csiam/model.hpp"
#include "csiam/optimizer.hpp"
#include "csiam/params.hpp"
#include "csiam/pipeline.hpp"
#include "csiam/probe.hpp"
#include "csiam/rng.hpp"
#include "csiam/rnnt.hpp"
#include "csiam/synthetic.hpp"
#include "csiam/tensor.hpp"
#include "csiam/trainer.hpp"
#include "csiam/warp.hpp"
#include "csiam/wav.hpp"
#include "csiam/wsola.hpp"
