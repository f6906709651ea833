#pragma once

#include "eipnet/adam.hpp"
#include "eipnet/autodiff.hpp"
#include "eipnet/canny.hpp"
#include "eipnet/checkpoint.hpp"
#include "eipnet/config.hpp"
#include "eipnet/data.hpp"
#include "eipnet/embedder.hpp"
#include "eipnet/image.hpp"
#include "eipnet/image_io.hpp"
#include "eipnet/losses.hpp"
#include "eipnet/metrics.hpp"
#include "eipnet/model.hpp"
#include "eipnet/synth.hpp"
#include "eipnet/trainer.hpp"
