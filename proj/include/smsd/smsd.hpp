#pragma once

#include "smsd/ad/dsp_ops.hpp"
#include "smsd/ad/grad_check.hpp"
#include "smsd/ad/ops.hpp"
#include "smsd/ad/tape.hpp"
#include "smsd/audio.hpp"
#include "smsd/checkpoint.hpp"
#include "smsd/commands.hpp"
#include "smsd/config.hpp"
#include "smsd/error.hpp"
#include "smsd/features.hpp"
#include "smsd/fft.hpp"
#include "smsd/model.hpp"
#include "smsd/signal.hpp"
#include "smsd/synth.hpp"
#include "smsd/trainer.hpp"
