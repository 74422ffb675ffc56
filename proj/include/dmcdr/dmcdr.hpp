#pragma once

#include "dmcdr/autograd.hpp"
#include "dmcdr/config.hpp"
#include "dmcdr/data.hpp"
#include "dmcdr/diffusion.hpp"
#include "dmcdr/encoder.hpp"
#include "dmcdr/error.hpp"
#include "dmcdr/eval.hpp"
#include "dmcdr/params.hpp"
#include "dmcdr/pipeline.hpp"
#include "dmcdr/rng.hpp"
#include "dmcdr/run.hpp"
#include "dmcdr/schedule.hpp"
#include "dmcdr/synthetic.hpp"
#include "dmcdr/trainer.hpp"
#include "dmcdr/variants.hpp"
