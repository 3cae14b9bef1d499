#pragma once

// Umbrella header for the diffsat library: categorical-diffusion sampling of
// SAT solutions with a recurrent message-passing denoiser.

#include "diffsat/cnf.hpp"
#include "diffsat/common.hpp"
#include "diffsat/dataset.hpp"
#include "diffsat/denoiser.hpp"
#include "diffsat/diffusion.hpp"
#include "diffsat/enumerate.hpp"
#include "diffsat/eval.hpp"
#include "diffsat/instance_gen.hpp"
#include "diffsat/tensor.hpp"
#include "diffsat/trainer.hpp"
