#pragma once

// Convenience header pulling in the whole library.

#include "fes_stack/cv_assembly.hpp"
#include "fes_stack/episode.hpp"
#include "fes_stack/episode_io.hpp"
#include "fes_stack/error.hpp"
#include "fes_stack/evaluation.hpp"
#include "fes_stack/kernel_io.hpp"
#include "fes_stack/model_selection.hpp"
#include "fes_stack/optimizer.hpp"
#include "fes_stack/rng.hpp"
#include "fes_stack/stacker.hpp"
#include "fes_stack/stats.hpp"
#include "fes_stack/synthetic.hpp"
