#pragma once

#include "advlab/attacks.hpp"
#include "advlab/checkpoint.hpp"
#include "advlab/datasets.hpp"
#include "advlab/defenses.hpp"
#include "advlab/evaluation.hpp"
#include "advlab/image_io.hpp"
#include "advlab/network.hpp"
#include "advlab/parallel.hpp"
#include "advlab/random.hpp"
#include "advlab/targets.hpp"
#include "advlab/tensor.hpp"
