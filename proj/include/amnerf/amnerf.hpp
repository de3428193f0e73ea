#pragma once

#include "amnerf/common.hpp"
#include "amnerf/geometry.hpp"
#include "amnerf/field.hpp"
#include "amnerf/training.hpp"
#include "amnerf/subdivision.hpp"
#include "amnerf/tree_io.hpp"
#include "amnerf/sampling.hpp"
#include "amnerf/scheduler.hpp"
#include "amnerf/renderer.hpp"
#include "amnerf/scene_config.hpp"
#include "amnerf/ablation.hpp"
