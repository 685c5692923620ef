#pragma once

#include "occdepth/camera_geometry.hpp"
#include "occdepth/config.hpp"
#include "occdepth/dataset_io.hpp"
#include "occdepth/error.hpp"
#include "occdepth/eval.hpp"
#include "occdepth/gradcheck.hpp"
#include "occdepth/harness.hpp"
#include "occdepth/labels.hpp"
#include "occdepth/lifting.hpp"
#include "occdepth/losses.hpp"
#include "occdepth/nn.hpp"
#include "occdepth/oad.hpp"
#include "occdepth/pipeline.hpp"
#include "occdepth/report.hpp"
#include "occdepth/rng.hpp"
#include "occdepth/scenes.hpp"
#include "occdepth/tensor.hpp"
#include "occdepth/tensor_io.hpp"
#include "occdepth/toynet.hpp"
