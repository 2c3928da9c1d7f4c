#pragma once

#include "sthoi/ablation.hpp"
#include "sthoi/annotation.hpp"
#include "sthoi/augment.hpp"
#include "sthoi/autograd.hpp"
#include "sthoi/dataset.hpp"
#include "sthoi/error.hpp"
#include "sthoi/eval.hpp"
#include "sthoi/features.hpp"
#include "sthoi/frames.hpp"
#include "sthoi/geometry.hpp"
#include "sthoi/keyframes.hpp"
#include "sthoi/log.hpp"
#include "sthoi/manifest.hpp"
#include "sthoi/model.hpp"
#include "sthoi/nn.hpp"
#include "sthoi/profile.hpp"
#include "sthoi/synthetic.hpp"
#include "sthoi/tensor.hpp"
#include "sthoi/train.hpp"
#include "sthoi/verify.hpp"
