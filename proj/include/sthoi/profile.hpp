#pragma once

#include <algorithm>

#include "sthoi/augment.hpp"
#include "sthoi/dataset.hpp"
#include "sthoi/model.hpp"
#include "sthoi/nn.hpp"

namespace sthoi {

/// Everything needed to train and evaluate one variant at desk scale.
struct ExperimentProfile {
  WindowConfig window;
  ModelConfig model;
  TrainConfig train;
  AugmentConfig augment;
};

/// Compact configuration sized for small synthetic clips on one CPU core.
/// `frame_short` is the shorter side of the dataset frames; inference keeps it.
inline ExperimentProfile desk_profile(Variant variant, std::size_t num_predicates, std::size_t frame_short,
                                      std::uint64_t seed) {
  ExperimentProfile p;
  p.window.length = 8;
  p.window.stride = 2;
  p.model.variant = variant;
  p.model.num_predicates = num_predicates;
  p.model.segment_len = p.window.length;
  p.model.backbone_channels = {8, 16, 32};
  p.model.roi = {2, 2, 2};
  p.model.hidden = 512;
  p.model.pose.mask_size = 8;
  p.model.seed = seed;
  p.train.base_lr = 0.05;
  p.train.batch_size = 4;
  p.train.epochs = 20;
  p.train.seed = seed;
  // Flips would mirror the one-sided approach geometry of the synthetic clips.
  p.train.augment = false;
  p.augment.short_min = frame_short;
  p.augment.short_max = frame_short + frame_short / 4;
  p.augment.crop = frame_short;
  p.augment.test_short = frame_short;
  return p;
}

}  // namespace sthoi
