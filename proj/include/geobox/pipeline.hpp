#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "geobox/matching.hpp"
#include "geobox/proposal.hpp"
#include "geobox/ranking.hpp"
#include "geobox/refine.hpp"

namespace geobox {

enum class Version { Base, V1, V2, V3, V4 };

/// Feature toggles of one ablation version.
struct AblationConfig {
  Version version = Version::V4;
  bool hmm = true;
  bool motion_constraints = true;
  bool shape_preference = true;
  bool refinement = true;

  static AblationConfig of(Version v);
  static std::vector<AblationConfig> all();
  std::string name() const;
  MatchFeatures features() const { return {motion_constraints, shape_preference}; }
};

/// "base", "v1" ... "v4" (case-insensitive). Throws ConfigError.
Version parse_version(const std::string& s);
std::string version_name(Version v);

/// Everything the stages after proposal consume.
struct StageModels {
  HmmParams v1, v2, v3;
  std::optional<RefinerModel> refiner;
  std::optional<RankerModel> ranker;

  const HmmParams& params_for(Version v) const;
  /// Same parameters for every HMM version.
  static StageModels uniform(const HmmParams& p);
};

/// A clip with its Stage-1 output and the parameter-independent matcher input.
/// Not movable: the match setup points into the proposal.
struct PreparedClip {
  const Clip* clip = nullptr;
  ProposalResult proposal;
  MatchSetup setup;

  PreparedClip() = default;
  PreparedClip(const PreparedClip&) = delete;
  PreparedClip& operator=(const PreparedClip&) = delete;
};

std::unique_ptr<PreparedClip> prepare_clip(const Clip& clip, const ProposalParams& proposal = {},
                                           double speed_window_s = HmmParams{}.speed_window_s);

struct TrackOutput {
  MatchResult match;
  std::vector<std::optional<BoundingBox>> stage2;  // matched candidate boxes
  std::vector<std::optional<BoundingBox>> final;   // after refinement when enabled
  std::vector<std::optional<double>> scores;       // quality per present box
};

/// Stage 2 to 4 for one clip under one ablation version. Without a refiner the
/// refinement stage is skipped; without a ranker every box scores 1.
TrackOutput annotate(const PreparedClip& clip, const AblationConfig& config, const StageModels& models);

}  // namespace geobox
