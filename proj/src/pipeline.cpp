#include "geobox/pipeline.hpp"

#include <algorithm>
#include <cctype>

#include "geobox/error.hpp"

namespace geobox {

AblationConfig AblationConfig::of(Version v) {
  switch (v) {
    case Version::Base: return {v, false, false, false, false};
    case Version::V1: return {v, true, false, false, false};
    case Version::V2: return {v, true, true, false, false};
    case Version::V3: return {v, true, true, true, false};
    case Version::V4: return {v, true, true, true, true};
  }
  return {};
}

std::vector<AblationConfig> AblationConfig::all() {
  return {of(Version::Base), of(Version::V1), of(Version::V2), of(Version::V3), of(Version::V4)};
}

std::string AblationConfig::name() const { return version_name(version); }

std::string version_name(Version v) {
  switch (v) {
    case Version::Base: return "base";
    case Version::V1: return "v1";
    case Version::V2: return "v2";
    case Version::V3: return "v3";
    case Version::V4: return "v4";
  }
  return "?";
}

Version parse_version(const std::string& s) {
  std::string l = s;
  std::transform(l.begin(), l.end(), l.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  for (Version v : {Version::Base, Version::V1, Version::V2, Version::V3, Version::V4})
    if (version_name(v) == l) return v;
  throw ConfigError("unknown version '" + s + "' (expected base, v1, v2, v3 or v4)");
}

const HmmParams& StageModels::params_for(Version v) const {
  switch (v) {
    case Version::V1: return v1;
    case Version::V2: return v2;
    default: return v3;
  }
}

StageModels StageModels::uniform(const HmmParams& p) {
  StageModels m;
  m.v1 = m.v2 = m.v3 = p;
  return m;
}

std::unique_ptr<PreparedClip> prepare_clip(const Clip& clip, const ProposalParams& proposal, double speed_window_s) {
  auto p = std::make_unique<PreparedClip>();
  p->clip = &clip;
  p->proposal = run_proposal(clip, proposal);
  p->setup = prepare_match(clip, p->proposal.frames, speed_window_s);
  return p;
}

TrackOutput annotate(const PreparedClip& clip, const AblationConfig& config, const StageModels& models) {
  TrackOutput out;
  const CandidateFrames& frames = clip.proposal.frames;
  out.match = config.hmm ? run_match(clip.setup, models.params_for(config.version), config.features())
                         : nearest_box_baseline(frames, clip.setup.gps, clip.clip->homography);
  out.stage2 = out.match.boxes(frames);
  out.final = config.refinement && models.refiner ? refine_track(out.stage2, *models.refiner) : out.stage2;
  if (models.ranker) {
    out.scores = score_track(out.final, *models.ranker);
  } else {
    out.scores.resize(out.final.size());
    for (std::size_t i = 0; i < out.final.size(); ++i)
      if (out.final[i]) out.scores[i] = 1.0;
  }
  return out;
}

}  // namespace geobox
