#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "geobox/clip.hpp"
#include "geobox/proposal.hpp"

namespace geobox {

/// Every tunable of the GPS/object HMM.
struct HmmParams {
  double sigma_emission = 3.0;  // m
  double p_trans = 0.01;
  double sigma_trans = 2.0;  // m
  double sigma_shape = 0.5;
  double v_thr1 = 1.0;      // m/s, GPS speed that arms the speed constraint
  double v_thr2 = 0.3;      // m/s, candidate speed below which it counts as stationary
  double theta_thr = -0.5;  // heading dot-product floor
  double speed_window_s = 5.0;
  double boundary_emission = 1e-3;
  double boundary_self = 0.99;

  friend bool operator==(const HmmParams&, const HmmParams&) = default;
};

/// Throws ConfigError when a sigma is not positive or a probability is outside (0,1].
void validate(const HmmParams& params);

/// Which Stage-2 refinements are switched on (V1 = none, V2 = motion, V3 = both).
struct MatchFeatures {
  bool motion_constraints = true;
  bool shape_preference = true;
};

using Heading = std::array<double, 2>;

/// GPS interpolated to frame rate.
struct GpsFrames {
  std::vector<WorldPoint> position;
  std::vector<double> speed;
  std::vector<std::optional<Heading>> heading;
  // Minimum speed over the speed window starting at each frame.
  std::vector<double> window_min_speed;
};

GpsFrames gps_features(const GpsTrace& trace, int n_frames, int fps, double speed_window_s,
                       double heading_min_speed = 0.2);

/// The GPS quantities one emission evaluation reads.
struct GpsObservation {
  WorldPoint position;
  double window_min_speed = 0.0;
  std::optional<Heading> heading;
};

enum class StateKind { Candidate, Boundary };

enum class FrameEdge { Left = 0, Top = 1, Right = 2, Bottom = 3 };

struct LatticeState {
  StateKind kind = StateKind::Candidate;
  int candidate = -1;  // index into the frame's candidate list
  FrameEdge edge = FrameEdge::Left;
  int cof = -1;
  WorldPoint world;
  BoundingBox bbox;
  double speed = 0.0;
  std::optional<Heading> heading;
  std::span<const std::int64_t> members;
  // World position of the nearest point on each frame edge (candidates only).
  std::array<WorldPoint, 4> edge_world{};
};

/// -(d / 2 sigma)^2, or -inf when a motion constraint fires.
double emission_log_prob(const GpsObservation& y, const LatticeState& s, const HmmParams& params,
                         bool motion_constraints = true);

/// log T for a transition between adjacent frames.
double transition_log_prob(const LatticeState& a, const LatticeState& b, const HmmParams& params,
                           bool shape_preference = true);

/// Candidates in adjacent frames count as one object when they share a COF or
/// more than half of the flows of the larger member set.
bool same_object(const LatticeState& a, const LatticeState& b);

struct HmmLattice {
  std::vector<std::vector<LatticeState>> states;
  std::vector<std::vector<double>> log_emission;
  // log_transition[n] is row-major |states[n]| x |states[n+1]|.
  std::vector<std::vector<double>> log_transition;

  std::size_t n_frames() const { return log_emission.size(); }
};

/// Parameter-independent part of a lattice: states and pairwise geometry.
struct LatticeGeometry {
  std::vector<std::vector<LatticeState>> states;
  struct Pair {
    bool same = false;
    double world_distance = 0.0;
    double shape_distance = 0.0;
  };
  std::vector<std::vector<Pair>> pairs;  // row-major like HmmLattice::log_transition
};

LatticeGeometry build_geometry(const CandidateFrames& frames, const Homography& h, int frame_width,
                               int frame_height);

HmmLattice materialize(const LatticeGeometry& geometry, const GpsFrames& gps, const HmmParams& params,
                       const MatchFeatures& features);

/// One state per candidate plus four frame-edge states per frame.
HmmLattice build_lattice(const Clip& clip, const CandidateFrames& frames, const GpsFrames& gps,
                         const HmmParams& params, const MatchFeatures& features = {});

struct MatchResult {
  std::vector<int> state;      // lattice state per frame
  std::vector<int> candidate;  // candidate index per frame, -1 when out of frame
  std::vector<double> contribution;
  double log_likelihood = 0.0;

  std::vector<std::optional<BoundingBox>> boxes(const CandidateFrames& frames) const;
};

/// MAP path; ties go to the lowest state index. Throws AllPathsImpossible.
MatchResult viterbi(const HmmLattice& lattice);

/// Per frame, the candidate whose ground point is closest to the GPS position.
MatchResult nearest_box_baseline(const CandidateFrames& frames, const GpsFrames& gps, const Homography& h);

/// Inputs the matcher needs for one clip, prepared once and reused across trials.
struct MatchSetup {
  const Clip* clip = nullptr;
  const CandidateFrames* frames = nullptr;
  GpsFrames gps;
  LatticeGeometry geometry;
};

MatchSetup prepare_match(const Clip& clip, const CandidateFrames& frames, double speed_window_s);

/// Viterbi over a prepared clip; an impossible lattice yields an all-out-of-frame result.
MatchResult run_match(const MatchSetup& setup, const HmmParams& params, const MatchFeatures& features);

struct SearchSpace {
  std::array<double, 2> sigma_emission{0.5, 20.0};
  std::array<double, 2> p_trans{1e-6, 0.5};
  std::array<double, 2> sigma_trans{0.5, 30.0};
  std::array<double, 2> sigma_shape{0.05, 3.0};
  std::array<double, 2> boundary_emission{1e-8, 1e-1};
  std::array<double, 2> v_thr1{0.3, 8.0};
  std::array<double, 2> v_thr2{0.05, 1.0};
  std::array<double, 2> theta_thr{-1.0, 0.5};
};

struct SearchResult {
  HmmParams params;
  double objective = 0.0;
  int best_trial = 0;
};

enum SearchGroup : unsigned {
  kSearchCore = 1,    // sigma_emission, p_trans, sigma_trans, boundary_emission
  kSearchMotion = 2,  // v_thr1, v_thr2, theta_thr
  kSearchShape = 4,   // sigma_shape
  kSearchAll = 7,
};

/// Seeded random search (log-uniform sigmas and probabilities, uniform
/// thresholds) maximizing mean precision-at-IoU-0.5 over clips with ground truth.
/// Only the parameters in `groups` are sampled; trial 0 evaluates `base` as is.
SearchResult search_hyperparams(std::span<const MatchSetup> clips, const MatchFeatures& features, int budget,
                                std::uint64_t seed, const HmmParams& base = {}, const SearchSpace& space = {},
                                int jobs = 1, unsigned groups = kSearchAll);

struct StagedSearch {
  SearchResult v1, v2, v3;
};

/// V1 tunes the core parameters; V2 adds the motion thresholds on top of the
/// V1 optimum and V3 adds the shape scale on top of V2.
StagedSearch search_staged(std::span<const MatchSetup> clips, int budget, std::uint64_t seed, int jobs = 1);

}  // namespace geobox
