#pragma once

#include <stdexcept>
#include <string>

namespace geobox {

// Base of every error the library raises. Configuration problems (bad input
// files, schema violations) derive from ConfigError so the CLI can map them to
// exit code 2; everything else is a runtime failure.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class InvalidSpec : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class DegenerateCorrespondence : public Error {
 public:
  using Error::Error;
};

class PointAtInfinity : public Error {
 public:
  using Error::Error;
};

class EmptyClip : public Error {
 public:
  using Error::Error;
};

class AllPathsImpossible : public Error {
 public:
  using Error::Error;
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

class Diverged : public Error {
 public:
  using Error::Error;
};

class NoOverlapFrames : public Error {
 public:
  using Error::Error;
};

class TooFewClips : public Error {
 public:
  using Error::Error;
};

}  // namespace geobox
