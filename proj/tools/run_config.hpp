#pragma once

#include "uae/adareg.hpp"
#include "uae/matching.hpp"
#include "uae/model.hpp"
#include "uae/phantom.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace uae::cli {

/// How phantom-gen draws each case of a suite.
struct SuiteSpec {
  bool pairs = false;  // write a second, transformed scan per case
  double max_rotation_deg = 5.0;
  double max_translation_mm = 4.0;
  ModalityRemap remap = ModalityRemap::identity;
  int fov_margin = 0;  // voxels cropped from every side of scan B
};

struct RunConfig {
  std::uint64_t seed = 0;
  TrainConfig train;  // includes the augmentation spec
  AdaRegConfig adareg;  // includes the fixed-point config
  std::optional<SimilarityWeights> weights;  // empty: defaults for the embedding set
  PhantomSpec phantom;
  SuiteSpec suite;

  void validate() const;
};

/// Parses `section.key = value` settings. Keys outside the known set are
/// rejected with InvalidArgument naming the key.
RunConfig parse_run_config(std::istream& in, const std::string& source);
RunConfig load_run_config(const std::filesystem::path& path);

/// Every setting in the same format, so the echo can be fed back as a config.
std::string format_run_config(const RunConfig& cfg);

/// Names of all accepted keys, `section.key`.
std::vector<std::string> run_config_keys();

}  // namespace uae::cli
