#include "doctest.h"

#include "run_config.hpp"
#include "uae/error.hpp"

#include <fstream>
#include <set>
#include <sstream>

using namespace uae;
using namespace uae::cli;

namespace {

RunConfig parse(const std::string& text) {
  std::istringstream in(text);
  return parse_run_config(in, "test");
}

ErrorCode code_of(const std::string& text) {
  try {
    parse(text);
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("accepted: " << text);
  return ErrorCode::IoError;
}

}  // namespace

TEST_CASE("empty config gives the defaults") {
  const RunConfig c = parse("");
  CHECK(c.seed == 0);
  CHECK(c.train.steps == TrainConfig{}.steps);
  CHECK(c.adareg.margins == AdaRegConfig{}.margins);
  CHECK(!c.weights);
  CHECK(c.phantom.dims == PhantomSpec{}.dims);
}

TEST_CASE("sections map onto the module configs") {
  const RunConfig c = parse(R"(
seed = 42   # top level
[train]
steps = 12
learning_rate = 0.005
[augment]
aggressive = true
patch_size = [16, 16, 8]
bezier_control_points = [0.2, 0.1, 0.8, 0.9]
[adareg]
margins = [7, 3]
matcher = "fixpoint"
[fixpoint]
L = 3
tau_dis = 2.5
[weights]
coarse = 0.3
fine = 0.7
[phantom]
dims = [40, 48, 56]
num_organs = 3
[suite]
pairs = true
remap = "mri"
fov_margin = 4
)");
  CHECK(c.seed == 42);
  CHECK(c.train.seed == 42);
  CHECK(c.train.steps == 12);
  CHECK(c.train.learning_rate == 0.005);
  CHECK(c.train.augment.aggressive);
  CHECK(c.train.augment.patch_size == std::array<int, 3>{16, 16, 8});
  CHECK(c.train.augment.bezier_control_points[3] == 0.9);
  CHECK(c.adareg.margins == std::vector<int>{7, 3});
  CHECK(c.adareg.matcher == MatcherKind::fixpoint);
  CHECK(c.adareg.fixpoint.L == 3);
  CHECK(c.adareg.fixpoint.tau_dis == 2.5);
  REQUIRE(c.weights);
  CHECK(c.weights->fine == 0.7);
  CHECK(c.phantom.dims == std::array<int, 3>{40, 48, 56});
  CHECK(c.phantom.num_organs == 3);
  CHECK(c.suite.pairs);
  CHECK(c.suite.remap == ModalityRemap::mri);
  CHECK(c.suite.fov_margin == 4);
}

TEST_CASE("unknown keys and bad values are rejected") {
  CHECK(code_of("[train]\nstep = 3\n") == ErrorCode::InvalidArgument);
  CHECK(code_of("bogus = 1\n") == ErrorCode::InvalidArgument);
  CHECK(code_of("[nosuch]\nsteps = 3\n") == ErrorCode::InvalidArgument);
  CHECK(code_of("[train]\nsteps = many\n") == ErrorCode::InvalidArgument);
  CHECK(code_of("[train]\nsteps = 2.5\n") == ErrorCode::InvalidArgument);
  CHECK(code_of("[augment]\npatch_size = [16, 16]\n") == ErrorCode::InvalidArgument);
  CHECK(code_of("[fixpoint]\nL = 4\n") == ErrorCode::InvalidArgument);
  CHECK(code_of("seed = -1\n") == ErrorCode::InvalidArgument);
  CHECK(code_of("[adareg]\nmatcher = \"psychic\"\n") == ErrorCode::InvalidArgument);
}

TEST_CASE("the echoed config parses back to the same settings") {
  const RunConfig c = parse("seed = 7\n[train]\ntau_a = 0.25\n[adareg]\nmargins = []\n[weights]\ncoarse = 0.1\nfine = 0.9\n");
  CHECK(c.adareg.margins.empty());
  const std::string echo = format_run_config(c);
  const RunConfig d = parse(echo);
  CHECK(format_run_config(d) == echo);
  CHECK(d.seed == 7);
  CHECK(d.train.tau_a == 0.25);
  CHECK(d.weights->coarse == 0.1);

  // Without explicit weights the echo marks them as automatic and still loads.
  const std::string auto_echo = format_run_config(parse(""));
  CHECK(auto_echo.find("# coarse = auto") != std::string::npos);
  CHECK(!parse(auto_echo).weights);
}

TEST_CASE("every key is listed once") {
  const auto keys = run_config_keys();
  std::set<std::string> unique(keys.begin(), keys.end());
  CHECK(unique.size() == keys.size());
  CHECK(unique.count("seed") == 1);
  CHECK(unique.count("fixpoint.L") == 1);
}

TEST_CASE("the annotated example config holds the defaults") {
  const RunConfig example = load_run_config(UAE_EXAMPLE_CONFIG);
  RunConfig defaults;
  defaults.weights = SimilarityWeights{};
  CHECK(format_run_config(example) == format_run_config(defaults));

  // Every key is spelled out, not left to its default.
  std::ifstream in(UAE_EXAMPLE_CONFIG);
  std::size_t assignments = 0;
  for (std::string line; std::getline(in, line);) {
    assignments += !line.empty() && line[0] != '#' && line[0] != ' ' && line.find(" = ") != std::string::npos;
  }
  CHECK(assignments == run_config_keys().size());
}
