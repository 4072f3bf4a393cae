#include "doctest.h"
#include "safl/gradcheck.hpp"

using namespace safl;

TEST_CASE("relative error definition") {
  CHECK(relative_error(1.0, 1.0, 1e-6) == 0.0);
  CHECK(relative_error(2.0, 1.0, 1e-6) == 0.5);
  CHECK(relative_error(0.0, 1e-9, 1e-6) == doctest::Approx(1e-3));  // floor 1e-6 dominates
}

TEST_CASE("every layer and loss passes on three seeds") {
  const auto results = gradcheck_suite({1, 2, 3});
  CHECK(results.size() == 3 * (10 + 9));
  for (const GradcheckResult& r : results) {
    INFO(r.name << ": " << r.max_rel_error << " over " << r.checked);
    CHECK(r.passed);
    CHECK(r.checked > 0);
  }
}

TEST_CASE("a wrong gradient is caught") {
  GradcheckOptions strict;
  strict.tolerance = 0.0;
  bool any_failed = false;
  for (const GradcheckResult& r : gradcheck_layers(1, strict)) any_failed = any_failed || !r.passed;
  CHECK(any_failed);
}
