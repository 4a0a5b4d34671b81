#include <doctest.h>

#include <cmath>

#include "kvmt/gradcheck.hpp"
#include "kvmt/linalg.hpp"

using namespace kvmt;

TEST_CASE("grad_check on a quadratic") {
  std::vector<double> x = {1.0, -2.0, 0.5};
  std::vector<double> g(3);
  auto loss = [&] {
    double s = 0;
    for (std::size_t i = 0; i < x.size(); ++i) s += (i + 1.0) * x[i] * x[i];
    return s;
  };
  for (std::size_t i = 0; i < 3; ++i) g[i] = 2.0 * (i + 1.0) * x[i];
  const GradCheckResult r = grad_check(loss, {{"x", &x, &g}});
  CHECK(r.checked == 3);
  CHECK(r.max_rel_err < 1e-8);
  // Parameters are restored.
  CHECK(x == std::vector<double>{1.0, -2.0, 0.5});

  g[1] += 1.0;
  const GradCheckResult bad = grad_check(loss, {{"x", &x, &g}});
  CHECK(bad.worst_param == "x");
  CHECK(bad.worst_index == 1);
  CHECK(bad.max_rel_err > 0.05);
}

TEST_CASE("grad_check sampling and failures") {
  std::vector<double> x(50, 0.3), g(50, 0.6);
  auto loss = [&] {
    double s = 0;
    for (double v : x) s += v * v;
    return s;
  };
  GradCheckOptions o;
  o.max_coords = 7;
  CHECK(grad_check(loss, {{"x", &x, &g}}, o).checked == 7);
  CHECK(grad_check(loss, {{"x", &x, &g}}, o).max_rel_err < 1e-8);

  auto nan_loss = [] { return std::nan(""); };
  CHECK_THROWS(grad_check(nan_loss, {{"x", &x, &g}}));
}

TEST_CASE("every backward pass agrees with finite differences") {
  const auto suite = run_gradient_suite(0);
  CHECK(suite.size() == 10);
  for (const auto& e : suite) {
    INFO(e.name << " " << e.max_rel_err << " at " << e.worst);
    CHECK(e.passed());
    CHECK(e.tolerance <= 1e-3);
  }
}
