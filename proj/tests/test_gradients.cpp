#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "gradcheck.hpp"

using namespace nst;

TEST_CASE("tracking loss gradient (original contexts)") {
  auto fx = testutil::make_grad_fixture();
  auto r = testutil::check_objective_gradients(fx.model, fx.batch, {true, false, false});
  INFO("worst ", r.worst_name, " rel ", r.worst_rel);
  CHECK(r.checked > 1000);
  CHECK(r.failed == 0);
}

TEST_CASE("tracking loss gradient (noised contexts)") {
  auto fx = testutil::make_grad_fixture();
  auto r = testutil::check_objective_gradients(fx.model, fx.batch, {false, true, false});
  INFO("worst ", r.worst_name, " rel ", r.worst_rel);
  CHECK(r.failed == 0);
}

TEST_CASE("contrastive loss gradient") {
  auto fx = testutil::make_grad_fixture();
  auto r = testutil::check_objective_gradients(fx.model, fx.batch, {false, false, true});
  INFO("worst ", r.worst_name, " rel ", r.worst_rel);
  CHECK(r.failed == 0);
}

TEST_CASE("full objective gradient") {
  auto fx = testutil::make_grad_fixture();
  auto r = testutil::check_objective_gradients(fx.model, fx.batch, {true, true, true});
  INFO("worst ", r.worst_name, " rel ", r.worst_rel);
  CHECK(r.failed == 0);
}

TEST_CASE("full objective gradient with a shared label encoder") {
  auto fx = testutil::make_grad_fixture(LabelMode::Shared);
  auto r = testutil::check_objective_gradients(fx.model, fx.batch, {true, true, true});
  INFO("worst ", r.worst_name, " rel ", r.worst_rel);
  CHECK(r.failed == 0);
}
