#define DOCTEST_CONFIG_IMPLEMENT
#include "doctest.h"
#include "nuta/tensor.hpp"

int main(int argc, char** argv) {
  nuta::set_finite_checks(true);
  doctest::Context ctx;
  ctx.applyCommandLine(argc, argv);
  return ctx.run();
}
