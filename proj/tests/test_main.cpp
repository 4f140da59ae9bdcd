#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "poft/tensor.hpp"

int main(int argc, char** argv) {
  poft::set_checked_mode(true);
  return doctest::Context(argc, argv).run();
}
