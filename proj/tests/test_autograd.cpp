#include "doctest.h"

TEST_SUITE("autograd") {}
