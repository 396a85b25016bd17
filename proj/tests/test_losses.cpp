#include "doctest.h"

TEST_SUITE("losses") {}
