#include "doctest.h"

TEST_SUITE("eval") {}
