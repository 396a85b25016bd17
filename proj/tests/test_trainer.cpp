#include "doctest.h"

TEST_SUITE("trainer") {}
