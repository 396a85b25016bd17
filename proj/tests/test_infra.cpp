#include "doctest.h"

TEST_SUITE("infra") {}
