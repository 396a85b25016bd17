#include "doctest.h"

TEST_SUITE("schema") {}
