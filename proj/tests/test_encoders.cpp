#include "doctest.h"

TEST_SUITE("encoders") {}
