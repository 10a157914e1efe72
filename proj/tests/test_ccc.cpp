#include <doctest.h>
TEST_SUITE("ccc") {
TEST_CASE("placeholder") { CHECK(true); }
}
