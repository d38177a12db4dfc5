#include "cdst/text.h"

#include <algorithm>

#include "doctest.h"

using namespace cdst;

TEST_SUITE("text") {
  TEST_CASE("normalize_text lowercases and collapses whitespace") {
    CHECK(normalize_text("  I need a  Hotel\tin the\nNorth ") == "i need a hotel in the north");
    CHECK(normalize_text("") == "");
    CHECK(normalize_text(" \t ") == "");
  }

  TEST_CASE("normalize_value applies the label map") {
    CHECK(normalize_value("hotel-area", "Center") == "centre");
    CHECK(normalize_value("hotel-type", "guesthouse") == "guest house");
    CHECK(normalize_value("hotel-pricerange", "moderately") == "moderate");
    CHECK(normalize_value("hotel-area", "") == "none");
    CHECK(normalize_value("hotel-area", "not mentioned") == "none");
    CHECK(normalize_value("hotel-area", "dont care") == "dontcare");
    CHECK(normalize_value("hotel-parking", "free") == "yes");
    CHECK(normalize_value("hotel-area", "free") == "free");
    CHECK(normalize_value("hotel-book people", "two") == "2");
    CHECK(normalize_value("hotel-name", "two") == "two");
    CHECK(normalize_value("train-leaveat", "9:15") == "09:15");
    CHECK(normalize_value("train-leaveat", "17.45") == "17:45");
  }

  TEST_CASE("normalize_value is idempotent on the map entries") {
    for (const char* v : {"Center", "guesthouses", "any", "mode", "5:30", "17.45", "three", "free"}) {
      for (const char* slot : {"hotel-area", "hotel-parking", "hotel-book stay", "taxi-leaveat"}) {
        const auto once = normalize_value(slot, v);
        CHECK(normalize_value(slot, once) == once);
      }
    }
  }

  TEST_CASE("value_variants start with the canonical value and all normalize to it") {
    const auto v = value_variants("hotel-book people", "2");
    REQUIRE(!v.empty());
    CHECK(v.front() == "2");
    CHECK(std::find(v.begin(), v.end(), "two") != v.end());
    for (const auto& s : v) CHECK(normalize_value("hotel-book people", s) == "2");
    const auto t = value_variants("train-leaveat", "09:15");
    CHECK(std::find(t.begin(), t.end(), "9:15") != t.end());
  }

  TEST_CASE("fnv1a64 matches the published test vectors") {
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
    CHECK(hex64(0xabcULL) == "0000000000000abc");
  }
}
