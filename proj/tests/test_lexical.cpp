#include <doctest.h>

#include <cmath>

#include "semfilter/lexical.hpp"

using namespace semfilter;

TEST_SUITE("lexical") {

TEST_CASE("tokenizer lowercases alphanumeric runs") {
  CHECK(tokenize("Hello, World! x2 -- ok") == std::vector<std::string>{"hello", "world", "x2", "ok"});
  CHECK(tokenize("").empty());
  CHECK(tokenize("café au lait") == std::vector<std::string>{"café", "au", "lait"});
}

TEST_CASE("bm25 matches a hand computation") {
  // Corpus: d0 = "apple banana", d1 = "apple apple cherry", d2 = "date".
  LexicalIndex index({{0, "apple banana"}, {1, "apple apple cherry"}, {2, "date"}});
  const double n = 3.0, avg = 6.0 / 3.0, k1 = 1.2, b = 0.75;
  auto idf = [&](double df) { return std::log(1.0 + (n - df + 0.5) / (df + 0.5)); };
  // Query d0 against document d1: only "apple" matches, tf = 2, |d1| = 3.
  const double len_factor = k1 * (1 - b + b * 3.0 / avg);
  const double expected = idf(2) * 2.0 * (k1 + 1) / (2.0 + len_factor);
  CHECK(index.score(0, 1) == doctest::Approx(expected).epsilon(1e-12));
  // Query d1 against d0: distinct query terms apple, cherry; apple tf = 1 in d0.
  const double len0 = k1 * (1 - b + b * 2.0 / avg);
  const double reverse = idf(2) * 1.0 * (k1 + 1) / (1.0 + len0);
  CHECK(index.score(1, 0) == doctest::Approx(reverse).epsilon(1e-12));
  CHECK(index.symmetric_score(0, 1) == doctest::Approx(0.5 * (expected + reverse)).epsilon(1e-12));
  CHECK(index.symmetric_score(1, 0) == index.symmetric_score(0, 1));
  CHECK(index.score(0, 2) == 0.0);
}

TEST_CASE("idf is never negative") {
  LexicalIndex index({{0, "the cat"}, {1, "the dog"}, {2, "the end"}});
  CHECK(index.score(0, 1) > 0.0);  // "the" appears everywhere yet still counts
}

TEST_CASE("identical documents share a term multiset") {
  LexicalIndex index({{0, "red apple pie"}, {1, "Pie, apple RED"}, {2, "red apple"}});
  CHECK(index.same_terms(0, 1));
  CHECK_FALSE(index.same_terms(0, 2));
  CHECK_THROWS_AS(index.score(0, 7), Error);
  CHECK_THROWS_AS(LexicalIndex({{1, "a"}, {1, "b"}}), Error);
}

}
