#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <string>

#include "sspo/rng.hpp"
#include "sspo/synth.hpp"
#include "sspo/tokenizer.hpp"

using namespace sspo;

namespace {

Tokenizer tok() { return Tokenizer::with_base_vocab({"NORM", "MI", "STTC", "CD", "HYP"}); }

}  // namespace

TEST_CASE("base vocabulary is within the expected size window") {
  const Tokenizer t = tok();
  CHECK(t.vocab_size() >= 64);
  CHECK(t.vocab_size() <= 128);
  CHECK(t.eos_id() >= 0);
  CHECK(t.unk_id() >= 0);
  CHECK(t.id_of("<think>") >= 0);
  CHECK(t.id_of("NORM") >= 0);
  CHECK(t.id_of("nonexistent-token") == -1);
}

TEST_CASE("duplicate labels do not create duplicate vocab entries") {
  const Tokenizer t = Tokenizer::with_base_vocab({"MI", "MI", "NORM"});
  int count = 0;
  for (const auto& v : t.vocab()) {
    if (v == "MI") ++count;
  }
  CHECK(count == 1);
}

TEST_CASE("encode handles tags, words, punctuation and digits") {
  const Tokenizer t = tok();
  const TokenSequence ids = t.encode("<answer>MI, NORM</answer>");
  REQUIRE(ids.size() == 6);
  CHECK(ids[0] == t.id_of("<answer>"));
  CHECK(ids[1] == t.id_of("MI"));
  CHECK(ids[2] == t.id_of(","));
  CHECK(ids[3] == t.id_of("NORM"));
  CHECK(ids[5] == t.id_of("</answer>"));

  const TokenSequence digits = t.encode("rate 72 .");
  REQUIRE(digits.size() == 4);
  CHECK(digits[1] == t.id_of("7"));
  CHECK(digits[2] == t.id_of("2"));
}

TEST_CASE("unknown words and tags map to <unk>") {
  const Tokenizer t = tok();
  const TokenSequence ids = t.encode("zebra <foo> ST");
  REQUIRE(ids.size() == 3);
  CHECK(ids[0] == t.unk_id());
  CHECK(ids[1] == t.unk_id());
  CHECK(ids[2] == t.id_of("ST"));
}

TEST_CASE("decode spacing reproduces canonical trace shapes") {
  const Tokenizer t = tok();
  const std::string text = "<answer>MI, NORM</answer>";
  CHECK(t.decode(t.encode(text)) == text);
  CHECK(t.decode(t.encode("Normal ECG.")) == "Normal ECG.");
  CHECK(t.decode(t.encode("rate 72.")) == "rate 72.");
}

TEST_CASE("encode(decode(ids)) is the identity on random id sequences") {
  const Tokenizer t = tok();
  std::mt19937_64 rng(5);
  for (int iter = 0; iter < 500; ++iter) {
    TokenSequence ids;
    const std::size_t len = 1 + bounded(rng, 40);
    for (std::size_t i = 0; i < len; ++i) {
      ids.push_back(static_cast<int>(bounded(rng, static_cast<std::uint64_t>(t.vocab_size()))));
    }
    CHECK(t.encode(t.decode(ids)) == ids);
  }
}

TEST_CASE("teacher traces tokenize without <unk>") {
  TaskSpec spec;
  spec.n_train = 50;
  spec.n_val = 0;
  spec.n_test = 0;
  const Dataset ds = generate_dataset(spec);
  const Tokenizer t = Tokenizer::with_base_vocab(spec.labels);
  for (const SynthRecord& rec : ds.train) {
    const TokenSequence ids = t.encode(rec.teacher_trace);
    CHECK(!ids.empty());
    for (int id : ids) CHECK(id != t.unk_id());
    // encode/parse round trip: decode re-parses to the same answer set
    const std::string text = t.decode(ids);
    CHECK(t.encode(text) == ids);
  }
}

TEST_CASE("tokenizer rejects malformed vocabularies") {
  CHECK_THROWS_AS(Tokenizer({"<eos>", "<unk>", "two words"}), std::invalid_argument);
  CHECK_THROWS_AS(Tokenizer({"<eos>", "<unk>", "dup", "dup"}), std::invalid_argument);
  CHECK_THROWS_AS(Tokenizer({"word"}), std::invalid_argument);  // specials missing
}
