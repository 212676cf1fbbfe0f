#include <catch_amalgamated.hpp>

#include <filesystem>

#include <hyperpersona/segmenter.hpp>

using namespace hyperpersona;

namespace {

std::vector<std::vector<std::string>> words_of(const SegmentedDocument& d) {
    std::vector<std::vector<std::string>> out;
    for (const auto& s : d.sentences) out.push_back(s.words);
    return out;
}

}  // namespace

TEST_CASE("preprocess lowercases and collapses whitespace") {
    CHECK(preprocess("Hello   World") == "hello world");
    CHECK(preprocess("I WENT home.") == "i went home.");
    CHECK(preprocess("  tabs\tand\nnewlines  ") == "tabs and newlines");
    CHECK(preprocess("") == "");
}

TEST_CASE("preprocess applies NFC") {
    // e + combining acute becomes the precomposed form.
    CHECK(preprocess("Cafe\xCC\x81") == "caf\xC3\xA9");
    CHECK(preprocess("\xC3\x89T\xC3\x89") == "\xC3\xA9t\xC3\xA9");
}

TEST_CASE("preprocess is idempotent") {
    for (std::string s : {"Hello   World", "I WENT home.", "  A b  C!! ", "Cafe\xCC\x81 \xC3\x89T\xC3\x89", "x"}) {
        const auto once = preprocess(s);
        CHECK(preprocess(once) == once);
    }
}

TEST_CASE("two sentences with edge punctuation stripped") {
    const auto d = segment("d", "I am happy. It rains.");
    REQUIRE(d.sentences.size() == 2);
    CHECK(words_of(d) == std::vector<std::vector<std::string>>{{"i", "am", "happy"}, {"it", "rains"}});
    CHECK(d.sentences[0].index == 1);
    CHECK(d.sentences[1].index == 2);
    CHECK(d.sentences[0].text == "i am happy.");
    CHECK(d.word_count() == 5);
}

TEST_CASE("text without a terminal mark is one sentence") {
    const auto d = segment("d", "hello");
    REQUIRE(d.sentences.size() == 1);
    CHECK(d.sentences[0].words == std::vector<std::string>{"hello"});
}

TEST_CASE("question and exclamation marks end sentences") {
    const auto d = segment("d", "Why? Because! Fine \"ok.\" Done");
    CHECK(words_of(d) == std::vector<std::vector<std::string>>{{"why"}, {"because"}, {"fine", "ok"}, {"done"}});
}

TEST_CASE("abbreviations do not end a sentence") {
    const auto d = segment("d", "I met Dr. Smith at 3 p.m. today. Then left.");
    REQUIRE(d.sentences.size() == 2);
    CHECK(d.sentences[0].words == std::vector<std::string>{"i", "met", "dr", "smith", "at", "3", "p.m", "today"});

    SegmenterConfig none;
    none.abbreviations.clear();
    CHECK(segment("d", "I met Dr. Smith.", none).sentences.size() == 2);
}

TEST_CASE("punctuation-only sentences are dropped and renumbered") {
    const auto d = segment("d", "Hi there. ... !!! Bye now.");
    REQUIRE(d.sentences.size() == 2);
    CHECK(d.sentences[1].index == 2);
    CHECK(d.sentences[1].words == std::vector<std::string>{"bye", "now"});
}

TEST_CASE("inner punctuation is kept") {
    const auto d = segment("d", "It's well-known, isn't it?");
    CHECK(d.sentences[0].words == std::vector<std::string>{"it's", "well-known", "isn't", "it"});
}

TEST_CASE("documents with no words are rejected") {
    CHECK_THROWS_AS(segment("d", "!!! ..."), EmptyDocumentError);
    CHECK_THROWS_AS(segment("d", "   "), EmptyDocumentError);
}

TEST_CASE("segment_corpus skips and reports empty documents") {
    std::vector<EssayRecord> rs(3);
    rs[0] = {"a", "One. Two.", {}};
    rs[1] = {"b", "?!", {}};
    rs[2] = {"c", "Three", {}};
    const auto out = segment_corpus(rs);
    REQUIRE(out.documents.size() == 2);
    CHECK(out.documents[0].doc_id == "a");
    CHECK(out.documents[1].doc_id == "c");
    REQUIRE(out.skipped.size() == 1);
    CHECK(out.skipped[0].doc_id == "b");
}

TEST_CASE("segments JSONL round-trips") {
    std::vector<SegmentedDocument> docs = {segment("a", "I am happy. It rains."), segment("b\"q", "Caf\xC3\xA9 time!")};
    const auto path = std::filesystem::temp_directory_path() / "hp_segments.jsonl";
    write_segments(path, docs);
    CHECK(read_segments(path) == docs);

    const auto j = to_json(docs[0]);
    CHECK(j["sentences"][1]["index"] == 2);
    CHECK(j["sentences"][1]["words"] == nlohmann::json({"it", "rains"}));
    CHECK(segmented_from_json(j) == docs[0]);
    std::filesystem::remove(path);
}
