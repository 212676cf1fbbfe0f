#include <catch_amalgamated.hpp>

#include <filesystem>
#include <set>

#include <hyperpersona/corpus.hpp>

using namespace hyperpersona;

namespace {

const std::string kHeader = "#AUTHID,TEXT,cEXT,cNEU,cAGR,cCON,cOPN\n";

std::vector<EssayRecord> numbered(std::size_t n) {
    std::vector<EssayRecord> out;
    for (std::size_t i = 0; i < n; ++i) {
        EssayRecord r;
        r.id = "doc" + std::to_string(i);
        r.text = "text " + std::to_string(i);
        r.labels.set(Trait::Openness, i % 3 == 0);
        r.labels.set(Trait::Neuroticism, i % 2 == 0);
        out.push_back(r);
    }
    return out;
}

std::set<std::string> ids(const std::vector<EssayRecord>& rs) {
    std::set<std::string> s;
    for (const auto& r : rs) s.insert(r.id);
    return s;
}

}  // namespace

TEST_CASE("two-row fixture parses with expected labels") {
    const auto records = load_corpus(std::filesystem::path(HP_TEST_DATA) / "two_essays.csv");
    REQUIRE(records.size() == 2);
    CHECK(records[0].id == "1997_504851.txt");
    CHECK(records[0].labels.openness);
    CHECK_FALSE(records[0].labels.conscientiousness);
    CHECK_FALSE(records[0].labels.extraversion);
    CHECK(records[0].labels.agreeableness);
    CHECK(records[0].labels.neuroticism);

    CHECK(records[1].text == "Today I went to the \"library\" and read.\nThen I came home!");
    CHECK_FALSE(records[1].labels.openness);
    CHECK(records[1].labels.conscientiousness);
    CHECK(records[1].labels.extraversion);
    CHECK_FALSE(records[1].labels.agreeableness);
    CHECK_FALSE(records[1].labels.neuroticism);
}

TEST_CASE("label cells accept every configured token case-insensitively") {
    const auto rs = parse_corpus(kHeader + "a,x,TRUE,false,1,0,Y\n", {});
    REQUIRE(rs.size() == 1);
    CHECK(rs[0].labels.extraversion);
    CHECK_FALSE(rs[0].labels.neuroticism);
    CHECK(rs[0].labels.agreeableness);
    CHECK_FALSE(rs[0].labels.conscientiousness);
    CHECK(rs[0].labels.openness);
}

TEST_CASE("custom parse table can invert the label convention") {
    ColumnMap m;
    m.true_tokens = {"0"};
    m.false_tokens = {"1"};
    const auto rs = parse_corpus(kHeader + "a,x,0,1,0,1,0\n", m);
    CHECK(rs[0].labels.extraversion);
    CHECK_FALSE(rs[0].labels.neuroticism);
}

TEST_CASE("missing mapped column is a schema error naming it") {
    ColumnMap m;
    m.text = "ESSAY";
    REQUIRE_THROWS_AS(parse_corpus(kHeader + "a,x,y,y,y,y,y\n", m), SchemaError);
    REQUIRE_THROWS_WITH(parse_corpus(kHeader + "a,x,y,y,y,y,y\n", m), Catch::Matchers::ContainsSubstring("ESSAY"));

    ColumnMap removed = ColumnMap::from_json({{"text", nullptr}});
    CHECK_THROWS_AS(parse_corpus(kHeader + "a,x,y,y,y,y,y\n", removed), SchemaError);
}

TEST_CASE("bad label cell is a row error carrying the row index") {
    const std::string data = kHeader + "a,x,y,y,y,y,y\nb,z,y,maybe,y,y,y\n";
    try {
        (void)parse_corpus(data, {});
        FAIL("expected RowError");
    } catch (const RowError& e) {
        CHECK(e.row() == 2);
        CHECK(std::string(e.what()).find("maybe") != std::string::npos);
    }
}

TEST_CASE("empty text, duplicate ids and short rows are row errors") {
    CHECK_THROWS_AS(parse_corpus(kHeader + "a,\"   \",y,y,y,y,y\n", {}), RowError);
    CHECK_THROWS_AS(parse_corpus(kHeader + "a,x,y,y,y,y,y\na,z,y,y,y,y,y\n", {}), RowError);
    CHECK_THROWS_AS(parse_corpus(kHeader + "a,x,y,y\n", {}), RowError);
}

TEST_CASE("empty file is an empty-corpus error; header-only file has no records") {
    CHECK_THROWS_AS(parse_corpus("", {}), EmptyCorpusError);
    CHECK(parse_corpus(kHeader, {}).empty());
}

TEST_CASE("csv reader handles quoting, CRLF and a byte-order mark") {
    const auto rows = csv::parse("\xEF\xBB\xBFh1,h2\r\n\"a,b\",\"say \"\"hi\"\"\"\r\n\"multi\nline\",\r\n");
    REQUIRE(rows.size() == 3);
    CHECK(rows[0][0] == "h1");
    CHECK(rows[1][0] == "a,b");
    CHECK(rows[1][1] == "say \"hi\"");
    CHECK(rows[2][0] == "multi\nline");
    CHECK(rows[2][1].empty());
    CHECK(csv::quote("a\"b") == "\"a\"\"b\"");
    CHECK(csv::quote("plain") == "plain");
}

TEST_CASE("write_corpus and load_corpus round-trip") {
    auto rs = numbered(6);
    rs[2].text = "Commas, \"quotes\"\nand newlines.";
    const auto path = std::filesystem::temp_directory_path() / "hp_roundtrip.csv";
    write_corpus(path, rs);
    CHECK(load_corpus(path) == rs);
    std::filesystem::remove(path);
}

TEST_CASE("column map JSON round-trip keeps every field") {
    ColumnMap m;
    m.id = "author";
    m.labels[2] = "extra";
    m.true_tokens = {"yes"};
    const auto back = ColumnMap::from_json(m.to_json());
    CHECK(back.id == "author");
    CHECK(back.label(Trait::Extraversion) == "extra");
    CHECK(back.true_tokens == std::vector<std::string>{"yes"});
    CHECK(back.text == "TEXT");
}

TEST_CASE("split sizes follow round(fraction * N)") {
    const auto s = split_train_test(numbered(10), {0.8, 42});
    CHECK(s.train.size() == 8);
    CHECK(s.test.size() == 2);
    const auto t = split_train_test(numbered(7), {0.5, 1});
    CHECK(t.train.size() == 4);  // round(3.5) = 4
}

TEST_CASE("split is a deterministic partition") {
    const auto rs = numbered(100);
    const auto a = split_train_test(rs, {0.8, 7});
    const auto b = split_train_test(rs, {0.8, 7});
    CHECK(a.train == b.train);
    CHECK(a.test == b.test);

    auto train = ids(a.train), test = ids(a.test);
    for (const auto& id : test) CHECK(train.count(id) == 0);
    CHECK(train.size() + test.size() == rs.size());
}

TEST_CASE("changing the seed moves at least one record across the split") {
    const auto rs = numbered(100);
    CHECK(ids(split_train_test(rs, {0.8, 1}).train) != ids(split_train_test(rs, {0.8, 2}).train));
}

TEST_CASE("split members keep input order") {
    const auto s = split_train_test(numbered(30), {0.8, 3});
    auto index = [](const EssayRecord& r) { return std::stoi(r.id.substr(3)); };
    for (std::size_t i = 1; i < s.train.size(); ++i) CHECK(index(s.train[i - 1]) < index(s.train[i]));
    for (std::size_t i = 1; i < s.test.size(); ++i) CHECK(index(s.test[i - 1]) < index(s.test[i]));
}

TEST_CASE("split rejects bad fractions and empty sides") {
    CHECK_THROWS_AS(split_train_test(numbered(10), {1.0, 0}), ConfigError);
    CHECK_THROWS_AS(split_train_test(numbered(10), {0.0, 0}), ConfigError);
    CHECK_THROWS_AS(split_train_test(numbered(1), {0.8, 0}), ConfigError);
    CHECK_THROWS_AS(split_train_test({}, {0.8, 0}), ConfigError);
}

TEST_CASE("stratified split keeps each class proportion") {
    SplitSpec spec{0.8, 5, Trait::Neuroticism};
    const auto rs = numbered(40);  // 20 positive, 20 negative
    const auto s = split_train_test(rs, spec);
    std::size_t pos = 0;
    for (const auto& r : s.train) pos += r.labels.neuroticism;
    CHECK(pos == 16);
    CHECK(s.train.size() == 32);
}

TEST_CASE("label distribution counts") {
    const auto empty = label_distribution({});
    for (const auto& c : empty) CHECK(c.count_true + c.count_false == 0);

    // Hand count over four records.
    std::vector<EssayRecord> rs(4);
    for (std::size_t i = 0; i < 4; ++i) rs[i].id = std::to_string(i);
    rs[0].labels.openness = true;
    rs[1].labels.openness = true;
    rs[2].labels.openness = true;
    rs[3].labels.extraversion = true;
    const auto d = label_distribution(rs);
    CHECK(d[0].count_true == 3);
    CHECK(d[0].count_false == 1);
    CHECK(d[2].count_true == 1);
    CHECK(d[2].count_false == 3);
    CHECK(d[4].count_true == 0);
    for (const auto& c : d) CHECK(c.count_true + c.count_false == 4);

    const auto j = to_json(d);
    CHECK(j["openness"]["true"] == 3);
}

TEST_CASE("trait names and letters parse") {
    CHECK(parse_trait("O") == Trait::Openness);
    CHECK(parse_trait("n") == Trait::Neuroticism);
    CHECK(parse_trait("Agreeableness") == Trait::Agreeableness);
    CHECK_THROWS_AS(parse_trait("X"), ConfigError);
}

TEST_CASE("rng stream is counter based and splittable") {
    RngStream a(9), b(9);
    for (int i = 0; i < 5; ++i) CHECK(a.next_u64() == b.next_u64());
    CHECK(RngStream(9).split(1).next_u64() != RngStream(9).split(2).next_u64());
    // Draw 0 equals the first SplitMix64 output for the same seed.
    CHECK(RngStream(0).next_u64() == 0xE220A8397B1DCDAFULL);
    RngStream r(3);
    for (int i = 0; i < 1000; ++i) {
        const double u = r.uniform_open();
        CHECK((u > 0.0 && u < 1.0));
        CHECK(r.below(7) < 7);
    }
}
