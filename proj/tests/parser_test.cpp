#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <sstream>

#include "edutwin/csv.hpp"
#include "edutwin/parser.hpp"
#include "support/fakes.hpp"
#include "support/payload.hpp"

using namespace edutwin;
using namespace edutwin::parser;
using persona::AnswerSchema;

using payload::in_range;
using payload::render;

namespace {
gateway::ModelResponse reply(std::string text) {
    gateway::ModelResponse r;
    r.raw_text = std::move(text);
    return r;
}
}  // namespace

TEST(Grade, ExamplesFromTheContract) {
    EXPECT_EQ(parse_grade("The final grade is 5: BB"), 5);
    EXPECT_EQ(parse_grade("AA"), 7);
    EXPECT_THROW(parse_grade("probably 3.5"), Unparseable);
    EXPECT_THROW(parse_grade("8"), Unparseable);
    EXPECT_THROW(parse_grade(""), Unparseable);
}

TEST(Score, ClampAndMidpoint) {
    auto s = parse_score("105");
    EXPECT_EQ(s.value, 100);
    EXPECT_TRUE(s.flags.clamped);
    auto r = parse_score("between 60 and 70");
    EXPECT_EQ(r.value, 65);
    EXPECT_TRUE(r.flags.midpoint_of_range);
    EXPECT_FALSE(r.flags.clamped);
    EXPECT_EQ(parse_score("55").flags, Flags{});
    EXPECT_THROW(parse_score("none"), Unparseable);
}

TEST(Understanding, PercentAndVector) {
    EXPECT_DOUBLE_EQ(parse_understanding("73%").value, 0.73);
    auto v = parse_understanding("0.2, 0.4, 0.6", 3);
    EXPECT_EQ(v.values, (std::vector<double>{0.2, 0.4, 0.6}));
    EXPECT_THROW(parse_understanding("0.2, 0.4", 3), LengthMismatch);
    // a length mismatch is one kind of unparseable answer
    EXPECT_THROW(parse_understanding("0.2", 2), Unparseable);
}

TEST(Correctness, SingleAndVector) {
    EXPECT_TRUE(parse_correctness_single("correct"));
    EXPECT_FALSE(parse_correctness_single("The student would answer incorrectly."));
    EXPECT_FALSE(parse_correctness_single("not correct"));
    EXPECT_EQ(parse_correctness_vector("1, 0, 1", 3), (std::vector<bool>{true, false, true}));
    EXPECT_THROW(parse_correctness_vector("1, 0, 1", 4), LengthMismatch);
    EXPECT_THROW(parse_correctness_single("maybe"), Unparseable);
}

TEST(Dispatch, RecordsKindAndDigest) {
    auto o = parse("6: BA", AnswerSchema::grade);
    EXPECT_EQ(o.kind, AnswerSchema::grade);
    EXPECT_EQ(std::get<int>(o.value), 6);
    EXPECT_EQ(o.raw_digest, sha256_hex("6: BA"));
    auto c = parse("correct, incorrect, correct, correct", AnswerSchema::correctness_vector, 4);
    EXPECT_DOUBLE_EQ(c.scalar(), 0.75);
    auto u = parse("0.2 0.4", AnswerSchema::understanding_vector, 2);
    EXPECT_DOUBLE_EQ(u.scalar(), 0.3);
}

TEST(Corpus, HandwrittenResponsesParseAsExpected) {
    auto table = csv::parse(fakes::read(std::string(EDUTWIN_TEST_DATA) + "/parser_corpus.csv"));
    ASSERT_GE(table.rows().size(), 50u);
    auto col = [&](const char* name) { return *table.column(name); };
    std::size_t ok = 0;
    for (const auto& row : table.rows()) {
        const auto& schema_name = row.cells[col("schema")];
        auto schema = persona::parse_schema(schema_name);
        ASSERT_TRUE(schema) << schema_name;
        auto count = static_cast<std::size_t>(*parse_integer(row.cells[col("count")]));
        const auto& response = row.cells[col("response")];
        const auto& expected = row.cells[col("expected")];
        SCOPED_TRACE("line " + std::to_string(row.line) + ": " + response);
        if (expected == "unparseable") {
            EXPECT_THROW(parse(response, *schema, count), Unparseable);
            ++ok;
            continue;
        }
        auto o = parse(response, *schema, count);
        EXPECT_TRUE(in_range(o, count));
        EXPECT_EQ(o.flags, parse_flags(row.cells[col("flags")]));
        if (std::holds_alternative<double>(o.value)) {
            EXPECT_NEAR(std::get<double>(o.value), *parse_real(expected), 1e-12);
        } else if (std::holds_alternative<std::vector<double>>(o.value)) {
            const auto& v = std::get<std::vector<double>>(o.value);
            std::vector<double> want;
            std::stringstream ss(expected);
            for (std::string part; std::getline(ss, part, ';');) want.push_back(*parse_real(part));
            ASSERT_EQ(v.size(), want.size());
            for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(v[i], want[i], 1e-12);
        } else {
            EXPECT_EQ(render(o), expected);
        }
        ++ok;
    }
    EXPECT_EQ(ok, table.rows().size());
}

TEST(Flags, TextRoundTrip) {
    for (int mask = 0; mask < 8; ++mask) {
        Flags f{(mask & 1) != 0, (mask & 2) != 0, (mask & 4) != 0};
        EXPECT_EQ(parse_flags(f.to_string()), f);
    }
    EXPECT_EQ(Flags{}.to_string(), "");
    EXPECT_EQ((Flags{true, false, true}).to_string(), "clamped|retry_used");
}

TEST(Retry, SecondAnswerUsedAndFlagged) {
    gateway::ModelRequest req{"m", 0, "sys", "predict", 0, 64};
    std::vector<gateway::ModelRequest> seen;
    auto complete = [&](const gateway::ModelRequest& r) {
        seen.push_back(r);
        return reply(seen.size() == 1 ? "I am not sure" : "4: CB");
    };
    auto p = parse_with_retry(complete, req, AnswerSchema::grade);
    ASSERT_FALSE(p.missing());
    EXPECT_EQ(std::get<int>(p.outcome->value), 4);
    EXPECT_TRUE(p.outcome->flags.retry_used);
    ASSERT_EQ(seen.size(), 2u);
    EXPECT_EQ(seen[1].user_text.rfind("predict", 0), 0u);
    EXPECT_NE(seen[1].user_text.find("Reminder"), std::string::npos);
    EXPECT_EQ(p.responses.size(), 2u);
}

TEST(Retry, TwoFailuresRecordMissing) {
    gateway::ModelRequest req{"m", 0, "sys", "predict", 0, 64};
    int calls = 0;
    auto complete = [&](const gateway::ModelRequest&) {
        ++calls;
        return reply("no idea");
    };
    auto p = parse_with_retry(complete, req, AnswerSchema::score);
    EXPECT_TRUE(p.missing());
    EXPECT_EQ(calls, 2);
    EXPECT_EQ(p.missing_reason.rfind("unparseable: ", 0), 0u);
}

TEST(Retry, ImmediateSuccessHasNoFlag) {
    gateway::ModelRequest req{"m", 0, "sys", "predict", 0, 64};
    int calls = 0;
    auto complete = [&](const gateway::ModelRequest&) {
        ++calls;
        return reply("0.5");
    };
    auto p = parse_with_retry(complete, req, AnswerSchema::understanding);
    ASSERT_FALSE(p.missing());
    EXPECT_FALSE(p.outcome->flags.retry_used);
    EXPECT_EQ(calls, 1);
}

TEST(Fuzz, RandomTextIsTotalAndInRange) {
    std::mt19937 rng(2024);
    const std::vector<std::string> pieces{"0",  "1",  "7",     "8",    "-3",   "105",   "0.5", "73%",  " ",    ", ",
                                          "\n", ": ", ") ",    ". ",   "-",    " and ", "to",  "BB",   "AA",   "Fail",
                                          "not", "correct", "incorrect", "n't", "yes", "slide", "q", "1e400", "99999999999999999999",
                                          "%",  "..", "\xE2\x80\x93", "\xE2\x80\x99", "\"", "*", "#", "abc", "\r\n"};
    const std::size_t counts[] = {1, 1, 1, 3, 1, 3, 1};
    for (int iter = 0; iter < 3000; ++iter) {
        std::string text;
        int n = static_cast<int>(rng() % 12);
        for (int k = 0; k < n; ++k) text += pieces[rng() % pieces.size()];
        for (std::size_t s = 0; s < persona::kSchemaNames.size(); ++s) {
            auto schema = static_cast<AnswerSchema>(s);
            try {
                auto o = parse(text, schema, counts[s]);
                EXPECT_TRUE(in_range(o, counts[s])) << text;
                // deterministic
                EXPECT_EQ(render(parse(text, schema, counts[s])), render(o));
            } catch (const Unparseable&) {
            }
        }
    }
}
