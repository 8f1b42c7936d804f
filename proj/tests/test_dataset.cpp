#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "oracles.hpp"
#include "vgold/dataset.hpp"

using namespace vgold;

TEST(Generate, DefaultHistogramHas140Scenes) {
    const Corpus c = generate_corpus(7);
    EXPECT_EQ(c.size(), 140u);
    for (int n = 1; n <= 14; ++n) EXPECT_EQ(c.count_histogram().at(n), 10) << n;
    EXPECT_EQ(c.min_count(), 1);
    EXPECT_EQ(c.max_count(), 14);
    EXPECT_NE(c.find("s14-09"), nullptr);
}

TEST(Generate, DeterministicPerSeed) {
    EXPECT_EQ(serialize_corpus(generate_corpus(3)), serialize_corpus(generate_corpus(3)));
    EXPECT_NE(serialize_corpus(generate_corpus(3)), serialize_corpus(generate_corpus(4)));
}

TEST(Generate, BoxesRespectExtentAndOverlapCap) {
    const SizeModel m;
    const Corpus c = generate_corpus(9);
    for (const auto& s : c.scenes()) {
        for (std::size_t i = 0; i < s.gt_boxes.size(); ++i) {
            EXPECT_TRUE(within_extent(s.gt_boxes[i], s.width, s.height));
            for (std::size_t j = 0; j < i; ++j) EXPECT_LE(iou(s.gt_boxes[i], s.gt_boxes[j]), m.max_overlap);
        }
    }
}

TEST(Generate, CrowdedScenesHoldSmallerObjects) {
    const Corpus c = generate_corpus(7);
    double few = 0.0, many = 0.0;
    int nf = 0, nm = 0;
    for (const auto& s : c.scenes())
        for (const auto& b : s.gt_boxes) {
            if (s.object_count() <= 3) few += b.area(), ++nf;
            if (s.object_count() >= 12) many += b.area(), ++nm;
        }
    EXPECT_GT(few / nf, many / nm);
}

TEST(Generate, ImpossiblePackingThrows) {
    SizeModel m;
    m.width = 10;
    m.height = 7;
    m.min_area_frac = m.max_area_frac = 0.25;
    m.count_exponent = 0.0;
    m.min_aspect = m.max_aspect = 1.0;
    m.max_overlap = 0.0;
    m.max_box_tries = 50;
    m.max_scene_restarts = 3;
    const double side = std::sqrt(0.25 * 70.0);
    ASSERT_FALSE(oracle::squares_may_fit(3, side, 10, 7));
    ASSERT_TRUE(oracle::squares_may_fit(2, side, 10, 7));
    EXPECT_THROW(generate_corpus(1, {{3, 2}}, m), PackingError);
    EXPECT_NO_THROW(generate_corpus(1, {{1, 2}}, m));
}

TEST(Generate, RejectsBadModel) {
    SizeModel m;
    m.max_area_frac = m.min_area_frac / 2;
    EXPECT_THROW(generate_corpus(1, uniform_histogram(), m), ConfigError);
    EXPECT_THROW(generate_corpus(1, {{0, 1}}), ConfigError);
}

TEST(CorpusFile, RoundTrip) {
    const Corpus c = generate_corpus(5);
    std::istringstream in(serialize_corpus(c));
    const LoadReport r = parse_corpus(in);
    EXPECT_EQ(r.corpus, c);
    EXPECT_TRUE(r.rejected.empty());
    EXPECT_EQ(r.clamped_boxes, 0);
}

TEST(CorpusFile, EmptyInputHasNoScenes) {
    std::istringstream in("");
    try {
        parse_corpus(in, "empty.ndjson");
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("no scenes"), std::string::npos);
    }
}

TEST(CorpusFile, RejectsZeroWidthBoxAndListsIt) {
    std::istringstream in(R"({"coords":"absolute"}
{"scene_id":"ok","width":100,"height":100,"boxes":[[1,1,10,10]]}
{"scene_id":"bad","width":100,"height":100,"boxes":[[1,1,0,10]]}
)");
    const auto r = parse_corpus(in);
    EXPECT_EQ(r.corpus.size(), 1u);
    ASSERT_EQ(r.rejected.size(), 1u);
    EXPECT_EQ(r.rejected[0].line, 3);
    EXPECT_EQ(r.rejected[0].scene_id, "bad");
    EXPECT_NE(r.rejection_listing().find("scene bad"), std::string::npos);
}

TEST(CorpusFile, RejectsDuplicatesAndEmptyScenes) {
    std::istringstream in(R"({"coords":"absolute"}
{"scene_id":"a","width":100,"height":100,"boxes":[[1,1,10,10]]}
{"scene_id":"a","width":100,"height":100,"boxes":[[2,2,10,10]]}
{"scene_id":"b","width":100,"height":100,"boxes":[[1,1,10,10],[1,1,10,10]]}
{"scene_id":"c","width":100,"height":100,"boxes":[]}
)");
    const auto r = parse_corpus(in);
    EXPECT_EQ(r.corpus.size(), 1u);
    EXPECT_EQ(r.rejected.size(), 3u);
}

TEST(CorpusFile, ClampsOutOfExtentBoxes) {
    std::istringstream in(R"({"coords":"absolute"}
{"scene_id":"a","width":100,"height":100,"boxes":[[95,95,10,10],[1,1,5,5]]}
)");
    const auto r = parse_corpus(in);
    EXPECT_EQ(r.clamped_boxes, 1);
    EXPECT_EQ(r.corpus.at("a").gt_boxes[0], (BoundingBox{95, 95, 5, 5}));
}

TEST(CorpusFile, NormalizedCoordinatesScaleToPixels) {
    std::istringstream in(R"({"coords":"normalized"}
{"scene_id":"a","width":200,"height":100,"boxes":[[0.5,0.5,0.25,0.25]]}
)");
    const auto r = parse_corpus(in);
    EXPECT_EQ(r.coords, CoordMode::Normalized);
    EXPECT_EQ(r.corpus.at("a").gt_boxes[0], (BoundingBox{100, 50, 50, 25}));
}

TEST(CorpusFile, MalformedLineNamesLine) {
    std::istringstream in("{\"coords\":\"absolute\"}\n{not json\n");
    try {
        parse_corpus(in, "f.ndjson");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("f.ndjson:2"), std::string::npos);
    }
    std::istringstream no_header(R"({"scene_id":"a","width":1,"height":1,"boxes":[]})");
    EXPECT_THROW(parse_corpus(no_header), ParseError);
}

TEST(CorpusFile, MissingFileIsIoError) { EXPECT_THROW(load_corpus("/nonexistent/corpus.ndjson"), IoError); }

TEST(Annotations, RoundTripWithContributors) {
    const std::vector<AnnotationSet> anns{{"a", {{1, 2, 3, 4}}, "w1", 2.5, {"w1"}}, {"b", {}, "w2", 0.0, {}}};
    std::stringstream ss;
    write_annotations(anns, ss);
    const auto back = parse_annotations(ss);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0].boxes, anns[0].boxes);
    EXPECT_EQ(back[0].box_contributors, anns[0].box_contributors);
    EXPECT_EQ(back[1].worker_id, "w2");
    std::istringstream bad(R"({"scene_id":"a","boxes":[],"elapsed":-1})");
    EXPECT_THROW(parse_annotations(bad), ParseError);
}

TEST(CorpusInvariants, ConstructorRejectsBrokenScenes) {
    EXPECT_THROW(Corpus({Scene{"a", 10, 10, {}}}), ContractError);
    EXPECT_THROW(Corpus({Scene{"a", 10, 10, {{0, 0, 1, 1}}}, Scene{"a", 10, 10, {{0, 0, 1, 1}}}}), ContractError);
    EXPECT_THROW(Corpus({Scene{"a", 0, 10, {{0, 0, 1, 1}}}}), ContractError);
}
