#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "kgd/embedding_io.hpp"
#include "kgd/error.hpp"
#include "kgd/linalg.hpp"
#include "oracles.hpp"

using namespace kgd;

namespace {

ErrorCode decode_code(const std::vector<std::uint8_t>& bytes) {
    try {
        decode_embeddings(bytes);
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "decoded without error";
    return ErrorCode::IoError;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
}

std::vector<std::uint8_t> header(const char* magic, std::uint32_t version, std::uint32_t rows, std::uint32_t cols) {
    std::vector<std::uint8_t> out(magic, magic + 4);
    put_u32(out, version);
    put_u32(out, rows);
    put_u32(out, cols);
    return out;
}

void put_f32(std::vector<std::uint8_t>& out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
}

ErrorCode proposal_code(std::string_view line) {
    try {
        parse_proposal_line(line, 1);
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "parsed without error: " << line;
    return ErrorCode::IoError;
}

}  // namespace

TEST(EmbeddingFile, ByteLayout) {
    const auto bytes = encode_embeddings(Matrix{{1.0, -2.0}});
    std::vector<std::uint8_t> want = header("KGDE", 1, 1, 2);
    put_f32(want, 1.0f);
    put_f32(want, -2.0f);
    EXPECT_EQ(bytes, want);
}

TEST(EmbeddingFile, RoundTripIsExactAtFloatPrecision) {
    Rng rng(4);
    const auto dir = test::fresh_dir("embedding_round_trip");
    for (int trial = 0; trial < 50; ++trial) {
        const Matrix m = test::random_matrix(rng, rng.below(6), 1 + rng.below(6), 100.0);
        save_embeddings(dir / "m.kgde", m);
        const Matrix back = load_embeddings(dir / "m.kgde");
        EXPECT_EQ(back, round_to_float(m));
        EXPECT_EQ(round_to_float(back), back);
    }
}

TEST(EmbeddingFile, TwoByThreeReload) {
    const auto dir = test::fresh_dir("embedding_2x3");
    const Matrix m{{0.5, 1.25, -3.0}, {8.0, 0.0, 2.5}};
    save_embeddings(dir / "m.kgde", m);
    EXPECT_EQ(load_embeddings(dir / "m.kgde"), m);
}

TEST(EmbeddingFile, BadMagic) { EXPECT_EQ(decode_code(header("XXXX", 1, 0, 0)), ErrorCode::FormatError); }

TEST(EmbeddingFile, BadVersion) { EXPECT_EQ(decode_code(header("KGDE", 2, 0, 0)), ErrorCode::FormatError); }

TEST(EmbeddingFile, ShortHeader) { EXPECT_EQ(decode_code({'K', 'G', 'D', 'E', 1}), ErrorCode::TruncatedFile); }

TEST(EmbeddingFile, FourByFourWithFifteenFloats) {
    auto bytes = header("KGDE", 1, 4, 4);
    for (int k = 0; k < 15; ++k) put_f32(bytes, 1.0f);
    EXPECT_EQ(decode_code(bytes), ErrorCode::TruncatedFile);
}

TEST(EmbeddingFile, TrailingBytes) {
    auto bytes = header("KGDE", 1, 1, 1);
    put_f32(bytes, 1.0f);
    bytes.push_back(0);
    EXPECT_EQ(decode_code(bytes), ErrorCode::TruncatedFile);
}

TEST(EmbeddingFile, NonFiniteReportsOffset) {
    auto bytes = header("KGDE", 1, 1, 3);
    put_f32(bytes, 1.0f);
    put_f32(bytes, std::numeric_limits<float>::quiet_NaN());
    put_f32(bytes, 1.0f);
    try {
        decode_embeddings(bytes);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::CorruptData);
        EXPECT_NE(std::string(e.what()).find("offset 20"), std::string::npos) << e.what();
    }
}

TEST(EmbeddingFile, MissingFileIsIoError) {
    try {
        load_embeddings("/nonexistent/x.kgde");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::IoError);
    }
}

TEST(StubEncode, DeterministicUnitVectors) {
    const auto a = stub_encode("car", 8, 42);
    EXPECT_EQ(a, stub_encode("car", 8, 42));
    EXPECT_NEAR(norm_l2(a), 1.0, 1e-12);
    EXPECT_LT(cosine_similarity(a, stub_encode("cat", 8, 42)), 1.0);
    EXPECT_NE(a, stub_encode("car", 8, 43));
}

TEST(StubEncode, RandomStringsNearlyOrthogonal) {
    Rng rng(99);
    std::vector<std::vector<double>> vecs;
    for (int i = 0; i < 1000; ++i) {
        std::string s;
        const std::size_t len = 1 + rng.below(12);
        for (std::size_t k = 0; k < len; ++k) s.push_back(static_cast<char>('a' + rng.below(26)));
        s += "#" + std::to_string(i);
        vecs.push_back(stub_encode(s, 64, 7));
        EXPECT_NEAR(norm_l2(vecs.back()), 1.0, 1e-12);
    }
    double sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < vecs.size(); ++i)
        for (std::size_t j = i + 1; j < vecs.size(); ++j, ++pairs) sum += std::abs(dot(vecs[i], vecs[j]));
    EXPECT_LT(sum / static_cast<double>(pairs), 0.25);
}

TEST(StubEncoder, RejectsTinyDimension) {
    try {
        StubEncoder(1, 0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::InvalidConfig);
    }
}

TEST(FileEmbeddingProvider, RowCountMismatch) {
    FileEmbeddingProvider provider(Matrix(4, 3, 1.0));
    try {
        provider.encode({"a", "b", "c", "d", "e"});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::RowCountMismatch);
    }
    EXPECT_EQ(provider.encode({"a", "b", "c", "d"}), Matrix(4, 3, 1.0));
}

TEST(SquareCrop, WideBoxExpandsVertically) {
    EXPECT_EQ(square_crop({10, 10, 30, 20}, {100, 100}), (Box{10, 5, 30, 25}));
}

TEST(SquareCrop, SquareBoxUnchanged) { EXPECT_EQ(square_crop({0, 0, 10, 10}, {100, 100}), (Box{0, 0, 10, 10})); }

TEST(SquareCrop, ClippedWhenSideExceedsImage) {
    EXPECT_EQ(square_crop({0, 0, 80, 200}, {100, 200}), (Box{0, 0, 100, 200}));
}

TEST(SquareCrop, TranslatedAtBorder) {
    // Side 20 centred at (5, 50) would start at x = -5; shifted right to fit.
    EXPECT_EQ(square_crop({0, 40, 10, 60}, {100, 100}), (Box{0, 40, 20, 60}));
}

TEST(SquareCrop, DegenerateBox) {
    try {
        square_crop({5, 5, 5, 10}, {100, 100});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::DegenerateBox);
    }
}

TEST(SquareCrop, AlwaysInsideAndSquareWhenItFits) {
    Rng rng(21);
    for (int trial = 0; trial < 2000; ++trial) {
        const ImageSize img{rng.uniform(10, 500), rng.uniform(10, 500)};
        const double x1 = rng.uniform(0, img.width - 1), y1 = rng.uniform(0, img.height - 1);
        const Box box{x1, y1, rng.uniform(x1 + 0.5, img.width), rng.uniform(y1 + 0.5, img.height)};
        const Box c = square_crop(box, img);
        EXPECT_GE(c.x1, 0.0);
        EXPECT_GE(c.y1, 0.0);
        EXPECT_LE(c.x2, img.width);
        EXPECT_LE(c.y2, img.height);
        const double side = std::max(box.width(), box.height());
        if (side <= std::min(img.width, img.height)) {
            EXPECT_NEAR(c.width(), side, 1e-9);
            EXPECT_NEAR(c.height(), side, 1e-9);
        }
        EXPECT_LE(c.x1, box.x1 + 1e-9);
        EXPECT_GE(c.x2, box.x2 - 1e-9);
        EXPECT_LE(c.y1, box.y1 + 1e-9);
        EXPECT_GE(c.y2, box.y2 - 1e-9);
    }
}

TEST(ProposalLine, RoundTrip) {
    const std::string line =
        R"({"image_id":"a","image_size":[100,50],"boxes":[[1,2,30,40],[0,0,10,10]],)"
        R"("probs":[[0.7,0.3],[0.1,0.9]],"feature_rows":[4,5],"features_file":"f.kgde"})";
    const ProposalBatch b = parse_proposal_line(line);
    EXPECT_EQ(b.image_id, "a");
    EXPECT_EQ(b.size(), 2u);
    EXPECT_EQ(b.probs, (Matrix{{0.7, 0.3}, {0.1, 0.9}}));
    EXPECT_EQ(b.feature_rows, (std::vector<std::size_t>{4, 5}));
    const ProposalBatch again = parse_proposal_line(serialize_proposal_line(b));
    EXPECT_EQ(again.boxes, b.boxes);
    EXPECT_EQ(again.probs, b.probs);
    EXPECT_EQ(again.features_file, "f.kgde");
}

TEST(ProposalLine, ClampsBoxesToImage) {
    const ProposalBatch b = parse_proposal_line(
        R"({"image_id":"a","image_size":[100,50],"boxes":[[-5,-5,120,60]],"probs":[[1,0]],"feature_rows":[0],"features_file":"f"})");
    EXPECT_EQ(b.boxes[0], (Box{0, 0, 100, 50}));
}

TEST(ProposalLine, Violations) {
    const std::string head = R"({"image_id":"a","image_size":[100,50],"features_file":"f",)";
    EXPECT_EQ(proposal_code(head + R"("boxes":[[1,2,3,4]],"probs":[[1,0],[0,1]],"feature_rows":[0]})"),
              ErrorCode::DimMismatch);
    EXPECT_EQ(proposal_code(head + R"("boxes":[[200,2,300,4]],"probs":[[1,0]],"feature_rows":[0]})"),
              ErrorCode::DegenerateBox);
    EXPECT_EQ(proposal_code(head + R"("boxes":[[1,2,3,4]],"probs":[[1.5,0]],"feature_rows":[0]})"),
              ErrorCode::CorruptData);
    EXPECT_EQ(proposal_code(head + R"("boxes":[[1,2,3,4]],"probs":[[1,0]],"feature_rows":[0],"x":1})"),
              ErrorCode::FormatError);
    EXPECT_EQ(proposal_code(R"({"image_id":"a"})"), ErrorCode::FormatError);
    EXPECT_EQ(proposal_code("{not json"), ErrorCode::FormatError);
}

TEST(ProposalFile, InconsistentCategoryCount) {
    const auto dir = test::fresh_dir("proposal_nc");
    std::ofstream(dir / "p.jsonl")
        << R"({"image_id":"a","image_size":[10,10],"boxes":[[1,1,2,2]],"probs":[[1,0]],"feature_rows":[0],"features_file":"f"})"
        << "\n"
        << R"({"image_id":"b","image_size":[10,10],"boxes":[[1,1,2,2]],"probs":[[1,0,0]],"feature_rows":[0],"features_file":"f"})"
        << "\n";
    try {
        read_proposals(dir / "p.jsonl");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::DimMismatch);
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
    }
}
