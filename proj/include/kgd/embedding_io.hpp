#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "kgd/matrix.hpp"

namespace kgd {

// ---------------------------------------------------------------------------
// KGDE embedding files
//
//   offset  size  field
//   0       4     magic "KGDE"
//   4       4     version, u32 little-endian, = 1
//   8       4     rows, u32 little-endian
//   12      4     cols, u32 little-endian
//   16      4·r·c payload, f32 little-endian, row-major
//
// Values are widened to double on load and narrowed to float on save.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kEmbeddingVersion = 1;

std::vector<std::uint8_t> encode_embeddings(const Matrix& m);
Matrix decode_embeddings(std::span<const std::uint8_t> bytes);

void save_embeddings(const std::filesystem::path& path, const Matrix& m);
Matrix load_embeddings(const std::filesystem::path& path);

/// Rounds every entry through float, i.e. what a save/load cycle returns.
Matrix round_to_float(const Matrix& m);

/// Deterministic stand-in for a text/image encoder: a unit vector of `dim`
/// standard normals drawn from a counter-based generator keyed by hash64(seed, text).
std::vector<double> stub_encode(std::string_view text, std::size_t dim, std::uint64_t seed);

/// Maps a list of texts to one embedding row each.
class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual Matrix encode(const std::vector<std::string>& texts) const = 0;
};

class StubEncoder final : public EmbeddingProvider {
public:
    StubEncoder(std::size_t dim, std::uint64_t seed);
    Matrix encode(const std::vector<std::string>& texts) const override;

private:
    std::size_t dim_;
    std::uint64_t seed_;
};

/// Serves rows of a precomputed matrix, row k for text k. Throws
/// RowCountMismatch when the row count differs from the number of texts.
class FileEmbeddingProvider final : public EmbeddingProvider {
public:
    explicit FileEmbeddingProvider(Matrix rows) : rows_(std::move(rows)) {}
    static FileEmbeddingProvider from_file(const std::filesystem::path& path);
    Matrix encode(const std::vector<std::string>& texts) const override;

private:
    Matrix rows_;
};

// ---------------------------------------------------------------------------
// Proposal fixtures (JSON Lines, one image per line)
// ---------------------------------------------------------------------------

struct Box {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    friend bool operator==(const Box&, const Box&) = default;
};

struct ImageSize {
    double width = 0;
    double height = 0;
};

struct ProposalBatch {
    std::string image_id;
    ImageSize image_size;
    std::vector<Box> boxes;
    Matrix probs;  // M x N_c, teacher probabilities
    std::vector<std::size_t> feature_rows;
    std::string features_file;

    std::size_t size() const { return boxes.size(); }
};

/// Parses one JSONL record. Boxes are clamped to the image; a box that is
/// empty after clamping raises DegenerateBox.
ProposalBatch parse_proposal_line(std::string_view line, std::size_t line_number = 0);
std::string serialize_proposal_line(const ProposalBatch& batch);

/// Reads every record and checks that all probability rows share one length.
std::vector<ProposalBatch> read_proposals(const std::filesystem::path& path);
void write_proposals(const std::filesystem::path& path, const std::vector<ProposalBatch>& batches);

/// Square region whose side is the longer box edge, centred on the box. The
/// square is translated to fit inside the image; if the side exceeds an image
/// dimension it is clipped along that axis instead.
Box square_crop(const Box& box, ImageSize image);

}  // namespace kgd
