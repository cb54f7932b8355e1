#include "kgd/embedding_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "kgd/error.hpp"
#include "kgd/random.hpp"

namespace kgd {

using nlohmann::json;

namespace {

constexpr std::size_t kHeaderBytes = 16;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t offset) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[offset + i]) << (8 * i);
    return v;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

[[noreturn]] void proposal_error(std::size_t line, const std::string& what) {
    throw Error(ErrorCode::FormatError, "proposal line " + std::to_string(line) + ": " + what);
}

double clamp_to(double v, double hi) { return std::clamp(v, 0.0, hi); }

}  // namespace

std::vector<std::uint8_t> encode_embeddings(const Matrix& m) {
    if (!m.all_finite()) throw Error(ErrorCode::CorruptData, "refusing to save non-finite values");
    std::vector<std::uint8_t> out{'K', 'G', 'D', 'E'};
    out.reserve(kHeaderBytes + 4 * m.size());
    put_u32(out, kEmbeddingVersion);
    put_u32(out, static_cast<std::uint32_t>(m.rows()));
    put_u32(out, static_cast<std::uint32_t>(m.cols()));
    for (double v : m.data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    return out;
}

Matrix decode_embeddings(std::span<const std::uint8_t> bytes) {
    if (bytes.size() >= 4 && std::memcmp(bytes.data(), "KGDE", 4) != 0) {
        throw Error(ErrorCode::FormatError, "bad magic");
    }
    if (bytes.size() < kHeaderBytes) {
        throw Error(ErrorCode::TruncatedFile, "header needs 16 bytes, file has " + std::to_string(bytes.size()));
    }
    const std::uint32_t version = get_u32(bytes, 4);
    if (version != kEmbeddingVersion) {
        throw Error(ErrorCode::FormatError, "unsupported version " + std::to_string(version));
    }
    const std::uint64_t rows = get_u32(bytes, 8);
    const std::uint64_t cols = get_u32(bytes, 12);
    const std::uint64_t expected = kHeaderBytes + 4 * rows * cols;
    if (bytes.size() != expected) {
        throw Error(ErrorCode::TruncatedFile, "declared " + std::to_string(rows) + "x" + std::to_string(cols) +
                                                  " needs " + std::to_string(expected) + " bytes, file has " +
                                                  std::to_string(bytes.size()));
    }
    std::vector<double> data(rows * cols);
    for (std::size_t i = 0; i < data.size(); ++i) {
        const std::size_t offset = kHeaderBytes + 4 * i;
        const float f = std::bit_cast<float>(get_u32(bytes, offset));
        if (!std::isfinite(f)) {
            throw Error(ErrorCode::CorruptData, "non-finite value at byte offset " + std::to_string(offset));
        }
        data[i] = f;
    }
    return Matrix(rows, cols, std::move(data));
}

void save_embeddings(const std::filesystem::path& path, const Matrix& m) {
    const auto bytes = encode_embeddings(m);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write '" + path.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Matrix load_embeddings(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    try {
        return decode_embeddings(bytes);
    } catch (const Error& e) {
        throw Error(e.code(), path.string() + ": " + e.message());
    }
}

Matrix round_to_float(const Matrix& m) {
    Matrix out = m;
    for (double& v : out.data()) v = static_cast<float>(v);
    return out;
}

std::vector<double> stub_encode(std::string_view text, std::size_t dim, std::uint64_t seed) {
    const std::uint64_t key = hash64(seed, text);
    std::vector<double> v(dim);
    for (std::size_t i = 0; i < dim; ++i) v[i] = counter_normal(key, i);
    const double n = norm_l2(v);
    for (double& x : v) x /= n;
    return v;
}

StubEncoder::StubEncoder(std::size_t dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
    if (dim < 2) throw Error(ErrorCode::InvalidConfig, "stub encoder needs dim >= 2");
}

Matrix StubEncoder::encode(const std::vector<std::string>& texts) const {
    Matrix out(texts.size(), dim_);
    for (std::size_t i = 0; i < texts.size(); ++i) {
        const auto v = stub_encode(texts[i], dim_, seed_);
        std::copy(v.begin(), v.end(), out.row(i).begin());
    }
    return out;
}

FileEmbeddingProvider FileEmbeddingProvider::from_file(const std::filesystem::path& path) {
    return FileEmbeddingProvider(load_embeddings(path));
}

Matrix FileEmbeddingProvider::encode(const std::vector<std::string>& texts) const {
    if (rows_.rows() != texts.size()) {
        throw Error(ErrorCode::RowCountMismatch, "embedding file has " + std::to_string(rows_.rows()) +
                                                     " rows for " + std::to_string(texts.size()) + " texts");
    }
    return rows_;
}

ProposalBatch parse_proposal_line(std::string_view line, std::size_t line_number) {
    json obj;
    try {
        obj = json::parse(line);
    } catch (const json::parse_error& e) {
        proposal_error(line_number, std::string("malformed JSON at byte ") + std::to_string(e.byte));
    }
    if (!obj.is_object()) proposal_error(line_number, "record must be an object");
    for (const auto& [key, _] : obj.items()) {
        if (key != "image_id" && key != "image_size" && key != "boxes" && key != "probs" &&
            key != "feature_rows" && key != "features_file") {
            proposal_error(line_number, "unknown key '" + key + "'");
        }
    }

    ProposalBatch b;
    try {
        b.image_id = obj.at("image_id").get<std::string>();
        const auto size = obj.at("image_size").get<std::vector<double>>();
        if (size.size() != 2 || !(size[0] > 0) || !(size[1] > 0)) proposal_error(line_number, "bad image_size");
        b.image_size = {size[0], size[1]};
        b.features_file = obj.at("features_file").get<std::string>();

        const auto boxes = obj.at("boxes").get<std::vector<std::vector<double>>>();
        const auto probs = obj.at("probs").get<std::vector<std::vector<double>>>();
        const auto rows = obj.at("feature_rows").get<std::vector<std::int64_t>>();
        if (boxes.size() != probs.size() || boxes.size() != rows.size()) {
            throw Error(ErrorCode::DimMismatch, "proposal line " + std::to_string(line_number) +
                                                    ": |boxes|, |probs|, |feature_rows| differ");
        }

        for (const auto& raw : boxes) {
            if (raw.size() != 4) proposal_error(line_number, "box needs 4 coordinates");
            Box box{clamp_to(raw[0], b.image_size.width), clamp_to(raw[1], b.image_size.height),
                    clamp_to(raw[2], b.image_size.width), clamp_to(raw[3], b.image_size.height)};
            if (!(box.x1 < box.x2) || !(box.y1 < box.y2)) {
                throw Error(ErrorCode::DegenerateBox,
                            "proposal line " + std::to_string(line_number) + ": empty box after clamping");
            }
            b.boxes.push_back(box);
        }

        const std::size_t n_c = probs.empty() ? 0 : probs.front().size();
        b.probs = Matrix(probs.size(), n_c);
        for (std::size_t j = 0; j < probs.size(); ++j) {
            if (probs[j].size() != n_c) {
                throw Error(ErrorCode::DimMismatch, "proposal line " + std::to_string(line_number) +
                                                        ": probability rows have different lengths");
            }
            for (std::size_t i = 0; i < n_c; ++i) {
                const double p = probs[j][i];
                if (!(p >= 0.0 && p <= 1.0)) {
                    throw Error(ErrorCode::CorruptData, "proposal line " + std::to_string(line_number) +
                                                            ": probability outside [0,1]");
                }
                b.probs(j, i) = p;
            }
        }
        for (auto r : rows) {
            if (r < 0) proposal_error(line_number, "negative feature row");
            b.feature_rows.push_back(static_cast<std::size_t>(r));
        }
    } catch (const json::exception& e) {
        proposal_error(line_number, e.what());
    }
    return b;
}

std::string serialize_proposal_line(const ProposalBatch& b) {
    json boxes = json::array();
    for (const auto& box : b.boxes) boxes.push_back({box.x1, box.y1, box.x2, box.y2});
    json probs = json::array();
    for (std::size_t j = 0; j < b.probs.rows(); ++j) {
        auto r = b.probs.row(j);
        probs.push_back(std::vector<double>(r.begin(), r.end()));
    }
    json obj = {{"image_id", b.image_id},
                {"image_size", {b.image_size.width, b.image_size.height}},
                {"boxes", std::move(boxes)},
                {"probs", std::move(probs)},
                {"feature_rows", b.feature_rows},
                {"features_file", b.features_file}};
    return obj.dump();
}

std::vector<ProposalBatch> read_proposals(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open proposals '" + path.string() + "'");
    std::vector<ProposalBatch> out;
    std::string line;
    std::size_t n_c = 0;
    for (std::size_t number = 1; std::getline(in, line); ++number) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        ProposalBatch b = parse_proposal_line(line, number);
        if (b.probs.rows() > 0) {
            if (n_c == 0) n_c = b.probs.cols();
            if (b.probs.cols() != n_c) {
                throw Error(ErrorCode::DimMismatch, "proposal line " + std::to_string(number) + ": " +
                                                        std::to_string(b.probs.cols()) +
                                                        " probabilities, expected " + std::to_string(n_c));
            }
        }
        out.push_back(std::move(b));
    }
    return out;
}

void write_proposals(const std::filesystem::path& path, const std::vector<ProposalBatch>& batches) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write '" + path.string() + "'");
    for (const auto& b : batches) out << serialize_proposal_line(b) << '\n';
}

Box square_crop(const Box& box, ImageSize image) {
    if (!(box.width() > 0) || !(box.height() > 0)) throw Error(ErrorCode::DegenerateBox, "zero-area box");
    const double side = std::max(box.width(), box.height());

    auto place = [side](double centre, double extent) {
        double lo = centre - side / 2.0;
        double hi = centre + side / 2.0;
        if (side <= extent) {
            if (lo < 0.0) {
                hi -= lo;
                lo = 0.0;
            } else if (hi > extent) {
                lo -= hi - extent;
                hi = extent;
            }
        } else {
            lo = std::max(lo, 0.0);
            hi = std::min(hi, extent);
        }
        return std::pair{lo, hi};
    };

    const auto [x1, x2] = place((box.x1 + box.x2) / 2.0, image.width);
    const auto [y1, y2] = place((box.y1 + box.y2) / 2.0, image.height);
    return {x1, y1, x2, y2};
}

}  // namespace kgd
