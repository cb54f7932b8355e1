#include "kgd/vkg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "kgd/embedding_io.hpp"
#include "kgd/linalg.hpp"

namespace kgd {

using nlohmann::json;

std::string_view to_string(VkgMode mode) {
    switch (mode) {
        case VkgMode::Static: return "static";
        case VkgMode::DynamicNoSmooth: return "dynamic-no-smooth";
        case VkgMode::Dynamic: return "dynamic";
    }
    return "dynamic";
}

VkgMode parse_vkg_mode(std::string_view text) {
    if (text == "static") return VkgMode::Static;
    if (text == "dynamic-no-smooth") return VkgMode::DynamicNoSmooth;
    if (text == "dynamic") return VkgMode::Dynamic;
    throw Error(ErrorCode::InvalidConfig, "unknown VKG mode '" + std::string(text) + "'");
}

std::size_t CentroidBatch::num_present() const {
    return static_cast<std::size_t>(std::count_if(counts.begin(), counts.end(), [](auto c) { return c > 0; }));
}

VisionKnowledgeGraph vkg_init(const Matrix& category_embeddings, const VkgOptions& options) {
    if (category_embeddings.rows() < 2) {
        throw Error(ErrorCode::TooFewCategories,
                    "VKG needs at least 2 categories, got " + std::to_string(category_embeddings.rows()));
    }
    if (!(options.lambda >= 0.0 && options.lambda <= 1.0)) {
        throw Error(ErrorCode::InvalidConfig, "lambda must lie in [0,1]");
    }
    if (!(options.alpha > 0.0 && options.alpha < 1.0)) {
        throw Error(ErrorCode::BadAlpha, "alpha must lie in (0,1), got " + std::to_string(options.alpha));
    }
    if (!category_embeddings.all_finite()) throw Error(ErrorCode::CorruptData, "non-finite category embedding");
    return {category_embeddings, options};
}

CentroidBatch batch_centroids(const Matrix& features, const Matrix& p_hat) {
    if (features.rows() != p_hat.rows()) {
        throw Error(ErrorCode::DimMismatch, std::to_string(features.rows()) + " features for " +
                                                std::to_string(p_hat.rows()) + " probability rows");
    }
    const std::size_t n_c = p_hat.cols();
    CentroidBatch batch{Matrix(n_c, features.cols()), std::vector<std::size_t>(n_c, 0)};
    for (std::size_t j = 0; j < features.rows(); ++j) {
        const std::size_t i = argmax(p_hat.row(j));
        auto dst = batch.centroids.row(i);
        auto src = features.row(j);
        for (std::size_t k = 0; k < src.size(); ++k) dst[k] += src[k];
        ++batch.counts[i];
    }
    for (std::size_t i = 0; i < n_c; ++i) {
        if (batch.counts[i] == 0) continue;
        for (double& v : batch.centroids.row(i)) v /= static_cast<double>(batch.counts[i]);
    }
    return batch;
}

Matrix smoothing_operator(const Matrix& points, double alpha, bool raw, Diagnostics* diagnostics) {
    Matrix a = affinity(points, Diagonal::Zero, diagnostics);
    // Far-apart points can underflow every affinity in a row. The limit of a
    // vanishing row is a zero row of L, so that node is left unsmoothed.
    std::vector<std::size_t> isolated;
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double deg = 0.0;
        for (double v : a.row(i)) deg += v;
        if (!(deg > 0.0)) isolated.push_back(i);
    }
    Matrix l;
    if (isolated.empty()) {
        l = sym_normalize(a);
    } else {
        std::string rows;
        for (auto i : isolated) rows += (rows.empty() ? "" : ",") + std::to_string(i);
        report_warning(diagnostics, Warning::NumericalUnderflow, "smoothing affinity underflowed for nodes " + rows);
        std::vector<double> inv_sqrt_deg(a.rows(), 0.0);
        for (std::size_t i = 0; i < a.rows(); ++i) {
            double deg = 0.0;
            for (double v : a.row(i)) deg += v;
            if (deg > 0.0) inv_sqrt_deg[i] = 1.0 / std::sqrt(deg);
        }
        l = Matrix(a.rows(), a.cols());
        for (std::size_t i = 0; i < a.rows(); ++i)
            for (std::size_t j = 0; j < a.cols(); ++j) l(i, j) = inv_sqrt_deg[i] * a(i, j) * inv_sqrt_deg[j];
    }
    Matrix w = smoothing_solve(l, alpha);
    if (!raw) {
        for (std::size_t i = 0; i < w.rows(); ++i) {
            auto r = w.row(i);
            double s = 0.0;
            for (double v : r) s += v;
            for (double& v : r) v /= s;
        }
    }
    return w;
}

void vkg_update(VisionKnowledgeGraph& g, const CentroidBatch& batch, Diagnostics* diagnostics) {
    if (g.options.mode == VkgMode::Static) return;
    if (batch.centroids.rows() != g.num_categories() || batch.centroids.cols() != g.feature_dim()) {
        throw Error(ErrorCode::DimMismatch, "centroid batch shape does not match the VKG");
    }
    if (batch.num_present() == 0) return;

    const double lambda = g.options.lambda;
    for (std::size_t i = 0; i < g.num_categories(); ++i) {
        if (!batch.present(i)) continue;
        auto v = g.nodes.row(i);
        auto theta = batch.centroids.row(i);
        for (std::size_t k = 0; k < v.size(); ++k) v[k] = lambda * v[k] + (1.0 - lambda) * theta[k];
    }

    if (g.options.mode == VkgMode::Dynamic) {
        Matrix points = g.nodes;
        for (std::size_t i = 0; i < g.num_categories(); ++i) {
            if (!batch.present(i)) continue;
            auto src = batch.centroids.row(i);
            std::copy(src.begin(), src.end(), points.row(i).begin());
        }
        g.nodes = matmul(smoothing_operator(points, g.options.alpha, g.options.raw_smoothing, diagnostics), g.nodes);
    }
    if (!g.nodes.all_finite()) throw Error(ErrorCode::CorruptData, "VKG nodes became non-finite");
}

Matrix vkg_calibrate(const VisionKnowledgeGraph& g, const Matrix& features, const Matrix& p_hat,
                     double temperature) {
    if (features.rows() != p_hat.rows()) {
        throw Error(ErrorCode::DimMismatch, "features and p_hat row counts differ");
    }
    if (features.rows() == 0) return Matrix(0, g.num_categories());
    if (features.cols() != g.feature_dim() || p_hat.cols() != g.num_categories()) {
        throw Error(ErrorCode::DimMismatch, "features/p_hat do not match the VKG shape");
    }
    if (!(temperature > 0.0)) throw Error(ErrorCode::InvalidConfig, "temperature must be positive");

    std::vector<double> node_norm(g.num_categories());
    for (std::size_t i = 0; i < g.num_categories(); ++i) {
        node_norm[i] = norm_l2(g.nodes.row(i));
        if (node_norm[i] == 0.0) throw Error(ErrorCode::ZeroVector, "VKG node " + std::to_string(i) + " is zero");
    }
    Matrix logits(features.rows(), g.num_categories());
    for (std::size_t j = 0; j < features.rows(); ++j) {
        const double fn = norm_l2(features.row(j));
        if (fn == 0.0) throw Error(ErrorCode::ZeroVector, "feature row " + std::to_string(j) + " is zero");
        for (std::size_t i = 0; i < g.num_categories(); ++i) {
            logits(j, i) = dot(features.row(j), g.nodes.row(i)) / (fn * node_norm[i]) / temperature;
        }
    }
    return hadamard(p_hat, row_softmax(logits));
}

std::filesystem::path save_vkg(const std::filesystem::path& dir, const VisionKnowledgeGraph& g,
                               const std::string& stem) {
    const std::string nodes = stem + "_nodes.kgde";
    save_embeddings(dir / nodes, g.nodes);
    json header = {{"format", "kgd-vkg"},
                   {"version", 1},
                   {"num_categories", g.num_categories()},
                   {"feature_dim", g.feature_dim()},
                   {"lambda", g.options.lambda},
                   {"alpha", g.options.alpha},
                   {"mode", to_string(g.options.mode)},
                   {"raw_smoothing", g.options.raw_smoothing},
                   {"payloads", {{"nodes", nodes}}}};
    const auto path = dir / (stem + ".json");
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write '" + path.string() + "'");
    out << header.dump(2) << '\n';
    return path;
}

VisionKnowledgeGraph load_vkg(const std::filesystem::path& header_path) {
    std::ifstream in(header_path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open '" + header_path.string() + "'");
    try {
        const json h = json::parse(in);
        if (h.at("format") != "kgd-vkg") throw Error(ErrorCode::FormatError, "not a VKG checkpoint");
        VkgOptions options;
        options.lambda = h.at("lambda").get<double>();
        options.alpha = h.at("alpha").get<double>();
        options.mode = parse_vkg_mode(h.at("mode").get<std::string>());
        options.raw_smoothing = h.value("raw_smoothing", false);
        Matrix nodes = load_embeddings(header_path.parent_path() / h.at("payloads").at("nodes").get<std::string>());
        if (nodes.rows() != h.at("num_categories").get<std::size_t>() ||
            nodes.cols() != h.at("feature_dim").get<std::size_t>()) {
            throw Error(ErrorCode::DimMismatch, "VKG payload shape disagrees with header");
        }
        return vkg_init(nodes, options);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::FormatError, header_path.string() + ": " + e.what());
    }
}

}  // namespace kgd
