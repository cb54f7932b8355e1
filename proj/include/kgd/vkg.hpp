#pragma once

#include <filesystem>
#include <string_view>
#include <vector>

#include "kgd/error.hpp"
#include "kgd/matrix.hpp"

namespace kgd {

enum class VkgMode { Static, DynamicNoSmooth, Dynamic };

std::string_view to_string(VkgMode mode);
VkgMode parse_vkg_mode(std::string_view text);

struct VkgOptions {
    double lambda = 0.99;  // EMA weight on the old node
    double alpha = 0.5;  // manifold smoothing scale
    VkgMode mode = VkgMode::Dynamic;
    /// Apply (I - alpha L)^-1 as is instead of row-normalizing it first.
    bool raw_smoothing = false;
};

/// One node vector per category.
struct VisionKnowledgeGraph {
    Matrix nodes;  // N_c x d
    VkgOptions options;

    std::size_t num_categories() const { return nodes.rows(); }
    std::size_t feature_dim() const { return nodes.cols(); }
};

/// Per-category mean of the features whose teacher argmax picks that category.
struct CentroidBatch {
    Matrix centroids;  // N_c x d; rows of absent categories are zero
    std::vector<std::size_t> counts;

    bool present(std::size_t category) const { return counts[category] > 0; }
    std::size_t num_present() const;
};

/// Copies the category embeddings into the node matrix. Needs N_c >= 2.
VisionKnowledgeGraph vkg_init(const Matrix& category_embeddings, const VkgOptions& options = {});

/// Ties in the argmax go to the lowest category index.
CentroidBatch batch_centroids(const Matrix& features, const Matrix& p_hat);

/// Row-normalized (or raw) (I - alpha·L)^-1 for the zero-diagonal affinity over `points`.
Matrix smoothing_operator(const Matrix& points, double alpha, bool raw, Diagnostics* diagnostics = nullptr);

/// EMA toward present centroids, then (Dynamic only) manifold smoothing over
/// all nodes, using the centroid where present and the node otherwise as the
/// graph point. A batch without any centroid leaves the graph untouched.
void vkg_update(VisionKnowledgeGraph& g, const CentroidBatch& batch, Diagnostics* diagnostics = nullptr);

/// p^v_ji = p_hat_ji · softmax_i(cos(f_j, v_i) / temperature).
Matrix vkg_calibrate(const VisionKnowledgeGraph& g, const Matrix& features, const Matrix& p_hat,
                     double temperature = 1.0);

/// Writes `<stem>.json` and `<stem>_nodes.kgde`; returns the header path.
std::filesystem::path save_vkg(const std::filesystem::path& dir, const VisionKnowledgeGraph& g,
                               const std::string& stem = "vkg");
VisionKnowledgeGraph load_vkg(const std::filesystem::path& header);

}  // namespace kgd
