#include "kgd/lkg.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "kgd/linalg.hpp"
#include "kgd/random.hpp"

namespace kgd {

using nlohmann::json;

namespace {

constexpr double kLogFloor = 1e-300;

void require_dims(const GcnParams& p, const Matrix& omega, const Matrix& f) {
    if (omega.rows() == 0) throw Error(ErrorCode::EmptyInput, "LKG has no nodes");
    if (f.cols() != omega.cols() && !(f.rows() == 0 && f.cols() == 0)) {
        throw Error(ErrorCode::DimMismatch, "proposal features have " + std::to_string(f.cols()) +
                                                " columns, LKG nodes have " + std::to_string(omega.cols()));
    }
    if (p.w0.rows() != omega.cols() || p.w1.rows() != p.w0.cols()) {
        throw Error(ErrorCode::DimMismatch, "GCN weights do not match feature dim " + std::to_string(omega.cols()));
    }
}

}  // namespace

GcnParams init_gcn(std::size_t feature_dim, std::size_t hidden_dim, std::size_t num_categories,
                   std::uint64_t seed) {
    Rng rng(seed);
    auto glorot = [&rng](std::size_t fan_in, std::size_t fan_out) {
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        Matrix w(fan_in, fan_out);
        for (double& v : w.data()) v = rng.uniform(-limit, limit);
        return w;
    };
    GcnParams p;
    p.w0 = glorot(feature_dim, hidden_dim);
    p.w1 = glorot(hidden_dim, num_categories);
    return p;
}

LanguageKnowledgeGraph lkg_extract(const PromptSet& prompts, const EmbeddingProvider& encoder,
                                   const LkgOptions& options) {
    if (prompts.num_categories() < 2) {
        throw Error(ErrorCode::TooFewCategories,
                    "need at least 2 categories, got " + std::to_string(prompts.num_categories()));
    }
    if (prompts.owner.size() != prompts.prompts.size()) {
        throw Error(ErrorCode::DimMismatch, "prompt/owner lists differ in length");
    }
    std::vector<bool> owned(prompts.num_categories(), false);
    for (std::size_t o : prompts.owner) {
        if (o >= prompts.num_categories()) throw Error(ErrorCode::DimMismatch, "owner index out of range");
        owned[o] = true;
    }
    for (std::size_t i = 0; i < owned.size(); ++i) {
        if (!owned[i]) throw Error(ErrorCode::EmptyInput, "category " + std::to_string(i) + " owns no prompt");
    }

    LanguageKnowledgeGraph g;
    g.prompts = prompts;
    g.node_features = encoder.encode(prompts.prompts);
    if (g.node_features.rows() != prompts.size()) {
        throw Error(ErrorCode::RowCountMismatch, "encoder returned " + std::to_string(g.node_features.rows()) +
                                                     " rows for " + std::to_string(prompts.size()) + " prompts");
    }
    if (g.node_features.cols() == 0) throw Error(ErrorCode::DimMismatch, "encoder returned zero-width rows");
    if (!g.node_features.all_finite()) throw Error(ErrorCode::CorruptData, "encoder returned non-finite values");
    g.gcn = init_gcn(g.feature_dim(), options.hidden_dim, prompts.num_categories(), options.seed);
    return g;
}

GcnOutput gcn_forward(const GcnParams& params, const Matrix& node_features, const Matrix& proposal_features,
                      Diagnostics* diagnostics) {
    require_dims(params, node_features, proposal_features);
    const std::size_t m = proposal_features.rows();
    const Matrix h0 = m == 0 ? node_features : vstack(proposal_features, node_features);

    GcnOutput out;
    GcnCache& c = out.cache;
    c.proposals = m;
    c.norm_adjacency = sym_normalize(affinity(h0, Diagonal::One, diagnostics));
    c.propagated_input = matmul(c.norm_adjacency, h0);
    c.pre_activation = matmul(c.propagated_input, params.w0);
    Matrix hidden = c.pre_activation;
    for (double& v : hidden.data()) v = std::max(v, 0.0);
    c.propagated_hidden = matmul(c.norm_adjacency, hidden);
    c.probs = row_softmax(matmul(c.propagated_hidden, params.w1));

    out.q_f = slice_rows(c.probs, 0, m);
    out.q_omega = slice_rows(c.probs, m, c.probs.rows());
    return out;
}

GcnOutput gcn_forward(const LanguageKnowledgeGraph& g, const Matrix& proposal_features, Diagnostics* diagnostics) {
    return gcn_forward(g.gcn, g.node_features, proposal_features, diagnostics);
}

GcnGradient gcn_loss_and_grad(const GcnParams& params, const Matrix& node_features,
                              std::span<const std::size_t> owners, const Matrix& proposal_features,
                              Diagnostics* diagnostics) {
    if (owners.size() != node_features.rows()) {
        throw Error(ErrorCode::DimMismatch, "one owner label per LKG node required");
    }
    const GcnOutput fwd = gcn_forward(params, node_features, proposal_features, diagnostics);
    const GcnCache& c = fwd.cache;
    const std::size_t n_c = params.w1.cols();

    GcnGradient g;
    Matrix d_logits(c.probs.rows(), n_c);
    bool underflow = false;
    for (std::size_t j = 0; j < owners.size(); ++j) {
        const std::size_t row = c.proposals + j;
        if (owners[j] >= n_c) throw Error(ErrorCode::DimMismatch, "owner index out of range");
        double q = c.probs(row, owners[j]);
        if (q < kLogFloor) {
            q = kLogFloor;
            underflow = true;
        }
        g.loss -= std::log(q);
        for (std::size_t i = 0; i < n_c; ++i) d_logits(row, i) = c.probs(row, i);
        d_logits(row, owners[j]) -= 1.0;
    }
    if (underflow) report_warning(diagnostics, Warning::NumericalUnderflow, "node probability clamped at 1e-300");

    g.w1 = matmul_tn(c.propagated_hidden, d_logits);
    // Â is symmetric, so Âᵀ·X = Â·X.
    Matrix d_hidden = matmul(c.norm_adjacency, matmul_nt(d_logits, params.w1));
    for (std::size_t k = 0; k < d_hidden.size(); ++k) {
        if (!(c.pre_activation.data()[k] > 0.0)) d_hidden.data()[k] = 0.0;
    }
    g.w0 = matmul_tn(c.propagated_input, d_hidden);
    return g;
}

GcnGradient gcn_loss_and_grad(const LanguageKnowledgeGraph& g, const Matrix& proposal_features,
                              Diagnostics* diagnostics) {
    return gcn_loss_and_grad(g.gcn, g.node_features, g.prompts.owner, proposal_features, diagnostics);
}

void gcn_apply(GcnParams& params, const GcnGradient& grad, Optimizer& optimizer) {
    if (!std::isfinite(grad.loss) || !grad.w0.all_finite() || !grad.w1.all_finite()) {
        throw Error(ErrorCode::DivergedGcn, "non-finite GCN gradient (loss " + std::to_string(grad.loss) + ")");
    }
    Matrix* ps[] = {&params.w0, &params.w1};
    const Matrix* gs[] = {&grad.w0, &grad.w1};
    optimizer.step(ps, gs);
    if (!params.w0.all_finite() || !params.w1.all_finite()) {
        throw Error(ErrorCode::DivergedGcn, "GCN weights became non-finite");
    }
}

double gcn_step(LanguageKnowledgeGraph& g, const Matrix& proposal_features, Optimizer& optimizer,
                Diagnostics* diagnostics) {
    const GcnGradient grad = gcn_loss_and_grad(g, proposal_features, diagnostics);
    gcn_apply(g.gcn, grad, optimizer);
    return grad.loss;
}

Matrix lkg_calibrate(const Matrix& p_hat, const Matrix& q_f) {
    if (p_hat.rows() != q_f.rows() || (p_hat.rows() > 0 && p_hat.cols() != q_f.cols())) {
        throw Error(ErrorCode::DimMismatch, "p_hat is " + std::to_string(p_hat.rows()) + "x" +
                                                std::to_string(p_hat.cols()) + ", Q^F is " +
                                                std::to_string(q_f.rows()) + "x" + std::to_string(q_f.cols()));
    }
    return hadamard(p_hat, q_f);
}

std::filesystem::path save_lkg(const std::filesystem::path& dir, const LanguageKnowledgeGraph& g,
                               const std::string& stem) {
    const std::string omega = stem + "_omega.kgde";
    const std::string w0 = stem + "_w0.kgde";
    const std::string w1 = stem + "_w1.kgde";
    save_embeddings(dir / omega, g.node_features);
    save_embeddings(dir / w0, g.gcn.w0);
    save_embeddings(dir / w1, g.gcn.w1);

    json header = {{"format", "kgd-lkg"},
                   {"version", 1},
                   {"num_categories", g.num_categories()},
                   {"num_nodes", g.num_nodes()},
                   {"feature_dim", g.feature_dim()},
                   {"hidden_dim", g.gcn.hidden_dim()},
                   {"mode", to_string(g.prompts.mode)},
                   {"categories", g.prompts.categories},
                   {"prompts", g.prompts.prompts},
                   {"owners", g.prompts.owner},
                   {"payloads", {{"omega", omega}, {"w0", w0}, {"w1", w1}}}};
    const auto path = dir / (stem + ".json");
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write '" + path.string() + "'");
    out << header.dump(2) << '\n';
    return path;
}

LanguageKnowledgeGraph load_lkg(const std::filesystem::path& header_path) {
    std::ifstream in(header_path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open '" + header_path.string() + "'");
    LanguageKnowledgeGraph g;
    try {
        const json h = json::parse(in);
        if (h.at("format") != "kgd-lkg") throw Error(ErrorCode::FormatError, "not an LKG checkpoint");
        const auto dir = header_path.parent_path();
        g.prompts.mode = parse_prompt_mode(h.at("mode").get<std::string>());
        g.prompts.categories = h.at("categories").get<std::vector<std::string>>();
        g.prompts.prompts = h.at("prompts").get<std::vector<std::string>>();
        g.prompts.owner = h.at("owners").get<std::vector<std::size_t>>();
        g.node_features = load_embeddings(dir / h.at("payloads").at("omega").get<std::string>());
        g.gcn.w0 = load_embeddings(dir / h.at("payloads").at("w0").get<std::string>());
        g.gcn.w1 = load_embeddings(dir / h.at("payloads").at("w1").get<std::string>());
        if (g.node_features.rows() != g.prompts.size() || g.prompts.owner.size() != g.prompts.size() ||
            g.gcn.w0.rows() != g.feature_dim() || g.gcn.w1.rows() != g.gcn.w0.cols() ||
            g.gcn.w1.cols() != g.num_categories() || h.at("num_categories").get<std::size_t>() != g.num_categories()) {
            throw Error(ErrorCode::DimMismatch, "LKG checkpoint payload shapes disagree with header");
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::FormatError, header_path.string() + ": " + e.what());
    }
    return g;
}

}  // namespace kgd
