#include "kgd/synth.hpp"

#include <cmath>
#include <fstream>
#include <string>

#include "kgd/embedding_io.hpp"
#include "kgd/error.hpp"
#include "kgd/lexicon.hpp"
#include "kgd/linalg.hpp"
#include "kgd/matrix.hpp"
#include "kgd/random.hpp"

namespace kgd {

using nlohmann::json;

namespace {

using Vec = std::vector<double>;

Vec random_unit(Rng& rng, std::size_t dim) {
    Vec v(dim);
    for (double& x : v) x = rng.normal();
    const double n = norm_l2(v);
    for (double& x : v) x /= n;
    return v;
}

Vec unit(Vec v) {
    const double n = norm_l2(v);
    for (double& x : v) x /= n;
    return v;
}

// x + s·y
Vec axpy(const Vec& x, double s, const Vec& y) {
    Vec out = x;
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += s * y[k];
    return out;
}

Vec noise(Rng& rng, std::size_t dim, double scale) {
    Vec v(dim);
    const double per_dim = scale / std::sqrt(static_cast<double>(dim));
    for (double& x : v) x = per_dim * rng.normal();
    return v;
}

void set_row(Matrix& m, std::size_t i, const Vec& v) { std::copy(v.begin(), v.end(), m.row(i).begin()); }

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write '" + path.string() + "'");
    out << text;
}

}  // namespace

json to_json(const SynthSpec& s) {
    return {{"n_categories", s.n_categories},
            {"dim", s.dim},
            {"shift", s.shift},
            {"n_images", s.n_images},
            {"proposals_per_image", s.proposals_per_image},
            {"probe_size", s.probe_size},
            {"seed", s.seed},
            {"toward_next", s.toward_next},
            {"feature_noise", s.feature_noise},
            {"source_noise", s.source_noise},
            {"source_samples", s.source_samples},
            {"teacher_sharpness", s.teacher_sharpness},
            {"teacher_noise", s.teacher_noise},
            {"text_noise", s.text_noise},
            {"min_hyponyms", s.min_hyponyms},
            {"max_hyponyms", s.max_hyponyms}};
}

SynthSpec synth_spec_from_json(const json& j, SynthSpec s) {
    if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, "synthetic spec must be a JSON object");
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "n_categories") s.n_categories = v.get<std::size_t>();
            else if (key == "dim") s.dim = v.get<std::size_t>();
            else if (key == "shift") s.shift = v.get<double>();
            else if (key == "n_images") s.n_images = v.get<std::size_t>();
            else if (key == "proposals_per_image") s.proposals_per_image = v.get<std::size_t>();
            else if (key == "probe_size") s.probe_size = v.get<std::size_t>();
            else if (key == "seed") s.seed = v.get<std::uint64_t>();
            else if (key == "toward_next") s.toward_next = v.get<double>();
            else if (key == "feature_noise") s.feature_noise = v.get<double>();
            else if (key == "source_noise") s.source_noise = v.get<double>();
            else if (key == "source_samples") s.source_samples = v.get<std::size_t>();
            else if (key == "teacher_sharpness") s.teacher_sharpness = v.get<double>();
            else if (key == "teacher_noise") s.teacher_noise = v.get<double>();
            else if (key == "text_noise") s.text_noise = v.get<double>();
            else if (key == "min_hyponyms") s.min_hyponyms = v.get<std::size_t>();
            else if (key == "max_hyponyms") s.max_hyponyms = v.get<std::size_t>();
            else throw Error(ErrorCode::InvalidConfig, "unknown synthetic spec key '" + key + "'");
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidConfig, std::string("synthetic spec value has the wrong type: ") + e.what());
    }
    return s;
}

std::filesystem::path synth_generate(const SynthSpec& spec, const std::filesystem::path& out_dir) {
    if (spec.n_categories < 2) throw Error(ErrorCode::TooFewCategories, "synthetic data needs n_categories >= 2");
    if (spec.dim < 2) throw Error(ErrorCode::InvalidConfig, "synthetic data needs dim >= 2");
    if (spec.min_hyponyms > spec.max_hyponyms) throw Error(ErrorCode::InvalidConfig, "min_hyponyms > max_hyponyms");
    std::filesystem::create_directories(out_dir);

    const std::size_t n_c = spec.n_categories;
    const std::size_t dim = spec.dim;
    Rng rng(spec.seed);

    std::vector<Vec> prototypes;
    for (std::size_t c = 0; c < n_c; ++c) prototypes.push_back(random_unit(rng, dim));

    // Target clusters: prototype + shift along a per-category direction that
    // leans toward the next category's prototype.
    std::vector<Vec> shift_dir;
    for (std::size_t c = 0; c < n_c; ++c) {
        const Vec toward = unit(axpy(prototypes[(c + 1) % n_c], -1.0, prototypes[c]));
        shift_dir.push_back(unit(axpy(random_unit(rng, dim), spec.toward_next, toward)));
    }

    // Translate the space so the target cluster centres average to zero.
    Vec offset(dim, 0.0);
    for (std::size_t c = 0; c < n_c; ++c) {
        const Vec centre = axpy(prototypes[c], spec.shift, shift_dir[c]);
        for (std::size_t k = 0; k < dim; ++k) offset[k] += centre[k] / static_cast<double>(n_c);
    }
    for (auto& p : prototypes) p = axpy(p, -1.0, offset);

    // The teacher only knows the source domain: it scores against the mean of
    // source samples drawn around each prototype.
    std::vector<Vec> source_centroid;
    for (std::size_t c = 0; c < n_c; ++c) {
        Vec mean(dim, 0.0);
        for (std::size_t s = 0; s < spec.source_samples; ++s) {
            const Vec x = axpy(prototypes[c], 1.0, noise(rng, dim, spec.source_noise));
            for (std::size_t k = 0; k < dim; ++k) mean[k] += x[k] / static_cast<double>(spec.source_samples);
        }
        source_centroid.push_back(mean);
    }

    auto target_feature = [&](std::size_t c) {
        return axpy(axpy(prototypes[c], spec.shift, shift_dir[c]), 1.0, noise(rng, dim, spec.feature_noise));
    };

    // Lexicon and text embeddings.
    std::vector<LexiconEntry> lexicon;
    std::vector<Vec> names, definitions, hierarchy, hierarchy_names;
    for (std::size_t c = 0; c < n_c; ++c) {
        const std::string cat = "category_" + std::to_string(c);
        LexiconEntry e{cat, "a synthetic object of kind " + std::to_string(c), {}};
        names.push_back(unit(axpy(prototypes[c], 1.0, noise(rng, dim, spec.text_noise))));
        const Vec def = unit(axpy(axpy(prototypes[c], 0.5 * spec.shift, shift_dir[c]), 1.0,
                                  noise(rng, dim, spec.text_noise)));
        definitions.push_back(def);
        hierarchy.push_back(def);
        hierarchy_names.push_back(def);

        const std::size_t span = spec.max_hyponyms - spec.min_hyponyms + 1;
        const std::size_t m = spec.min_hyponyms + (c % span);
        for (std::size_t k = 0; k < m; ++k) {
            const std::string hyp = cat + "_kind_" + std::to_string(k);
            e.hyponyms.push_back({hyp, "a variety " + std::to_string(k) + " of synthetic object " + std::to_string(c)});
            const double along = spec.shift * static_cast<double>(k + 1) / static_cast<double>(m);
            const Vec centre = axpy(prototypes[c], along, shift_dir[c]);
            hierarchy.push_back(unit(axpy(centre, 1.0, noise(rng, dim, spec.text_noise))));
            hierarchy_names.push_back(unit(axpy(centre, 1.0, noise(rng, dim, 2.0 * spec.text_noise))));
        }
        lexicon.push_back(std::move(e));
    }

    auto to_matrix = [dim](const std::vector<Vec>& rows) {
        Matrix m(rows.size(), dim);
        for (std::size_t i = 0; i < rows.size(); ++i) set_row(m, i, rows[i]);
        return m;
    };

    // Target proposals with imperfect teacher probabilities.
    const std::size_t total = spec.n_images * spec.proposals_per_image;
    Matrix target(total, dim);
    std::vector<ProposalBatch> images;
    std::size_t row = 0;
    for (std::size_t img = 0; img < spec.n_images; ++img) {
        ProposalBatch b;
        b.image_id = "synth_" + std::to_string(img);
        b.image_size = {640.0, 480.0};
        b.features_file = "target_features.kgde";
        b.probs = Matrix(spec.proposals_per_image, n_c);
        for (std::size_t j = 0; j < spec.proposals_per_image; ++j, ++row) {
            const std::size_t c = rng.below(n_c);
            const Vec x = target_feature(c);
            set_row(target, row, x);
            Matrix logits(1, n_c);
            for (std::size_t i = 0; i < n_c; ++i) {
                logits(0, i) = spec.teacher_sharpness *
                               (cosine_similarity(x, source_centroid[i]) + spec.teacher_noise * rng.normal());
            }
            const Matrix p = row_softmax(logits);
            for (std::size_t i = 0; i < n_c; ++i) b.probs(j, i) = p(0, i);

            const double w = rng.uniform(20.0, 300.0);
            const double h = rng.uniform(20.0, 300.0);
            const double x1 = rng.uniform(0.0, 640.0 - w);
            const double y1 = rng.uniform(0.0, 480.0 - h);
            b.boxes.push_back({x1, y1, x1 + w, y1 + h});
            b.feature_rows.push_back(row);
        }
        images.push_back(std::move(b));
    }

    Matrix probe(spec.probe_size, dim);
    std::vector<std::size_t> probe_labels;
    for (std::size_t j = 0; j < spec.probe_size; ++j) {
        const std::size_t c = j % n_c;
        set_row(probe, j, target_feature(c));
        probe_labels.push_back(c);
    }

    save_embeddings(out_dir / "target_features.kgde", target);
    write_proposals(out_dir / "target.jsonl", images);
    write_text(out_dir / "lexicon.json", serialize_lexicon(lexicon));
    save_embeddings(out_dir / "text_names.kgde", to_matrix(names));
    save_embeddings(out_dir / "text_definitions.kgde", to_matrix(definitions));
    save_embeddings(out_dir / "text_hierarchy.kgde", to_matrix(hierarchy));
    save_embeddings(out_dir / "text_hierarchy_names.kgde", to_matrix(hierarchy_names));
    save_embeddings(out_dir / "probe_features.kgde", probe);
    write_text(out_dir / "probe.json",
               json({{"features_file", "probe_features.kgde"}, {"labels", probe_labels}}).dump() + "\n");

    const json manifest = {{"lexicon", "lexicon.json"},
                           {"proposals", "target.jsonl"},
                           {"text_embeddings",
                            {{"names", "text_names.kgde"},
                             {"definitions", "text_definitions.kgde"},
                             {"hierarchy", "text_hierarchy.kgde"},
                             {"hierarchy_names", "text_hierarchy_names.kgde"}}},
                           {"probe", "probe.json"}};
    const auto path = out_dir / "dataset.json";
    write_text(path, manifest.dump(2) + "\n");
    return path;
}

}  // namespace kgd
