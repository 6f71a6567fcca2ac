#include "fedprompt/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "fedprompt/jsonio.hpp"
#include "fedprompt/numerics.hpp"

namespace fedprompt {

namespace {

Vec normalized(Vec v, const char* what) {
    double n = 0.0;
    for (double e : v) n += e * e;
    n = std::sqrt(n);
    if (n < 1e-12) {
        throw std::runtime_error(std::string("make_domain_spec: degenerate ") + what +
                                 " direction");
    }
    for (double& e : v) e /= n;
    return v;
}

/// Least-squares preimage of an embedding-space direction under the frozen
/// image map: argmin_u |W_f u - z|.
Vec pull_back(const Mat& w_f, const Mat& gram, std::span<const double> z) {
    return solve_spd(gram, matvec_transposed(w_f, z));
}

/// Orthonormal basis of the span of a vector family (modified Gram-Schmidt).
/// Members that are linearly dependent on earlier ones are dropped.
std::vector<Vec> orthonormal_basis(const std::vector<Vec>& family) {
    std::vector<Vec> basis;
    for (const Vec& orig : family) {
        Vec v = orig;
        double orig_sq = 0.0;
        for (double e : v) orig_sq += e * e;
        for (const Vec& b : basis) {
            double dot = 0.0;
            for (std::size_t i = 0; i < v.size(); ++i) dot += v[i] * b[i];
            for (std::size_t i = 0; i < v.size(); ++i) v[i] -= dot * b[i];
        }
        double res_sq = 0.0;
        for (double e : v) res_sq += e * e;
        if (res_sq > 1e-24 * std::max(orig_sq, 1e-300)) {
            double inv = 1.0 / std::sqrt(res_sq);
            for (double& e : v) e *= inv;
            basis.push_back(std::move(v));
        }
    }
    return basis;
}

Vec project_off(Vec v, const std::vector<Vec>& basis) {
    for (const Vec& b : basis) {
        double dot = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) dot += v[i] * b[i];
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= dot * b[i];
    }
    return v;
}

Mat template_query_sequence(const TokenVocab& vocab, std::size_t prompt_len, std::size_t j,
                            std::size_t m) {
    const auto& words = vocab.template_words();
    Mat seq(prompt_len + 2, vocab.embed_dim());
    for (std::size_t i = 0; i < prompt_len; ++i) {
        const Vec& emb = vocab.word_token(words[i % words.size()]);
        std::copy(emb.begin(), emb.end(), seq.row(i).begin());
    }
    const Vec& ct = vocab.class_token(j);
    const Vec& dt = vocab.domain_token(m);
    std::copy(ct.begin(), ct.end(), seq.row(prompt_len).begin());
    std::copy(dt.begin(), dt.end(), seq.row(prompt_len + 1).begin());
    return seq;
}

}  // namespace

DomainSpec make_domain_spec(const DataConfig& cfg, const TokenVocab& vocab,
                            const FrozenEncoders& enc, std::size_t prompt_len) {
    const std::size_t c = cfg.num_classes;
    const std::size_t m_total = cfg.num_domains_total;
    if (c < 2 || m_total < 2) {
        throw ConfigError("make_domain_spec: need at least 2 classes and 2 domains");
    }
    if (vocab.num_classes() < c || vocab.num_domains() < m_total) {
        throw ConfigError("make_domain_spec: vocabulary smaller than data spec");
    }
    if (cfg.feature_dim != enc.feature_dim()) {
        throw ConfigError("make_domain_spec: feature dim does not match image encoder");
    }
    const std::size_t d = enc.embed_dim();

    // Text embedding of the template query for every (class, domain) cell.
    std::vector<Vec> z(c * m_total);
    for (std::size_t j = 0; j < c; ++j) {
        for (std::size_t m = 0; m < m_total; ++m) {
            z[j * m_total + m] = enc.encode_text(template_query_sequence(vocab, prompt_len, j, m));
        }
    }

    // Class anchors (domain-averaged), their grand mean, and per-domain
    // offsets. The differential directions carry the discriminative signal;
    // the shared template component is stripped off.
    std::vector<Vec> class_anchor(c, Vec(d, 0.0));
    Vec grand(d, 0.0);
    for (std::size_t j = 0; j < c; ++j) {
        for (std::size_t m = 0; m < m_total; ++m) {
            for (std::size_t i = 0; i < d; ++i) class_anchor[j][i] += z[j * m_total + m][i];
        }
        for (std::size_t i = 0; i < d; ++i) {
            class_anchor[j][i] /= static_cast<double>(m_total);
            grand[i] += class_anchor[j][i] / static_cast<double>(c);
        }
    }
    std::vector<Vec> domain_offset(m_total, Vec(d, 0.0));
    for (std::size_t m = 0; m < m_total; ++m) {
        for (std::size_t j = 0; j < c; ++j) {
            for (std::size_t i = 0; i < d; ++i) {
                domain_offset[m][i] +=
                    (z[j * m_total + m][i] - class_anchor[j][i]) / static_cast<double>(c);
            }
        }
    }

    const Mat& w_f = enc.image_weights();
    Mat gram(w_f.cols, w_f.cols);
    for (std::size_t a = 0; a < w_f.cols; ++a) {
        for (std::size_t b = 0; b < w_f.cols; ++b) {
            double s = 0.0;
            for (std::size_t r = 0; r < w_f.rows; ++r) s += w_f(r, a) * w_f(r, b);
            gram(a, b) = s;
        }
    }

    // An image feature vector x couples to an embedding-space direction v only
    // through the adjoint: <W_f x, v> = <x, W_f^T v>. Working with these
    // adjoint images lets the generator control exactly which text directions
    // a sample's class and style components excite.
    std::vector<Vec> class_diff(c, Vec(d));
    for (std::size_t j = 0; j < c; ++j) {
        for (std::size_t i = 0; i < d; ++i) class_diff[j][i] = class_anchor[j][i] - grand[i];
    }
    std::vector<Vec> cls_adj(c), dom_adj(m_total);
    for (std::size_t j = 0; j < c; ++j) cls_adj[j] = matvec_transposed(w_f, class_diff[j]);
    for (std::size_t m = 0; m < m_total; ++m) {
        dom_adj[m] = matvec_transposed(w_f, domain_offset[m]);
    }
    const std::vector<Vec> cls_basis = orthonormal_basis(cls_adj);
    const std::vector<Vec> dom_basis = orthonormal_basis(dom_adj);

    DomainSpec spec;
    spec.cfg = cfg;

    // Whitened duals of a coupling family: dual_k = S^{-1} r_k with
    // S = sum_i r_i r_i^T (plus a tiny ridge). For a family that sums to zero
    // this equalises the response pattern -- each dual couples to its own
    // direction with weight (n-1)/n and to every other with weight -1/n --
    // which gives every class/domain the same margin instead of the uneven
    // margins of raw pullbacks.
    const std::size_t p = w_f.cols;
    auto whitened_duals = [p](const std::vector<Vec>& family, const char* what) {
        double trace = 0.0;
        for (const Vec& r : family) {
            for (double e : r) trace += e * e;
        }
        if (!(trace > 0.0)) {
            throw std::runtime_error(std::string("make_domain_spec: degenerate ") + what +
                                     " directions");
        }
        Mat s(p, p);
        for (const Vec& r : family) {
            for (std::size_t a = 0; a < p; ++a) {
                for (std::size_t b = 0; b < p; ++b) s(a, b) += r[a] * r[b];
            }
        }
        const double ridge = 1e-10 * trace / static_cast<double>(p);
        for (std::size_t a = 0; a < p; ++a) s(a, a) += ridge;
        std::vector<Vec> duals;
        duals.reserve(family.size());
        for (const Vec& r : family) duals.push_back(solve_spd(s, r));
        return duals;
    };

    // Class prototypes: whitened duals of the class couplings, restricted to
    // the subspace orthogonal to every domain-offset coupling. The class
    // component of a sample then excites class differentials in the embedding
    // space with equal margins and without leaking into any domain-offset
    // direction, so per-domain text readouts see the same class evidence as
    // the plain one.
    std::vector<Vec> cls_red(c);
    for (std::size_t j = 0; j < c; ++j) cls_red[j] = project_off(cls_adj[j], dom_basis);
    std::vector<Vec> cls_duals = whitened_duals(cls_red, "class");
    spec.prototypes.reserve(c);
    for (std::size_t j = 0; j < c; ++j) {
        // The exact dual lives inside the reduced span, but the ridge solve is
        // ill-conditioned and can leak a small component along the excluded
        // family; projecting again removes that leakage without moving the
        // in-span part.
        spec.prototypes.push_back(
            normalized(project_off(std::move(cls_duals[j]), dom_basis), "class"));
    }

    // Domain shifts: part whitened dual of the domain-offset couplings
    // (restricted to the subspace orthogonal to all class couplings), part
    // inert direction that couples to neither family. The dual part is what
    // latent-domain recovery keys on; the inert part carries the rest of the
    // style displacement without exciting any text readout, mirroring how real
    // style variation is mostly invisible to a class prompt.
    std::vector<Vec> dom_red(m_total);
    for (std::size_t m = 0; m < m_total; ++m) dom_red[m] = project_off(dom_adj[m], cls_basis);
    std::vector<Vec> dom_duals = whitened_duals(dom_red, "domain");

    // Silencing the inert part against BOTH families needs one projection off
    // their joint span: the two bases overlap, so projecting off one after the
    // other reintroduces components of the first.
    std::vector<Vec> joint = cls_adj;
    joint.insert(joint.end(), dom_adj.begin(), dom_adj.end());
    const std::vector<Vec> joint_basis = orthonormal_basis(joint);

    const double style_frac = 0.55;  // amplitude of the coupled part of each shift
    spec.shifts.reserve(m_total);
    for (std::size_t m = 0; m < m_total; ++m) {
        // Same leakage guard as for the prototypes, against the class family.
        Vec dual = normalized(project_off(std::move(dom_duals[m]), cls_basis), "domain");
        Vec inert = project_off(pull_back(w_f, gram, domain_offset[m]), joint_basis);
        double inert_sq = 0.0;
        for (double e : inert) inert_sq += e * e;
        if (inert_sq > 1e-20) {
            double a = style_frac;
            double b = std::sqrt(1.0 - a * a) / std::sqrt(inert_sq);
            for (std::size_t i = 0; i < p; ++i) dual[i] = a * dual[i] + b * inert[i];
        }
        spec.shifts.push_back(normalized(std::move(dual), "domain"));
    }
    return spec;
}

std::vector<DomainDataset> generate(const DomainSpec& spec, const Rng& base) {
    const DataConfig& cfg = spec.cfg;
    const std::size_t n = cfg.samples_per_domain_class;
    const std::size_t n_train = n * 4 / 5;
    const std::size_t n_test = n - n_train;
    if (n_train == 0 || n_test == 0) {
        throw ConfigError("generate: samples_per_domain_class too small for an 80/20 split");
    }
    if (spec.prototypes.size() != cfg.num_classes || spec.shifts.size() != cfg.num_domains_total) {
        throw ConfigError("generate: spec vector counts do not match config");
    }
    const std::size_t p = cfg.feature_dim;

    std::vector<DomainDataset> out(cfg.num_domains_total);
    for (std::size_t m = 0; m < cfg.num_domains_total; ++m) {
        out[m].domain_id = m;
        for (std::size_t j = 0; j < cfg.num_classes; ++j) {
            Vec mu(p);
            for (std::size_t i = 0; i < p; ++i) {
                mu[i] = spec.prototypes[j][i] + cfg.shift_strength * spec.shifts[m][i];
            }
            std::string tag = std::to_string(m) + "/" + std::to_string(j);
            Rng noise = base.child("data/noise/" + tag);
            std::vector<Sample> cell(n);
            for (std::size_t i = 0; i < n; ++i) {
                cell[i].x.resize(p);
                for (std::size_t q = 0; q < p; ++q) {
                    cell[i].x[q] = mu[q] + cfg.noise_sigma * noise.gaussian();
                }
                cell[i].label = j;
                cell[i].domain = m;
            }
            std::vector<std::size_t> order(n);
            for (std::size_t i = 0; i < n; ++i) order[i] = i;
            Rng split = base.child("data/split/" + tag);
            shuffle(order, split);
            for (std::size_t i = 0; i < n; ++i) {
                auto& dst = (i < n_train) ? out[m].train : out[m].test;
                dst.push_back(std::move(cell[order[i]]));
            }
        }
    }
    return out;
}

LeaveOneOut leave_one_out(const std::vector<DomainDataset>& datasets, std::size_t target) {
    if (datasets.size() < 2) {
        throw ConfigError("leave_one_out: need at least two domains");
    }
    if (target >= datasets.size()) {
        throw ConfigError("leave_one_out: target domain " + std::to_string(target) +
                          " out of range");
    }
    LeaveOneOut out;
    out.target_id = target;
    for (std::size_t m = 0; m < datasets.size(); ++m) {
        if (m != target) out.source_ids.push_back(m);
    }
    out.target_test = datasets[target].test;
    return out;
}

std::vector<ClientShard> partition(const std::vector<DomainDataset>& datasets,
                                   const std::vector<std::size_t>& source_ids, std::size_t k,
                                   PartitionMode mode, const Rng& base) {
    const std::size_t m_count = source_ids.size();
    if (k == 0 || m_count == 0) {
        throw ConfigError("partition: need at least one client and one source domain");
    }
    if (mode == PartitionMode::one_domain_iid && k < m_count) {
        throw ConfigError("partition: one-domain mode needs at least as many clients as domains");
    }
    std::size_t num_classes = 0;
    for (std::size_t src : source_ids) {
        for (const Sample& s : datasets.at(src).train) {
            num_classes = std::max(num_classes, s.label + 1);
        }
    }

    std::vector<ClientShard> shards(k);
    for (std::size_t i = 0; i < k; ++i) shards[i].client_id = i;

    auto deal = [&](const std::vector<const Sample*>& pool, const std::string& tag,
                    const std::vector<std::size_t>& clients) {
        std::vector<std::size_t> order(pool.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng rng = base.child("partition/" + tag);
        shuffle(order, rng);
        for (std::size_t i = 0; i < order.size(); ++i) {
            shards[clients[i % clients.size()]].samples.push_back(*pool[order[i]]);
        }
    };

    if (mode == PartitionMode::one_domain_iid) {
        for (std::size_t slot = 0; slot < m_count; ++slot) {
            std::size_t src = source_ids[slot];
            std::vector<std::size_t> clients;
            for (std::size_t i = slot; i < k; i += m_count) clients.push_back(i);
            for (std::size_t j = 0; j < num_classes; ++j) {
                std::vector<const Sample*> pool;
                for (const Sample& s : datasets[src].train) {
                    if (s.label == j) pool.push_back(&s);
                }
                deal(pool, "dom_" + std::to_string(src) + "/class_" + std::to_string(j), clients);
            }
        }
    } else {
        std::vector<std::size_t> clients(k);
        for (std::size_t i = 0; i < k; ++i) clients[i] = i;
        for (std::size_t j = 0; j < num_classes; ++j) {
            std::vector<const Sample*> pool;
            for (std::size_t src : source_ids) {
                for (const Sample& s : datasets[src].train) {
                    if (s.label == j) pool.push_back(&s);
                }
            }
            deal(pool, "mixed/class_" + std::to_string(j), clients);
        }
    }

    for (ClientShard& shard : shards) {
        std::vector<std::size_t> doms;
        for (const Sample& s : shard.samples) doms.push_back(s.domain);
        std::sort(doms.begin(), doms.end());
        doms.erase(std::unique(doms.begin(), doms.end()), doms.end());
        shard.domains_present = std::move(doms);
    }
    return shards;
}

void save_datasets(const std::filesystem::path& path, const DomainSpec& spec,
                   const std::vector<DomainDataset>& datasets) {
    std::ostringstream os;
    os << "{\n  \"config\": {\"num_domains_total\": " << spec.cfg.num_domains_total
       << ", \"num_classes\": " << spec.cfg.num_classes
       << ", \"feature_dim\": " << spec.cfg.feature_dim
       << ", \"samples_per_domain_class\": " << spec.cfg.samples_per_domain_class
       << ", \"shift_strength\": " << format_double(spec.cfg.shift_strength)
       << ", \"noise_sigma\": " << format_double(spec.cfg.noise_sigma) << "},\n";
    auto write_samples = [&](const std::vector<Sample>& list) {
        os << "[";
        for (std::size_t i = 0; i < list.size(); ++i) {
            if (i > 0) os << ", ";
            os << "{\"x\": ";
            write_double_array(os, list[i].x);
            os << ", \"y\": " << list[i].label << ", \"domain\": " << list[i].domain << "}";
        }
        os << "]";
    };
    os << "  \"domains\": [\n";
    for (std::size_t m = 0; m < datasets.size(); ++m) {
        os << "    {\"domain_id\": " << datasets[m].domain_id << ", \"train\": ";
        write_samples(datasets[m].train);
        os << ", \"test\": ";
        write_samples(datasets[m].test);
        os << "}" << (m + 1 < datasets.size() ? "," : "") << "\n";
    }
    os << "  ]\n}\n";
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("save_datasets: cannot open " + path.string());
    }
    out << os.str();
}

}  // namespace fedprompt
