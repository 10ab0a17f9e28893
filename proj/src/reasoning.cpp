#include "selfheal/reasoning.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "selfheal/text.hpp"

namespace selfheal::reasoning {

using json = nlohmann::ordered_json;

EventMatrix aggregate_windows(const std::vector<perception::StructuredEvent>& events,
                              std::int64_t window_len_ms, std::int64_t stride_ms) {
    if (events.empty()) throw std::invalid_argument("aggregate_windows: no events");
    if (window_len_ms <= 0) throw std::invalid_argument("aggregate_windows: bad window length");
    if (stride_ms <= 0) stride_ms = window_len_ms;  // tumbling

    std::int64_t min_ts = events.front().timestamp_ms;
    std::int64_t max_ts = events.front().timestamp_ms;
    for (const auto& e : events) {
        min_ts = std::min(min_ts, e.timestamp_ms);
        max_ts = std::max(max_ts, e.timestamp_ms);
    }

    EventMatrix out;
    out.window_len_ms = window_len_ms;
    std::map<std::string, std::size_t> index;
    for (const auto& e : events) {
        if (index.emplace(e.template_id, out.event_order.size()).second) {
            out.event_order.push_back(e.template_id);
        }
    }

    const std::size_t m = static_cast<std::size_t>((max_ts - min_ts) / stride_ms) + 1;
    out.counts = Matrix(m, out.event_order.size());
    out.row_start_ms.resize(m);
    for (std::size_t u = 0; u < m; ++u) {
        out.row_start_ms[u] = min_ts + static_cast<std::int64_t>(u) * stride_ms;
    }
    for (const auto& e : events) {
        // windows may overlap when stride < length; count into every window
        // whose span covers the event
        const std::size_t last =
            static_cast<std::size_t>((e.timestamp_ms - min_ts) / stride_ms);
        for (std::size_t u = last;; --u) {
            if (e.timestamp_ms < out.row_start_ms[u] + window_len_ms) {
                out.counts(u, index[e.template_id]) += 1.0;
            } else {
                break;  // earlier windows end even sooner
            }
            if (u == 0) break;
        }
    }
    return out;
}

namespace {

Matrix mask_from_pairs(const std::vector<std::pair<int, int>>& pairs, std::size_t d,
                       const PenaltySet& penalties) {
    std::set<std::pair<int, int>> supported;
    for (const auto& [i, j] : pairs) {
        if (i < 0 || j < 0 || static_cast<std::size_t>(i) >= d ||
            static_cast<std::size_t>(j) >= d) {
            throw std::invalid_argument("prior pair outside event order");
        }
        supported.emplace(i, j);
    }
    Matrix mask(d, d, penalties.bg);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            auto ij = std::make_pair(static_cast<int>(i), static_cast<int>(j));
            auto ji = std::make_pair(static_cast<int>(j), static_cast<int>(i));
            if (supported.count(ij)) {
                mask(i, j) = penalties.prior;
            } else if (supported.count(ji)) {
                mask(i, j) = penalties.rev;
            }
        }
    }
    return mask;
}

}  // namespace

PriorMasks build_prior_masks(const std::vector<std::pair<int, int>>& intra_pairs,
                             const std::vector<std::pair<int, int>>& inter_pairs,
                             std::size_t type_count, const PenaltySet& intra_penalties,
                             const PenaltySet& inter_penalties) {
    if (intra_penalties.prior < 0 || intra_penalties.rev < 0 || intra_penalties.bg < 0 ||
        inter_penalties.prior < 0 || inter_penalties.rev < 0 || inter_penalties.bg < 0) {
        throw std::invalid_argument("penalties must be nonnegative");
    }
    PriorMasks masks;
    masks.w_mask = mask_from_pairs(intra_pairs, type_count, intra_penalties);
    masks.a_mask = mask_from_pairs(inter_pairs, type_count, inter_penalties);
    masks.intra_pairs = intra_pairs.size();
    masks.inter_pairs = inter_pairs.size();
    return masks;
}

Matrix standardize(const Matrix& counts) {
    const std::size_t m = counts.rows();
    const std::size_t d = counts.cols();
    Matrix out(m, d);
    for (std::size_t j = 0; j < d; ++j) {
        double mean = 0.0;
        for (std::size_t u = 0; u < m; ++u) mean += counts(u, j);
        mean /= static_cast<double>(m);
        double var = 0.0;
        for (std::size_t u = 0; u < m; ++u) {
            const double c = counts(u, j) - mean;
            var += c * c;
        }
        var /= static_cast<double>(m);
        var = std::max(var, 1e-8);  // variance floor for constant columns
        const double inv_sd = 1.0 / std::sqrt(var);
        for (std::size_t u = 0; u < m; ++u) out(u, j) = (counts(u, j) - mean) * inv_sd;
    }
    return out;
}

namespace {

struct LagPair {
    Matrix y;  // rows 1..m-1 of standardized X
    Matrix z;  // rows 0..m-2
};

LagPair lag_split(const Matrix& standardized) {
    const std::size_t m = standardized.rows();
    const std::size_t d = standardized.cols();
    if (m < 2) throw std::invalid_argument("loss_and_grad: need at least 2 windows");
    LagPair out{Matrix(m - 1, d), Matrix(m - 1, d)};
    for (std::size_t r = 0; r + 1 < m; ++r) {
        for (std::size_t c = 0; c < d; ++c) {
            out.y(r, c) = standardized(r + 1, c);
            out.z(r, c) = standardized(r, c);
        }
    }
    return out;
}

Matrix residual(const LagPair& lp, const Matrix& w, const Matrix& a) {
    return lp.y - lp.y * w - lp.z * a;
}

LossGrad loss_and_grad_lagged(const LagPair& lp, const Matrix& w, const Matrix& a) {
    const double n = static_cast<double>(lp.y.rows());
    Matrix r = residual(lp, w, a);
    LossGrad out;
    const double fro = r.frobenius_norm();
    out.loss = fro * fro / (2.0 * n);
    out.grad_w = lp.y.transpose() * r * (-1.0 / n);
    out.grad_a = lp.z.transpose() * r * (-1.0 / n);
    return out;
}

}  // namespace

LossGrad loss_and_grad(const EventMatrix& x, const Matrix& w, const Matrix& a) {
    return loss_and_grad_lagged(lag_split(standardize(x.counts)), w, a);
}

Acyclicity acyclicity(const Matrix& w) {
    const std::size_t d = w.rows();
    Matrix exp_haddamard = numerics::matrix_exponential(w.hadamard(w));
    Acyclicity out;
    out.h = exp_haddamard.trace() - static_cast<double>(d);
    out.grad = exp_haddamard.transpose().hadamard(w * 2.0);
    return out;
}

namespace {

void zero_diagonal(Matrix& m) {
    for (std::size_t i = 0; i < m.rows(); ++i) m(i, i) = 0.0;
}

double soft_threshold(double v, double t) {
    if (v > t) return v - t;
    if (v < -t) return v + t;
    return 0.0;
}

double dot(const Matrix& a, const Matrix& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.data().size(); ++i) s += a.data()[i] * b.data()[i];
    return s;
}

struct SmoothEval {
    double value = 0.0;
    Matrix grad_w;
    Matrix grad_a;
};

SmoothEval smooth_eval(const LagPair& lp, const Matrix& w, const Matrix& a, double rho,
                       double alpha) {
    LossGrad lg = loss_and_grad_lagged(lp, w, a);
    Acyclicity ac = acyclicity(w);
    SmoothEval out;
    out.value = lg.loss + alpha * ac.h + 0.5 * rho * ac.h * ac.h;
    out.grad_w = lg.grad_w + ac.grad * (alpha + rho * ac.h);
    out.grad_a = lg.grad_a;
    return out;
}

double smooth_value(const LagPair& lp, const Matrix& w, const Matrix& a, double rho,
                    double alpha) {
    const double n = static_cast<double>(lp.y.rows());
    Matrix r = residual(lp, w, a);
    const double fro = r.frobenius_norm();
    const double h = acyclicity(w).h;
    return fro * fro / (2.0 * n) + alpha * h + 0.5 * rho * h * h;
}

/// Proximal-gradient descent on smooth + weighted-L1 for fixed (rho, alpha).
void inner_solve(const LagPair& lp, const PriorMasks& masks, const SolveConfig& cfg,
                 double rho, double alpha, Matrix& w, Matrix& a) {
    double step = 1.0;
    for (int iter = 0; iter < cfg.max_inner; ++iter) {
        SmoothEval cur = smooth_eval(lp, w, a, rho, alpha);

        Matrix w_next, a_next, dw, da;
        while (true) {
            w_next = w - cur.grad_w * step;
            a_next = a - cur.grad_a * step;
            for (std::size_t i = 0; i < w.rows(); ++i) {
                for (std::size_t j = 0; j < w.cols(); ++j) {
                    w_next(i, j) = soft_threshold(w_next(i, j),
                                                  step * cfg.lambda_w * masks.w_mask(i, j));
                    a_next(i, j) = soft_threshold(a_next(i, j),
                                                  step * cfg.lambda_a * masks.a_mask(i, j));
                }
            }
            zero_diagonal(w_next);

            dw = w_next - w;
            da = a_next - a;
            const double quad = (dw.frobenius_norm() * dw.frobenius_norm() +
                                 da.frobenius_norm() * da.frobenius_norm()) /
                                (2.0 * step);
            const double bound = cur.value + dot(cur.grad_w, dw) + dot(cur.grad_a, da) + quad;
            if (smooth_value(lp, w_next, a_next, rho, alpha) <= bound + 1e-12) break;
            step *= 0.5;
            if (step < 1e-12) break;
        }
        if (step < 1e-12) break;

        const double move = std::max(dw.max_abs(), da.max_abs());
        w = std::move(w_next);
        a = std::move(a_next);
        if (move < cfg.inner_tolerance) break;
        step = std::min(step * 1.5, 1e4);
    }
}

}  // namespace

SolveResult solve(const EventMatrix& x, const PriorMasks& masks, const SolveConfig& cfg) {
    const std::size_t d = x.types();
    if (masks.w_mask.rows() != d || masks.a_mask.rows() != d) {
        throw std::invalid_argument("solve: masks not aligned with event order");
    }
    LagPair lp = lag_split(standardize(x.counts));

    SolveResult result;
    result.w = Matrix(d, d);
    result.a = Matrix(d, d);

    double rho = cfg.rho_init;
    double alpha = 0.0;
    double h_prev = std::numeric_limits<double>::infinity();

    int outer = 0;
    for (outer = 0; outer < cfg.max_outer; ++outer) {
        inner_solve(lp, masks, cfg, rho, alpha, result.w, result.a);
        const double h = acyclicity(result.w).h;
        result.final_h = h;
        if (h <= cfg.h_tolerance) {
            result.converged = true;
            break;
        }
        alpha += rho * h;
        if (h > (1.0 - cfg.required_h_shrink) * h_prev) rho *= cfg.rho_multiplier;
        if (rho > cfg.rho_max) break;
        h_prev = h;
    }
    result.outer_iterations = outer + 1;
    result.iteration_capped = !result.converged && outer >= cfg.max_outer;
    return result;
}

namespace {

enum class Support { prior = 0, bg = 1, rev = 2 };  // lower ranks stronger

/// Classify directly from mask magnitudes: the smallest value in the mask
/// family plays the prior role, the largest the reversal role.
Support support_from_mask(const Matrix& mask, std::size_t i, std::size_t j) {
    double lo = mask(0, 0), hi = mask(0, 0);
    for (double v : mask.data()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double v = mask(i, j);
    if (lo == hi) return Support::bg;  // uniform mask carries no preference
    if (v == lo) return Support::prior;
    if (v == hi) return Support::rev;
    return Support::bg;
}

void prune_matrix(Matrix& m, const SolveConfig& cfg, bool skip_diagonal) {
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            if (skip_diagonal && i == j) {
                m(i, j) = 0.0;
                continue;
            }
            double v = m(i, j);
            if (std::abs(v) < cfg.theta_prune) {
                m(i, j) = 0.0;
                continue;
            }
            if (std::abs(v) < cfg.damp_band * cfg.theta_prune) {
                v *= cfg.damp_factor;  // weak edges near the threshold
                m(i, j) = std::abs(v) < cfg.theta_prune ? 0.0 : v;
            }
        }
    }
}

std::vector<std::vector<bool>> reachability(std::size_t d,
                                            const std::vector<GraphEdge>& edges) {
    std::vector<std::vector<bool>> reach(d, std::vector<bool>(d, false));
    for (const auto& e : edges) reach[e.src][e.dst] = true;
    for (std::size_t k = 0; k < d; ++k) {
        for (std::size_t i = 0; i < d; ++i) {
            if (!reach[i][k]) continue;
            for (std::size_t j = 0; j < d; ++j) {
                if (reach[k][j]) reach[i][j] = true;
            }
        }
    }
    return reach;
}

}  // namespace

CausalGraph prune_and_resolve(const Matrix& w, const Matrix& a, const PriorMasks& masks,
                              const std::vector<std::string>& event_order,
                              const SolveConfig& cfg) {
    const std::size_t d = w.rows();
    Matrix wp = w;
    Matrix ap = a;
    prune_matrix(wp, cfg, /*skip_diagonal=*/true);
    prune_matrix(ap, cfg, /*skip_diagonal=*/false);

    // Direction resolution for surviving bidirectional intra pairs with
    // similar plausibility: prior support wins, then larger weight, then
    // the lower (i, j) index.
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = i + 1; j < d; ++j) {
            const double fwd = std::abs(wp(i, j));
            const double bwd = std::abs(wp(j, i));
            if (fwd == 0.0 || bwd == 0.0) continue;
            const double ratio = std::max(fwd, bwd) / std::min(fwd, bwd);
            if (ratio >= cfg.direction_ratio) continue;
            const Support s_fwd = support_from_mask(masks.w_mask, i, j);
            const Support s_bwd = support_from_mask(masks.w_mask, j, i);
            bool keep_fwd;
            if (s_fwd != s_bwd) {
                keep_fwd = s_fwd < s_bwd;
            } else if (fwd != bwd) {
                keep_fwd = fwd > bwd;
            } else {
                keep_fwd = true;  // (i,j) is the lower index pair
            }
            if (keep_fwd) {
                wp(j, i) = 0.0;
            } else {
                wp(i, j) = 0.0;
            }
        }
    }

    CausalGraph graph;
    graph.nodes = event_order;
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            if (wp(i, j) != 0.0) {
                graph.intra.push_back({static_cast<int>(i), static_cast<int>(j), wp(i, j), 0});
            }
        }
    }
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            if (ap(i, j) != 0.0) {
                graph.inter.push_back({static_cast<int>(i), static_cast<int>(j), ap(i, j), 1});
            }
        }
    }

    // Residual-cycle sweep: drop the globally weakest intra edge that lies
    // on a cycle, repeat until the intra subgraph is a DAG.
    while (true) {
        auto reach = reachability(d, graph.intra);
        int victim = -1;
        double victim_weight = 0.0;
        for (std::size_t k = 0; k < graph.intra.size(); ++k) {
            const auto& e = graph.intra[k];
            if (!reach[e.dst][e.src]) continue;  // not on a cycle
            const double wgt = std::abs(e.weight);
            if (victim < 0 || wgt < victim_weight) {
                victim = static_cast<int>(k);
                victim_weight = wgt;
            }
        }
        if (victim < 0) break;
        graph.intra.erase(graph.intra.begin() + victim);
    }
    return graph;
}

bool has_intra_cycle(const CausalGraph& graph) {
    const std::size_t d = graph.nodes.size();
    auto reach = reachability(d, graph.intra);
    for (const auto& e : graph.intra) {
        if (reach[e.dst][e.src]) return true;
    }
    return false;
}

std::string graph_to_json(const CausalGraph& graph, const std::string& config_hash) {
    json doc;
    doc["nodes"] = graph.nodes;
    json intra = json::array();
    for (const auto& e : graph.intra) {
        json rec;
        rec["src"] = graph.nodes[static_cast<std::size_t>(e.src)];
        rec["dst"] = graph.nodes[static_cast<std::size_t>(e.dst)];
        rec["w"] = e.weight;
        intra.push_back(std::move(rec));
    }
    doc["intra"] = std::move(intra);
    json inter = json::array();
    for (const auto& e : graph.inter) {
        json rec;
        rec["src"] = graph.nodes[static_cast<std::size_t>(e.src)];
        rec["dst"] = graph.nodes[static_cast<std::size_t>(e.dst)];
        rec["w"] = e.weight;
        rec["lag"] = e.lag;
        inter.push_back(std::move(rec));
    }
    doc["inter"] = std::move(inter);
    doc["config_hash"] = config_hash;
    return doc.dump(2);
}

CausalGraph graph_from_json(const std::string& doc_text) {
    json doc = json::parse(doc_text);
    CausalGraph graph;
    graph.nodes = doc.at("nodes").get<std::vector<std::string>>();
    std::map<std::string, int> index;
    for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
        index[graph.nodes[i]] = static_cast<int>(i);
    }
    for (const auto& rec : doc.at("intra")) {
        graph.intra.push_back({index.at(rec.at("src").get<std::string>()),
                               index.at(rec.at("dst").get<std::string>()),
                               rec.at("w").get<double>(), 0});
    }
    for (const auto& rec : doc.at("inter")) {
        graph.inter.push_back({index.at(rec.at("src").get<std::string>()),
                               index.at(rec.at("dst").get<std::string>()),
                               rec.at("w").get<double>(), rec.value("lag", 1)});
    }
    return graph;
}

}  // namespace selfheal::reasoning
