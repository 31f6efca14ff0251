#include "idkl/evalmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

namespace idkl::eval {
namespace {

double pair_distance(const double* a, const double* b, std::size_t c, Metric metric) {
    if (metric == Metric::euclidean) {
        double s = 0.0;
        for (std::size_t k = 0; k < c; ++k) {
            const double d = a[k] - b[k];
            s += d * d;
        }
        return std::sqrt(s);
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
        dot += a[k] * b[k];
        na += a[k] * a[k];
        nb += b[k] * b[k];
    }
    const double denom = std::sqrt(na) * std::sqrt(nb);
    return 1.0 - (denom > 0.0 ? dot / denom : 0.0);
}

}  // namespace

std::vector<Ranking> rank_gallery(const Tensor& query, const Tensor& gallery, Metric metric, std::size_t threads) {
    if (query.rank() != 2 || gallery.rank() != 2 || query.dim(1) != gallery.dim(1)) {
        throw DimensionError("rank_gallery: query " + shape_str(query.shape()) + " and gallery " +
                             shape_str(gallery.shape()) + " need the same feature width");
    }
    const std::size_t q = query.dim(0), g = gallery.dim(0), c = query.dim(1);
    std::vector<Ranking> out(q);
    auto work = [&](std::size_t begin, std::size_t end) {
        std::vector<double> dist(g);
        for (std::size_t i = begin; i < end; ++i) {
            for (std::size_t j = 0; j < g; ++j) {
                dist[j] = pair_distance(query.data().data() + i * c, gallery.data().data() + j * c, c, metric);
            }
            Ranking r(g);
            std::iota(r.begin(), r.end(), std::size_t{0});
            std::sort(r.begin(), r.end(), [&](std::size_t a, std::size_t b) {
                return dist[a] < dist[b] || (dist[a] == dist[b] && a < b);
            });
            out[i] = std::move(r);
        }
    };
    threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(1, q));
    if (threads == 1) {
        work(0, q);
        return out;
    }
    std::vector<std::thread> pool;
    const std::size_t per = (q + threads - 1) / threads;
    for (std::size_t begin = 0; begin < q; begin += per) {
        pool.emplace_back(work, begin, std::min(q, begin + per));
    }
    for (auto& th : pool) th.join();
    return out;
}

MetricsReport cmc_map(const std::vector<Ranking>& rankings, const std::vector<std::size_t>& query_labels,
                      const std::vector<std::size_t>& gallery_labels) {
    if (rankings.size() != query_labels.size()) {
        throw DimensionError("cmc_map: one ranking per query required");
    }
    if (gallery_labels.empty()) {
        throw ContractError("cmc_map: empty gallery");
    }
    const std::size_t g = gallery_labels.size();
    MetricsReport r;
    r.n_queries = rankings.size();
    std::vector<std::size_t> first_hit_count(g, 0);
    for (std::size_t qi = 0; qi < rankings.size(); ++qi) {
        const Ranking& rank = rankings[qi];
        if (rank.size() != g) {
            throw DimensionError("cmc_map: ranking length differs from gallery size");
        }
        std::size_t hits = 0;
        double precision_sum = 0.0;
        for (std::size_t pos = 0; pos < g; ++pos) {
            if (gallery_labels[rank[pos]] == query_labels[qi]) {
                if (hits == 0) ++first_hit_count[pos];
                ++hits;
                precision_sum += static_cast<double>(hits) / static_cast<double>(pos + 1);
            }
        }
        if (hits == 0) {
            throw ContractError("cmc_map: query " + std::to_string(qi) + " has no relevant gallery item");
        }
        r.average_precision.push_back(precision_sum / static_cast<double>(hits));
    }
    r.cmc.resize(g);
    std::size_t cumulative = 0;
    for (std::size_t k = 0; k < g; ++k) {
        cumulative += first_hit_count[k];
        r.cmc[k] = r.n_queries ? static_cast<double>(cumulative) / static_cast<double>(r.n_queries) : 0.0;
    }
    double s = 0.0;
    for (double ap : r.average_precision) s += ap;
    r.map = r.n_queries ? s / static_cast<double>(r.n_queries) : 0.0;
    return r;
}

Tensor embed_samples(const model::DualBranchNet& net, const std::vector<data::Sample>& samples, std::size_t chunk) {
    if (samples.empty()) {
        throw ContractError("embed_samples: no samples");
    }
    chunk = std::max<std::size_t>(1, chunk);
    std::vector<double> all;
    std::size_t width = 0;
    for (std::size_t begin = 0; begin < samples.size(); begin += chunk) {
        const std::vector<data::Sample> part(samples.begin() + static_cast<std::ptrdiff_t>(begin),
                                             samples.begin() + static_cast<std::ptrdiff_t>(
                                                                   std::min(samples.size(), begin + chunk)));
        const Tensor f = model::embed_shared(net, data::stack_images(part));
        width = f.dim(1);
        all.insert(all.end(), f.vec().begin(), f.vec().end());
    }
    return Tensor({samples.size(), width}, std::move(all));
}

MetricsReport evaluate(const model::DualBranchNet& net, const std::vector<data::Sample>& gallery,
                       const std::vector<data::Sample>& query, const EvalOptions& options) {
    if (gallery.empty()) {
        throw ContractError("evaluate: empty gallery");
    }
    const Tensor gf = embed_samples(net, gallery, options.chunk);
    const Tensor qf = embed_samples(net, query, options.chunk);
    std::vector<std::size_t> gl, ql;
    for (const auto& s : gallery) gl.push_back(s.identity);
    for (const auto& s : query) ql.push_back(s.identity);
    return cmc_map(rank_gallery(qf, gf, options.metric, options.threads), ql, gl);
}

nlohmann::json to_json(const MetricsReport& r) {
    return {{"cmc", r.cmc}, {"map", r.map}, {"n_queries", r.n_queries}};
}

}  // namespace idkl::eval
