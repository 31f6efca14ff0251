#pragma once

#include <cstddef>
#include <vector>

#include "idkl/dataset.hpp"
#include "idkl/model.hpp"
#include "idkl/tensor.hpp"
#include "json.hpp"

namespace idkl::eval {

enum class Metric { euclidean, cosine };

using Ranking = std::vector<std::size_t>;

/// Per query, gallery indices by ascending distance; ties go to the lower
/// gallery index. Queries are split across `threads` workers.
std::vector<Ranking> rank_gallery(const Tensor& query, const Tensor& gallery, Metric metric = Metric::euclidean,
                                  std::size_t threads = 1);

struct MetricsReport {
    std::vector<double> cmc;  // cmc[k-1] = rank-k accuracy, k = 1..G
    double map = 0.0;
    std::size_t n_queries = 0;
    std::vector<double> average_precision;

    double rank(std::size_t k) const { return cmc.at(k - 1); }
};

/// Throws ContractError if a query has no relevant gallery item.
MetricsReport cmc_map(const std::vector<Ranking>& rankings, const std::vector<std::size_t>& query_labels,
                      const std::vector<std::size_t>& gallery_labels);

struct EvalOptions {
    Metric metric = Metric::euclidean;
    std::size_t threads = 1;
    std::size_t chunk = 64;  // images per embedding pass
};

/// Embeds every image with the shared branch only and scores query -> gallery retrieval.
MetricsReport evaluate(const model::DualBranchNet& net, const std::vector<data::Sample>& gallery,
                       const std::vector<data::Sample>& query, const EvalOptions& options = {});

/// Shared-branch features for a list of samples, computed in chunks without a tape.
Tensor embed_samples(const model::DualBranchNet& net, const std::vector<data::Sample>& samples,
                     std::size_t chunk = 64);

nlohmann::json to_json(const MetricsReport& r);

}  // namespace idkl::eval
