// Latent-graph export: tokens, centrality weights and the full adjacency for
// one sentence, serialized as JSON for external plotting.
#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "eigencent/adjacency.hpp"
#include "eigencent/eigencentrality.hpp"
#include "eigencent/numerics.hpp"

namespace eigencent {

struct GraphExport {
    std::vector<std::string> tokens;
    Vector weights;        // sums to 1
    Matrix adjacency;      // column-stochastic, tokens.size() square
    double lambda{0.0};
    std::size_t steps_taken{0};
    bool converged{false};
};

inline nlohmann::json to_json(const GraphExport& g) {
    nlohmann::json j;
    j["tokens"] = g.tokens;
    j["weights"] = g.weights;
    nlohmann::json adj = nlohmann::json::array();
    for (std::size_t i = 0; i < g.adjacency.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t c = 0; c < g.adjacency.cols(); ++c) row.push_back(g.adjacency(i, c));
        adj.push_back(std::move(row));
    }
    j["adjacency"] = std::move(adj);
    j["meta"] = {{"lambda", g.lambda},
                 {"steps_taken", g.steps_taken},
                 {"converged", g.converged}};
    return j;
}

}  // namespace eigencent
