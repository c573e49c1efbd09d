#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "cdemap/reranker.hpp"
#include "oracles.hpp"

namespace cdemap::testing {

struct ExhaustiveReport {
    std::size_t cases = 0;
    std::size_t disagreements = 0;
    std::string first_disagreement;
};

// Every score matrix over {1, t-1, t, 10} for n <= 3 rounds and up to 3
// candidates, for each vote threshold t and confidence threshold, comparing select_top with the integer
// oracle. Candidate ids run in descending order so the id tie-break is
// exercised against input order.
inline ExhaustiveReport check_select_top_exhaustively(const std::vector<int>& ts, const std::vector<double>& taus) {
    ExhaustiveReport rep;
    for (int t : ts) {
        const std::vector<int> values{1, t - 1, t, 10};
        for (double tau_rel : taus) {
            RerankConfig cfg;
            cfg.t = t;
            cfg.tau_rel = tau_rel;
            for (int n = 1; n <= 3; ++n) {
                for (int c = 1; c <= 3; ++c) {
                    std::size_t cells = static_cast<std::size_t>(n * c), total = 1;
                    for (std::size_t i = 0; i < cells; ++i) total *= values.size();
                    std::vector<OmopId> ids;
                    for (int i = 0; i < c; ++i) ids.push_back(100 - i);
                    for (std::size_t code = 0; code < total; ++code) {
                        std::vector<std::vector<int>> m(c, std::vector<int>(n));
                        std::size_t x = code;
                        for (int i = 0; i < c; ++i)
                            for (int j = 0; j < n; ++j) {
                                m[i][j] = values[x % values.size()];
                                x /= values.size();
                            }
                        std::vector<ScoredCandidate> scored;
                        for (int i = 0; i < c; ++i) {
                            Candidate cand;
                            cand.omop_id = ids[i];
                            scored.push_back(score_candidate(cand, m[i], t));
                        }
                        auto got = select_top(scored, cfg);
                        auto want = oracle::select_top(m, ids, t, tau_rel);
                        ++rep.cases;
                        bool agree = got.is_na() ? !want : (want && got.selected->candidate.omop_id == ids[*want]);
                        if (!agree && rep.disagreements++ == 0)
                            rep.first_disagreement = "t=" + std::to_string(t) + " tau_rel=" + std::to_string(tau_rel) +
                                                     " n=" + std::to_string(n) + " c=" + std::to_string(c) +
                                                     " code=" + std::to_string(code);
                    }
                }
            }
        }
    }
    return rep;
}

}  // namespace cdemap::testing
