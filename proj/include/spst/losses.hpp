#pragma once

#include <span>

#include "spst/adversary.hpp"
#include "spst/config.hpp"
#include "spst/graph.hpp"

namespace spst {

// Hinge losses averaged per scale over the logit grid, then over scales.
Val disc_hinge_loss(Graph& g, const DiscOut& real, const DiscOut& fake);
Val gen_adv_loss(Graph& g, const DiscOut& fake);

// Mean L1 between matching discriminator features, averaged over features
// and scales.
Val feature_loss(Graph& g, const DiscOut& real, const DiscOut& fake);

// Multi-window mel distance: per window, L1 plus sqrt(s/2)-weighted squared
// log-L2, each normalized by one channel's mel element count; summed over
// windows, averaged over audio channels. x and gen are per-channel waves of
// equal length.
Val reconstruction_loss(Graph& g, std::span<const Val> x, std::span<const Val> gen,
                        int sample_rate);

// ||enc_out - v_q||^2 with v_q held constant, so the gradient pulls the
// encoder toward the chosen codes.
Val commit_loss(Graph& g, Val enc_out, const Tensor& v_q);

Val total_generator_loss(Graph& g, Val adv, Val feat, Val rec, Val com, const LossWeights& w);

}  // namespace spst
