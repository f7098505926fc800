"""Build a semi-synthetic networked dataset and look at what the simulator produced.

A stochastic block model supplies the graph, bag-of-words covariates come from
community-specific topic mixtures, and a topic model fitted on those covariates
drives treatment assignment and the potential outcomes. Raising k2 makes the
neighbours' topics matter more, which is the confounding a graph model can exploit.
"""
import numpy as np

from netcate.graphdata import community_labels, generate_bow_covariates, generate_sbm_graph
from netcate.topicsim import SimConfig, fit_lda, simulate, summarize

graph = generate_sbm_graph(300, 3, 0.06, 0.005, seed=0)
x = generate_bow_covariates(community_labels(300, 3), vocab_size=120, n_topics=8, seed=0)
print(f"graph: {graph.n_units} units, {graph.n_edges} edges, mean degree {graph.degrees().mean():.2f}")

cfg = SimConfig(K=4, T=8, seed=0)
state = fit_lda(x, cfg)  # shared by both simulations below
for k2 in (0.5, 2.0):
    ds = simulate(x, graph, SimConfig(K=4, T=8, k2=k2, seed=0), state=state)
    s = summarize(ds)
    print(f"k2={k2}: avg pairwise ATE {s['avg_pairwise_ate']:.2f}, "
          f"treatment counts {s['treatment_counts']}")

# the factual outcome is the noiseless mean at the assigned arm plus shared noise
rows = np.arange(ds.n_units)
resid = ds.factual_outcomes - ds.expected_outcomes[rows, ds.treatments]
print(f"noise std on factual outcomes: {resid.std():.3f}")
