"""
Choosing the number of components
=================================

x-means picks k by splitting clusters while the BIC improves; EM then
refines the mixture. Three collinear blobs are the awkward case for a naive
split down the middle.
"""
import numpy as np

from fragmatch import em_fit, run_xmeans

rng = np.random.default_rng(7)
centres = np.array([[0.0, 0, 0], [10, 0, 0], [20, 0, 0]])
pts = np.vstack([rng.normal(c, 1.0, (200, 3)) for c in centres])

clusters = run_xmeans(pts)
print("x-means k =", clusters.k)
print("cluster sizes", np.bincount(clusters.assignments))

mix, state = em_fit(pts, clusters, tau=1e-10)
print(f"EM: {state.n_iter} iterations, log-likelihood {state.log_likelihood:.2f}")
print("monotone:", bool(np.all(np.diff(state.history) >= -1e-9)))
order = np.argsort(mix.means[:, 0])
print("means\n", np.round(mix.means[order], 3))
print("weights", np.round(mix.weights[order], 3))

# a single blob stays a single component
print("one blob ->", run_xmeans(rng.normal(0, 1, (400, 3))).k)
