"""
Local interaction graphs
========================

Each agent links to its K nearest neighbors, and every agent also anchors a
group (a hyperedge) made of itself and its S-1 nearest neighbors. Groups with
the same members are kept once. A spatial hash keeps the search exact while
touching only nearby cells.
"""

import time

import numpy as np

from heteroloc.graphs import GraphConfig, GridIndex, build_multiscale, graph_dump, knn_neighbors
from heteroloc.scene import random_scene

# five scattered agents, K=2 and one hyperedge size
scene = random_scene(5, seed=3, density=0.02)
graph = build_multiscale(scene, GraphConfig(k=2, scales=(3,)))
print(graph_dump(graph))

# ties are broken by the lower index, so the graph is a pure function of the positions
nbr, dist = knn_neighbors([(0, 0), (1, 0), (-1, 0), (0, 1)], 2)
print("neighbors of agent 0 with three agents at distance 1:", nbr[0].tolist())

# the grid index returns exactly what brute force does, only faster
pts = np.random.default_rng(0).uniform(0, 300, size=(2000, 2))
t0 = time.perf_counter()
grid = GridIndex(pts)
fast = [grid.query(p, 10, exclude=i)[0] for i, p in enumerate(pts[:200])]
t1 = time.perf_counter()
d2 = ((pts[:200, None] - pts[None]) ** 2).sum(-1)
np.fill_diagonal(d2, np.inf)
slow = [np.lexsort((np.arange(len(pts)), row))[:10] for row in d2]
t2 = time.perf_counter()
print("grid equals brute force:", all(np.array_equal(a, b) for a, b in zip(fast, slow)))
print(f"grid {1e3 * (t1 - t0):.0f} ms, brute force {1e3 * (t2 - t1):.0f} ms for 200 queries")

# storage grows with N*K, not N^2
for n in (128, 512):
    g = build_multiscale(random_scene(n, seed=n), GraphConfig())
    print(f"N={n}: {g.num_entries() / (n * 10):.2f} index entries per N*K")
