"""
Average consensus on a random sensor network
=============================================

Nodes scattered over a 16 x 16 square talk to neighbours within the
connectivity radius.  Metropolis weights give a symmetric, doubly
stochastic matrix, so repeated local averaging drives every node to the
network mean at a rate set by the second largest eigenvalue.
"""
import math

import numpy as np

from cfdpf.consensus import ConsensusState, metropolis_weights, random_geometric_graph, run_consensus

rng = np.random.default_rng(1)
graph = random_geometric_graph(12, None, 16.0, rng)
U = metropolis_weights(graph)
print(f"{graph.n_nodes} nodes, {len(graph.edges())} links, radius {graph.connectivity_radius:.2f}")
print(f"second eigenvalue {U.eigenvalues[1]:.4f}, convergence time N_c = {U.convergence_time:.2f} iterations")

# every node starts from its own reading
x = rng.normal(20.0, 3.0, size=graph.n_nodes)
print(f"true mean {x.mean():.6f}")

steps = math.ceil(5 * U.convergence_time)
state = run_consensus(ConsensusState(x), U, steps)
for it in sorted({0, 1, 2, 5, steps}):
    if it <= steps:
        print(f"  iteration {it:3d}: max disagreement {state.disagreement[it]:.3e}")

print("node values after", steps, "iterations:")
print(np.round(state.values, 6))
print(f"mean drift {abs(state.values.mean() - x.mean()):.1e}")

# the predicted decay after steps iterations is roughly exp(-steps / N_c)
print(f"observed ratio {state.disagreement[-1] / state.disagreement[0]:.2e}, "
      f"e^(-steps/N_c) = {math.exp(-steps / U.convergence_time):.2e}")
