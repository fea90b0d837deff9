"""Seedable simulator of federated learning over heterogeneous devices.

Implements ranking-based client selection (a per-device Q-network trained
with a joint TD + pairwise ranking loss, warm-started by behavioral cloning
against analytical selection policies) alongside analytical baselines, a
parametric latency/energy cost model with probing-based early exit, and a
reproducible experiment harness.
"""

__version__ = "0.1.0"
