"""Scale-free collaborative protocols for discrete-time multi-agent systems.

Modules: :mod:`netgraph` (graphs and their matrices), :mod:`lti` (agent
models and structure tests), :mod:`synthesis` (gains, pre-compensators,
exosystem augmentation), :mod:`protocols` (controller transitions),
:mod:`sim` (closed-loop simulation), :mod:`verify` (stacked closed-loop
oracles and certificates) and :mod:`cli`.
"""

__version__ = "0.1.0"
