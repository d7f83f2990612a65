"""manynode: project many-node application performance from single-node timing profiles.

Three stages: cluster ranks from counter profiles, distill compute-phase
timing distributions from marker logs, and replay communication skeletons
on a discrete-event network model with constant or Monte-Carlo timings.
"""

__version__ = "0.1.0"

PROFILE_FORMAT = "v1"
