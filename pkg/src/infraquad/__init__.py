"""Infrastructure arithmetic for real quadratic fields: forms, distances,
classical oracles, exact dual-sampler simulation, and recovery pipelines."""

__version__ = "0.1.0"
