"""splatsim: a software 3D Gaussian splatting renderer paired with a desk-scale
accelerator performance model.

The package has two halves that share one scene representation:

* rendering: scene ingest / synthesis, EWA projection to screen-space conics,
  tile rasterization (naive and axis-separated paths, with operation counters),
  sorted alpha blending and learned weighted order-independent blending.
* hardware modeling: bit-exact FP16 arithmetic, tile visit trajectories,
  a set-associative Gaussian-feature cache simulator, and cycle/roofline
  models for the naive and interleaved rasterize/sort pipelines.

Everything is deterministic given (config, seed).
"""

__version__ = "0.1.0"

# Intentionally no submodule imports here: the CLI pins BLAS thread counts
# via environment variables, which only works if importing the package does
# not drag numpy in first.
