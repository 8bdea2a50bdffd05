"""Second-quantized workbench for a dilute quantum gas in a hard-wall box.

Builds truncated Fock spaces over box modes, two-body scattering matrices,
the coarse-grained collision generator acting on mode bilinears, maximum
entropy (generalized Gibbs) states over cell observables and the closed
kinetic equations they induce.
"""

__version__ = "0.1.0"
