"""maform: Monge-Ampere foliations, Moser normalization and deformation
invariants of complete circular domains at desk scale.

Convention used throughout: dc = i(dbar - d), so d(dc) = 2i d dbar and
d(dc)|z|^2 = 4 dx^dy.  This convention line is repeated in every report
header emitted by the command line tools.
"""

CONVENTION = "dc = i(dbar - d); ddc = 2i d-dbar; ddc|z|^2 = 4 dx^dy"

__version__ = "0.1.0"
