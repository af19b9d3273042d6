"""Waterdrop-robust radiance fields at desk scale.

Synthetic multi-view data with adhesive waterdrops, attention-to-mask
conversion, a radiance field trained with a masked photometric loss, and
image-quality evaluation of the rendered views.
"""

__version__ = "0.1.0"
