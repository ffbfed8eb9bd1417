"""Part-based explanations for image classifiers.

The pipeline transfers human part labels from an annotated gallery to
new images via multi-layer feature correspondence, searches each image
for minimal sufficient segment subsets, and compresses those into
per-class decision lists whose coverage is measured on held-out images.
"""

__version__ = "0.1.0"
