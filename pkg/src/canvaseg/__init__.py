"""Interactive full-image segmentation on a shared canvas.

All regions of an image are segmented jointly: a small convolutional model
turns per-region annotations into logit maps that are pasted back onto a
common canvas and compete for every pixel through a softmax. The package
bundles the autodiff core, annotation geometry, the model itself, a
simulated annotator, a synthetic-scene experiment harness, and an HTTP
annotation service.
"""

__version__ = "0.1.0"
