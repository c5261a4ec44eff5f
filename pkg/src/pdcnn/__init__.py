"""Training engine for paralleled deep convolutional networks.

Branches of different convolutional depths run on one input, their final
feature maps fuse by concatenation under a shared 2-way classifier, and a
greedy fix-and-extend search picks the branch composition. Everything from
the layer gradients to the optimizer is implemented here on plain numpy
arrays, verifiable at desk scale via finite-difference checks, search-fixture
replay, and synthetic-data training.
"""

__version__ = "0.1.0"
