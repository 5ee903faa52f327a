"""Random walks on augmented trees of self-similar sets."""
from .ifs import IfsSystem, Similitude, Weights, builtin, hausdorff_dim, level_frontier
from .augtree import AugmentedTree, build, plain_tree

__all__ = [
    "AugmentedTree",
    "IfsSystem",
    "Similitude",
    "Weights",
    "build",
    "builtin",
    "hausdorff_dim",
    "level_frontier",
    "plain_tree",
]
__version__ = "0.1.0"
