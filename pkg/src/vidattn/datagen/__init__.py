"""MNIST ingestion, Scaled MNIST, augmented Moving MNIST and elastic deformation."""
from .container import read_container, read_header, read_pgm, write_container, write_pgm
from .mnist import MnistSet, bundled_dir, export_bundled_subset, load_mnist_dir, load_mnist_idx
from .moving import (DatasetSpec, VideoDataset, elastic_dataset, generate_dataset, render_canvas,
                     simulate_trajectory)
from .warp import (ElasticParams, ScaledMnistParams, apply_rotation_scale, elastic_deform, scaled_mnist,
                   scaled_mnist_set)

__all__ = [
    "DatasetSpec", "ElasticParams", "MnistSet", "ScaledMnistParams", "VideoDataset",
    "apply_rotation_scale", "bundled_dir", "elastic_dataset", "elastic_deform", "export_bundled_subset",
    "generate_dataset", "load_mnist_dir", "load_mnist_idx", "read_container", "read_header",
    "read_pgm", "render_canvas", "scaled_mnist", "scaled_mnist_set", "simulate_trajectory",
    "write_container", "write_pgm",
]
