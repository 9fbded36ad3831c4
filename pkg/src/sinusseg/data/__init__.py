from .masks import load_mask, save_mask, load_image, save_image, binarize
from .via import PolygonAnnotation, parse_via_csv, rasterize_polygon, rasterize_annotations
from .splits import SampleRecord, SplitManifest, build_split_manifest, load_manifest, save_manifest
from .phantom import generate_phantom_dataset

__all__ = [
    "load_mask", "save_mask", "load_image", "save_image", "binarize",
    "PolygonAnnotation", "parse_via_csv", "rasterize_polygon", "rasterize_annotations",
    "SampleRecord", "SplitManifest", "build_split_manifest", "load_manifest", "save_manifest",
    "generate_phantom_dataset",
]
