"""Visual-query 3D localization: registration of relative reconstructions,
pose fusion, object prediction and evaluation."""

__version__ = "0.1.0"
