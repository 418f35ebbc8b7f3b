"""Interactive memory-based volumetric segmentation at desk scale."""

__version__ = "0.1.0"

CLASS_NAMES = ("background", "femoral", "tibial", "patellar", "meniscus")
