"""Coherence-stack change detection for structural-damage monitoring.

Subpackages by stage: catalog (acquisition planning), ingest (job-service
client), raster (GeoTIFF grids), reduce (stack statistics), detect
(pixel classification and persistence), aggregate (building roll-ups),
evaluate (agreement and stability scoring), synth (ground-truth scenes),
cli (staged pipeline commands).
"""

__version__ = "0.1.0"
