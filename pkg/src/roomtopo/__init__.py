"""Point clouds to room instance masks, labelled rooms and a queryable room graph."""

from .errors import DimensionError, GeometryError, ParseError, RoomTopoError, SchemaError
from .geometry_io import EmbeddingTable, ObjectInstance, ObjectMap, PointCloud, parse_ply, read_cloud, write_ply
from .occupancy import GridSpec, MultiChannelGrid, fit_grid, rasterize, slice_occupancy
from .segmentation import InstanceMask, SegmentationResult, SegmenterParams, segment_heuristic
from .association import ObjectRoomAssignment, assign_objects, build_room_index
from .topomap import TopoMap, build, query, similarity_field

__version__ = "0.1.0"

__all__ = [
    "DimensionError", "EmbeddingTable", "GeometryError", "GridSpec", "InstanceMask", "MultiChannelGrid",
    "ObjectInstance", "ObjectMap", "ObjectRoomAssignment", "ParseError", "PointCloud", "RoomTopoError",
    "SchemaError", "SegmentationResult", "SegmenterParams", "TopoMap", "assign_objects", "build",
    "build_room_index", "fit_grid", "parse_ply", "query", "rasterize", "read_cloud", "segment_heuristic",
    "similarity_field", "slice_occupancy", "write_ply",
]
