"""Joint visual attention analysis for dyadic egocentric recordings"""

__version__ = "0.1.0"

from .analytics import SessionReport, detect_jva, epoch_analysis
from .embedding import BuiltinBackend, ExternalBackend, ImportBackend, similarity_timeline
from .gaze import align_streams, parse_gaze_stream, project_gaze
from .module import JvaModule
from .oculomotor import coefficient_k, detect_events
from .schemas import DetectorParams, JvaSetup, ScenarioSpec
from .services import JvaService
from .storage import ArtifactStore, StoredArtifact

__all__ = [
    "JvaModule",
    "JvaService",
    "JvaSetup",
    "DetectorParams",
    "ScenarioSpec",
    "SessionReport",
    "ArtifactStore",
    "StoredArtifact",
    "BuiltinBackend",
    "ImportBackend",
    "ExternalBackend",
    "parse_gaze_stream",
    "project_gaze",
    "align_streams",
    "similarity_timeline",
    "detect_events",
    "coefficient_k",
    "detect_jva",
    "epoch_analysis",
]
