import math

IN_MEMORY_FILESIZE = 1024 * 1024

JVA_CONFIG_KEY = "JVA_CONFIG"

NS_PER_MS = 1_000_000
NS_PER_S = 1_000_000_000

NOMINAL_FRAME_RATE_HZ = 30
DEFAULT_ALIGNMENT_TOLERANCE_NS = NS_PER_S // NOMINAL_FRAME_RATE_HZ // 2

DEFAULT_ROI_WINDOW = 400
MIN_ROI_WINDOW = 16
DEFAULT_JVA_THRESHOLD = 0.7
DEFAULT_EPOCHS = 4

DEFAULT_VELOCITY_THRESHOLD_DEG = 30.0
DEFAULT_VELOCITY_THRESHOLD_PX = 50.0
DEFAULT_MIN_FIXATION_MS = 60.0
DEFAULT_MAX_GAP_MS = 75.0

# builtin descriptor
GRID_CELLS = 8
ORIENTATION_BINS = 8
BUILTIN_DIM = GRID_CELLS * GRID_CELLS * (3 + ORIENTATION_BINS)
BUILTIN_BACKEND_ID = "builtin-grid704"
LUMA_WEIGHTS = (0.299, 0.587, 0.114)
ORIENTATION_BIN_WIDTH = math.pi / ORIENTATION_BINS

# embedding table file
EMBEDDING_MAGIC = b"JVAE"
EMBEDDING_VERSION = 1

GAZE_CSV_COLUMNS = ("timestamp_ns", "participant", "dx", "dy", "dz", "px", "py")
MPS_GAZE_COLUMNS = ("tracking_timestamp_us", "yaw_rads_cpf", "pitch_rads_cpf")
EVENT_CSV_COLUMNS = (
    "kind",
    "start_ns",
    "end_ns",
    "duration_ms",
    "amplitude",
    "unit",
    "centroid_x",
    "centroid_y",
)
GROUND_TRUTH_COLUMNS = ("timestamp_ns", "shared_flag")
FRAME_EXTENSIONS = (".png", ".ppm")
FRAME_NAME_DIGITS = 16

SCENARIO_SCHEMA_VERSION = 1

REAL_FORMAT = "{:#.6g}"
