# COCO evaluation conventions
IOU_THRESHOLDS = (0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95)
RECALL_POINTS = 101
MAX_DETECTIONS = 100
SMALL_AREA = 32 ** 2
MEDIUM_AREA = 96 ** 2
AREA_RANGES = {
    'small': (0.0, float(SMALL_AREA)),
    'medium': (float(SMALL_AREA), float(MEDIUM_AREA)),
    'large': (float(MEDIUM_AREA), float('inf')),
}
UNDEFINED_AP = -1.0

# serialization
FRACTION_DIGITS = 6
JPEG_QUALITY = 95
ANNOTATIONS_FILE = 'annotations.json'
MANIFEST_FILE = 'manifest.json'
IMAGES_DIR = 'images'
RUN_FILE = 'run.json'

# attack defaults
DEFAULT_POISON_RATE = 0.05
DEFAULT_TRIGGER_SIZE = (0.10, 0.10)
PATTERN_BASE_SIZE = 8
BUILTIN_PATTERNS = ('white', 'black', 'checkerboard', 'noise')

# toy bench
SHAPES = ('square', 'circle', 'triangle')
POSITIVE_IOU = 0.5
NEGATIVE_IOU = 0.3
FINETUNE_FRACTION = 0.10

# CLI exit codes
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3
