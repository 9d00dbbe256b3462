from pybadbox.trigger.image_io import ImageBuffer, read_image, write_image
from pybadbox.trigger.patterns import TriggerSpec, builtin_pattern, load_pattern, resolve_trigger
from pybadbox.trigger.blend import BlendResult, blend_region, rasterize, stamp_box, trigger_region

__all__ = [
    'ImageBuffer', 'read_image', 'write_image', 'TriggerSpec', 'builtin_pattern', 'load_pattern', 'resolve_trigger',
    'BlendResult', 'blend_region', 'rasterize', 'stamp_box', 'trigger_region',
]
