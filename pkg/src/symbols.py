"""
Vector definitions of the 32 symbol classes

Classes 1-25 are complex symbols: a shared diamond outline with a
rotation-invariant centre mark and an asymmetric set of ticks. No class is
a quarter-turn of another. Classes 26-32 are compositions of circles,
rectangles and chords and are told apart by their embedded text.
"""

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import cv2
import numpy as np

from src.glyphs import GlyphAtlas
from src.raster import GrayRaster

OTHERS = 0
COMPLEX_CLASSES = tuple(range(1, 26))
BASIC_CLASSES = tuple(range(26, 33))
ALL_CLASSES = COMPLEX_CLASSES + BASIC_CLASSES

CENTER_MARKS = ('dot', 'ring', 'plus', 'cross', 'square')
TICK_SETS: Tuple[Tuple[str, ...], ...] = (
    (),
    ('top',),
    ('top', 'bottom'),
    ('top', 'right'),
    ('top', 'right', 'bottom'),
)
_TICK_POSITIONS = {'top': (0.5, 0.27), 'right': (0.73, 0.5), 'bottom': (0.5, 0.73), 'left': (0.27, 0.5)}


@dataclass(frozen=True)
class SymbolDefinition:
    class_id: int
    name: str
    kind: str
    center_mark: Optional[str] = None
    ticks: Tuple[str, ...] = ()
    sample_text: str = ''


def _complex_definitions() -> Dict[int, SymbolDefinition]:
    defs = {}
    for class_id in COMPLEX_CLASSES:
        mark = CENTER_MARKS[(class_id - 1) // len(TICK_SETS)]
        ticks = TICK_SETS[(class_id - 1) % len(TICK_SETS)]
        name = f"valve-{mark}" + (f"-{'-'.join(ticks)}" if ticks else '')
        defs[class_id] = SymbolDefinition(class_id, name, 'complex', mark, ticks)
    return defs


SYMBOL_LIBRARY: Dict[int, SymbolDefinition] = {
    **_complex_definitions(),
    26: SymbolDefinition(26, 'indicator-bubble', 'basic', sample_text='PI-101'),
    27: SymbolDefinition(27, 'transmitter-bubble', 'basic', sample_text='TT-202'),
    28: SymbolDefinition(28, 'shared-display', 'basic'),
    29: SymbolDefinition(29, 'controller-box', 'basic', sample_text='FC-303'),
    30: SymbolDefinition(30, 'equipment-box', 'basic'),
    31: SymbolDefinition(31, 'seal-pot', 'basic'),
    32: SymbolDefinition(32, 'plain-bubble', 'basic'),
}


def stroke_width(size: int) -> int:
    return max(1, int(round(size / 40)))


def text_scale(size: int) -> int:
    return max(1, size // 40)


def _pt(size: int, fx: float, fy: float) -> Tuple[int, int]:
    return int(round(fx * (size - 1))), int(round(fy * (size - 1)))


def _draw_center_mark(canvas: np.ndarray, mark: str, size: int, t: int):
    c = _pt(size, 0.5, 0.5)
    if mark == 'dot':
        cv2.circle(canvas, c, max(2, int(round(0.08 * size))), 0, -1, cv2.LINE_8)
    elif mark == 'ring':
        cv2.circle(canvas, c, max(3, int(round(0.12 * size))), 0, t, cv2.LINE_8)
    elif mark == 'plus':
        arm = max(3, int(round(0.12 * size)))
        cv2.line(canvas, (c[0] - arm, c[1]), (c[0] + arm, c[1]), 0, t, cv2.LINE_8)
        cv2.line(canvas, (c[0], c[1] - arm), (c[0], c[1] + arm), 0, t, cv2.LINE_8)
    elif mark == 'cross':
        arm = max(3, int(round(0.1 * size)))
        cv2.line(canvas, (c[0] - arm, c[1] - arm), (c[0] + arm, c[1] + arm), 0, t, cv2.LINE_8)
        cv2.line(canvas, (c[0] - arm, c[1] + arm), (c[0] + arm, c[1] - arm), 0, t, cv2.LINE_8)
    elif mark == 'square':
        half = max(2, int(round(0.09 * size)))
        cv2.rectangle(canvas, (c[0] - half, c[1] - half), (c[0] + half, c[1] + half), 0, t, cv2.LINE_8)
    else:
        raise ValueError(f"Unknown centre mark: {mark}")


def diamond_outline(size: int) -> np.ndarray:
    """Corner points of the outline shared by every complex class"""
    return np.array([_pt(size, 0.0, 0.5), _pt(size, 0.5, 0.0),
                     _pt(size, 1.0, 0.5), _pt(size, 0.5, 1.0)], dtype=np.int32)


def _draw_complex(canvas: np.ndarray, definition: SymbolDefinition, size: int, t: int):
    cv2.polylines(canvas, [diamond_outline(size)], True, 0, t, cv2.LINE_8)
    _draw_center_mark(canvas, definition.center_mark, size, t)
    half = max(2, int(round(0.06 * size)))
    for tick in definition.ticks:
        cx, cy = _pt(size, *_TICK_POSITIONS[tick])
        cv2.rectangle(canvas, (cx - half, cy - half), (cx + half, cy + half), 0, -1, cv2.LINE_8)


def _paste_text(canvas: np.ndarray, text: str, center: Tuple[int, int], scale: int,
                atlas: GlyphAtlas):
    mask = atlas.render_text(text, scale)
    h, w = mask.shape
    x0 = int(center[0] - w // 2)
    y0 = int(center[1] - h // 2)
    region = canvas[y0:y0 + h, x0:x0 + w]
    region[mask[:region.shape[0], :region.shape[1]]] = 0


def basic_layout(class_id: int, size: int) -> Dict[str, object]:
    """
    Geometry of a basic symbol inside a size x size box

    Returns a dict with optional 'circle' (cx, cy, r), 'rect' (x0, y0, x1, y1)
    and 'chord' flags, shared by rendering and the generator's annotations.
    """
    r = int(round(0.47 * size))
    c = (size - 1) // 2
    if class_id in (26, 27, 32):
        return {'circle': (c, c, r)}
    if class_id == 28:
        return {'circle': (c, c, r), 'chord': True}
    if class_id in (29, 30):
        return {'rect': (0, int(round(0.2 * size)), size - 1, int(round(0.8 * size)))}
    if class_id == 31:
        small = int(round(0.32 * size))
        top = 2 * small
        return {'circle': (c, small, small),
                'rect': (int(round(0.05 * size)), top, int(round(0.95 * size)), size - 1)}
    raise ValueError(f"Not a basic symbol class: {class_id}")


def _draw_basic(canvas: np.ndarray, definition: SymbolDefinition, size: int, t: int,
                atlas: GlyphAtlas, text: Optional[str]):
    layout = basic_layout(definition.class_id, size)
    if 'circle' in layout:
        cx, cy, r = layout['circle']
        cv2.circle(canvas, (cx, cy), r - t // 2, 0, t, cv2.LINE_8)
        if layout.get('chord'):
            cv2.line(canvas, (cx - r + t, cy), (cx + r - t, cy), 0, t, cv2.LINE_8)
    if 'rect' in layout:
        x0, y0, x1, y1 = layout['rect']
        cv2.rectangle(canvas, (x0 + t // 2, y0 + t // 2), (x1 - t // 2, y1 - t // 2), 0, t, cv2.LINE_8)
    text = definition.sample_text if text is None else text
    if text:
        _paste_text(canvas, text, (size // 2, size // 2), text_scale(size), atlas)


def render_symbol(class_id: int, size: int, rotation: int = 0,
                  atlas: Optional[GlyphAtlas] = None, text: Optional[str] = None) -> GrayRaster:
    """
    Deterministic render of one symbol class (black ink on white)

    Args:
        class_id: 1..32
        size: Side of the square canvas in pixels
        rotation: 0, 90, 180 or 270 degrees counter-clockwise
        text: Embedded label for basic classes; defaults to the class sample text
    """
    if class_id not in SYMBOL_LIBRARY:
        raise ValueError(f"Invalid symbol class: {class_id}")
    if rotation not in (0, 90, 180, 270):
        raise ValueError(f"Rotation must be a multiple of 90 degrees, got {rotation}")
    if size < 16:
        raise ValueError(f"Symbol size must be >= 16, got {size}")
    definition = SYMBOL_LIBRARY[class_id]
    canvas = np.full((size, size), 255, dtype=np.uint8)
    t = stroke_width(size)
    if definition.kind == 'complex':
        _draw_complex(canvas, definition, size, t)
    else:
        _draw_basic(canvas, definition, size, t, atlas or GlyphAtlas.default(), text)
    return GrayRaster(np.rot90(canvas, rotation // 90))
