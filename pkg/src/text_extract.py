"""Patch-wise text detection, IOU merging, vertical pass and glyph recognition"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, List, Optional, Protocol, Sequence, Tuple

import cv2
import numpy as np

from src.geometry import BBox, containment, iou, union_box
from src.glyphs import CHAR_SPACING, GLYPH_ROWS, SPACE_WIDTH, GlyphAtlas
from src.raster import (
    OTSU, GrayRaster, LineKernel, Orientation, binarize,
    open_lines, rotate90
)


@dataclass(frozen=True)
class TextBox:
    bbox: BBox
    text: str = ''
    orientation: Orientation = Orientation.HORIZONTAL
    confidence: float = 0.0

    def to_dict(self) -> dict:
        return {
            'text': self.text, 'x': self.bbox.x, 'y': self.bbox.y,
            'w': self.bbox.w, 'h': self.bbox.h,
            'orientation': self.orientation.value, 'confidence': round(self.confidence, 4),
        }


class TextDetector(Protocol):
    """Proposes text regions inside one patch; boxes are patch-relative"""
    thread_safe: bool

    def detect(self, patch: GrayRaster) -> List[Tuple[BBox, float]]:
        ...


class TextRecognizer(Protocol):
    """Reads one single-line text crop"""
    thread_safe: bool

    def recognize(self, crop: GrayRaster) -> Tuple[str, float]:
        ...


@dataclass(frozen=True)
class TextConfig:
    patch_size: int = 800
    overlap: float = 0.5
    iou_min: float = 0.3
    subsume_iou: float = 0.5
    containment_min: float = 0.8
    min_confidence: float = 0.6
    vertical_pass: bool = True
    min_char_height: int = 8
    max_char_height: int = 40
    join_width: int = 12
    ink_threshold: int = 128
    threads: int = 1

    def __post_init__(self):
        if self.patch_size < 1:
            raise ValueError(f"patch_size must be >= 1, got {self.patch_size}")
        if not 0 <= self.overlap < 1:
            raise ValueError(f"overlap must be in [0, 1), got {self.overlap}")
        if not 0 < self.iou_min <= 1:
            raise ValueError(f"iou_min must be in (0, 1], got {self.iou_min}")
        if not 0 < self.min_char_height <= self.max_char_height:
            raise ValueError("char height bounds must satisfy 0 < min <= max")


def _patch_origins(length: int, size: int, stride: int) -> List[int]:
    if length <= size:
        return [0]
    return list(range(0, length - size, stride)) + [length - size]


def split_patches(sheet: GrayRaster, size: int,
                  overlap: float) -> List[Tuple[GrayRaster, Tuple[int, int]]]:
    """
    Tile the sheet with square patches

    Stride is size * (1 - overlap); the last row and column are clamped to
    the border so every pixel is covered.

    Returns:
        (patch, (offset_x, offset_y)) pairs in row-major order
    """
    if size < 1:
        raise ValueError(f"Patch size must be >= 1, got {size}")
    if not 0 <= overlap < 1:
        raise ValueError(f"Overlap must be in [0, 1), got {overlap}")
    stride = max(1, int(round(size * (1 - overlap))))
    patches = []
    for oy in _patch_origins(sheet.height, size, stride):
        for ox in _patch_origins(sheet.width, size, stride):
            patches.append((sheet.crop(ox, oy, size, size), (ox, oy)))
    return patches


def merge_boxes_iou(boxes: Sequence[TextBox], iou_min: float) -> List[TextBox]:
    """
    Transitively merge boxes overlapping with IOU >= iou_min into their union

    Repeats until no pair qualifies; the merged box keeps the text and
    orientation of its most confident member and the max confidence.
    """
    current = list(boxes)
    while True:
        n = len(current)
        parent = list(range(n))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        merged_any = False
        for i in range(n):
            for j in range(i + 1, n):
                if iou(current[i].bbox, current[j].bbox) >= iou_min:
                    ri, rj = find(i), find(j)
                    if ri != rj:
                        parent[max(ri, rj)] = min(ri, rj)
                        merged_any = True

        groups = {}
        for i in range(n):
            groups.setdefault(find(i), []).append(current[i])
        result = []
        for members in groups.values():
            if len(members) == 1:
                result.append(members[0])
                continue
            best = max(members, key=lambda b: (b.confidence, len(b.text)))
            result.append(TextBox(union_box(b.bbox for b in members), best.text,
                                  best.orientation, max(b.confidence for b in members)))
        current = sorted(set(result), key=lambda b: (b.bbox.y, b.bbox.x, b.bbox.w, b.bbox.h, b.text))
        if not merged_any:
            return current


def rotate_box_forward(box: BBox, sheet_height: int) -> BBox:
    """Map a sheet box into the sheet rotated a quarter turn clockwise"""
    return BBox(sheet_height - box.y - box.h, box.x, box.h, box.w)


def rotate_box_back(box: BBox, sheet_height: int) -> BBox:
    """Inverse of rotate_box_forward; `sheet_height` is the unrotated sheet's height"""
    return BBox(box.y, sheet_height - box.x - box.w, box.h, box.w)


def _remove_specks(ink: np.ndarray, max_area: int) -> np.ndarray:
    count, labels, stats, _ = cv2.connectedComponentsWithStats(ink.astype(np.uint8), connectivity=8)
    if count <= 1:
        return ink
    keep = stats[:, cv2.CC_STAT_AREA] > max_area
    keep[0] = False
    return keep[labels]


def _ncc(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    denom = np.sqrt((a * a).sum() * (b * b).sum())
    if denom == 0:
        return 0.0
    return float((a * b).sum() / denom)


def glyph_template_recognize(crop: GrayRaster, font: GlyphAtlas) -> Tuple[str, float]:
    """
    Read a single-line crop rendered in the atlas font

    Glyph cells are split at empty ink columns; each cell is compared to
    every atlas glyph of compatible width by normalized cross-correlation
    at font resolution. Confidence is the mean per-glyph correlation.
    """
    ink = binarize(crop, OTSU).bits
    ink = _remove_specks(ink, max_area=2)
    if not ink.any() or ink.mean() > 0.9:
        return '', 0.0

    rows = np.nonzero(ink.any(axis=1))[0]
    top, bottom = int(rows[0]), int(rows[-1])
    scale = max(1, int(round((bottom - top + 1) / GLYPH_ROWS)))
    band = ink[top:top + GLYPH_ROWS * scale].astype(np.float32)

    columns = band.any(axis=0)
    cells = []
    start = None
    for x, filled in enumerate(columns):
        if filled and start is None:
            start = x
        elif not filled and start is not None:
            cells.append((start, x))
            start = None
    if start is not None:
        cells.append((start, len(columns)))

    chars = []
    scores = []
    prev_end = None
    for x0, x1 in cells:
        if prev_end is not None and x0 - prev_end >= (CHAR_SPACING + SPACE_WIDTH / 2.0) * scale:
            chars.append(' ')
        prev_end = x1
        cell = band[:, x0:x1]
        width_units = (x1 - x0) / scale
        candidates = [(ch, g) for ch, g in font.glyphs.items()
                      if abs(g.shape[1] - width_units) <= 1.0]
        if not candidates:
            candidates = list(font.glyphs.items())
        best_ch, best_score = '', -1.0
        for ch, glyph in sorted(candidates):
            resized = cv2.resize(cell, (glyph.shape[1], GLYPH_ROWS), interpolation=cv2.INTER_AREA)
            score = _ncc(resized, glyph.astype(np.float32))
            if score > best_score:
                best_ch, best_score = ch, score
        chars.append(best_ch)
        scores.append(max(0.0, best_score))

    if not scores:
        return '', 0.0
    return ''.join(chars).strip(), float(np.mean(scores))


class GlyphTemplateRecognizer:
    """Default recognizer for sheets labelled in the atlas font"""
    thread_safe = True

    def __init__(self, atlas: Optional[GlyphAtlas] = None):
        self.atlas = atlas or GlyphAtlas.default()

    def recognize(self, crop: GrayRaster) -> Tuple[str, float]:
        return glyph_template_recognize(crop, self.atlas)


class InkDensityTextDetector:
    """
    Proposes text boxes from ink clusters

    Long straight strokes are removed, remaining ink is joined horizontally,
    and components whose height fits a text band and whose width exceeds
    their height are reported.
    """
    thread_safe = True

    def __init__(self, config: TextConfig = TextConfig()):
        self.config = config

    def detect(self, patch: GrayRaster) -> List[Tuple[BBox, float]]:
        cfg = self.config
        ink = binarize(patch, cfg.ink_threshold)
        if not ink.bits.any():
            return []
        line_len = int(1.5 * cfg.max_char_height)
        lines = (open_lines(ink, LineKernel(Orientation.HORIZONTAL, line_len)).bits
                 | open_lines(ink, LineKernel(Orientation.VERTICAL, line_len)).bits)
        text_ink = ink.bits & ~lines
        joined = cv2.dilate(text_ink.astype(np.uint8), np.ones((1, cfg.join_width), np.uint8))
        count, labels, stats, _ = cv2.connectedComponentsWithStats(joined, connectivity=8)

        boxes = []
        for i in range(1, count):
            x, y, w, h = (int(v) for v in stats[i, :4])
            own = (labels[y:y + h, x:x + w] == i) & text_ink[y:y + h, x:x + w]
            cols = np.nonzero(own.any(axis=0))[0]
            rows = np.nonzero(own.any(axis=1))[0]
            if len(cols) == 0:
                continue
            tight = BBox(x + int(cols[0]), y + int(rows[0]),
                         int(cols[-1] - cols[0] + 1), int(rows[-1] - rows[0] + 1))
            if not cfg.min_char_height <= tight.h <= cfg.max_char_height:
                continue
            if tight.w < 1.2 * tight.h:
                continue
            boxes.append((tight, 1.0))
        return boxes


def _touches_inner_border(box: BBox, patch: GrayRaster, offset: Tuple[int, int],
                          sheet: GrayRaster) -> bool:
    ox, oy = offset
    if box.x <= 0 and ox > 0:
        return True
    if box.y <= 0 and oy > 0:
        return True
    if box.x2 >= patch.width and ox + patch.width < sheet.width:
        return True
    if box.y2 >= patch.height and oy + patch.height < sheet.height:
        return True
    return False


class TextExtractor:
    """Runs horizontal and vertical text passes over a sheet"""

    def __init__(self, detector: Optional[TextDetector] = None,
                 recognizer: Optional[TextRecognizer] = None,
                 config: TextConfig = TextConfig()):
        self.config = config
        self.detector = detector or InkDensityTextDetector(config)
        self.recognizer = recognizer or GlyphTemplateRecognizer()
        self.logger = logging.getLogger(__name__)

    def _map(self, func: Callable, items: Iterable, thread_safe: bool) -> list:
        if thread_safe and self.config.threads > 1:
            with ThreadPoolExecutor(max_workers=self.config.threads) as pool:
                return list(pool.map(func, items))
        return [func(item) for item in items]

    def _single_pass(self, sheet: GrayRaster, orientation: Orientation,
                     warnings: List[str]) -> List[TextBox]:
        cfg = self.config
        patches = split_patches(sheet, cfg.patch_size, cfg.overlap)

        def run(item):
            patch, offset = item
            try:
                return offset, self.detector.detect(patch), patch
            except Exception as e:
                return offset, e, patch

        proposals = []
        for offset, found, patch in self._map(run, patches, getattr(self.detector, 'thread_safe', False)):
            if isinstance(found, Exception):
                message = f"Text detector failed on patch at {offset}: {found}"
                self.logger.warning(message)
                warnings.append(message)
                continue
            for box, score in found:
                if _touches_inner_border(box, patch, offset, sheet):
                    continue
                proposals.append(TextBox(box.translate(*offset), '', orientation, float(score)))

        merged = merge_boxes_iou(proposals, cfg.iou_min)

        def read(box: TextBox):
            try:
                crop = sheet.crop(*box.bbox.expand(2).clamp(sheet.width, sheet.height))
                return box, self.recognizer.recognize(crop)
            except Exception as e:
                return box, e

        recognized = []
        for box, outcome in self._map(read, merged, getattr(self.recognizer, 'thread_safe', False)):
            if isinstance(outcome, Exception):
                message = f"Text recognizer failed on box {tuple(box.bbox)}: {outcome}"
                self.logger.warning(message)
                warnings.append(message)
                continue
            text, confidence = outcome
            if text and confidence >= cfg.min_confidence:
                recognized.append(TextBox(box.bbox, text, orientation, float(confidence)))
        self.logger.debug(f"{orientation.value} pass: {len(proposals)} proposals, "
                          f"{len(merged)} merged, {len(recognized)} recognized")
        return recognized

    def extract_text(self, sheet: GrayRaster,
                     warnings: Optional[List[str]] = None) -> List[TextBox]:
        """
        Detect and read all text on a sheet

        Args:
            sheet: Resized grayscale sheet
            warnings: Optional list collecting per-patch failures

        Returns:
            List[TextBox]: boxes in sheet coordinates sorted top-to-bottom
        """
        warnings = warnings if warnings is not None else []
        horizontal = self._single_pass(sheet, Orientation.HORIZONTAL, warnings)
        if not self.config.vertical_pass:
            return sorted(horizontal, key=lambda b: (b.bbox.y, b.bbox.x))

        rotated = rotate90(sheet, -1)
        vertical = [TextBox(rotate_box_back(b.bbox, sheet.height), b.text,
                            Orientation.VERTICAL, b.confidence)
                    for b in self._single_pass(rotated, Orientation.VERTICAL, warnings)]
        boxes = self._resolve(horizontal, vertical)
        self.logger.info(f"Extracted {len(boxes)} text boxes "
                         f"({sum(b.orientation == Orientation.VERTICAL for b in boxes)} vertical)")
        return boxes

    def _resolve(self, horizontal: List[TextBox], vertical: List[TextBox]) -> List[TextBox]:
        cfg = self.config
        kept_vertical = []
        for v in vertical:
            if any(iou(h.bbox, v.bbox) >= cfg.subsume_iou for h in horizontal):
                continue
            if any(containment(v.bbox, h.bbox) >= cfg.containment_min and h.bbox.area >= v.bbox.area
                   for h in horizontal):
                continue
            kept_vertical.append(v)
        kept_horizontal = [h for h in horizontal
                           if not any(containment(h.bbox, v.bbox) >= cfg.containment_min
                                      and v.bbox.area > h.bbox.area for v in kept_vertical)]
        return sorted(kept_horizontal + kept_vertical, key=lambda b: (b.bbox.y, b.bbox.x))


def extract_text(sheet: GrayRaster, det: TextDetector, rec: TextRecognizer,
                 cfg: TextConfig = TextConfig()) -> List[TextBox]:
    return TextExtractor(det, rec, cfg).extract_text(sheet)
