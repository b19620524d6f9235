"""Complex symbol localization and fine-grained classification"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Protocol, Sequence, Tuple

import cv2
import numpy as np

from src.geometry import BBox, iou
from src.raster import GrayRaster
from src.symbols import (
    COMPLEX_CLASSES, OTHERS, SYMBOL_LIBRARY, diamond_outline, render_symbol, stroke_width
)
from src.text_extract import split_patches

LOCALIZER_SCALES = (0.75, 1.0, 1.25)
PEAK_MIN = 0.5
TIE_MARGIN = 0.02
SHIFT_SEARCH = 3


@dataclass(frozen=True)
class SymbolInstance:
    class_id: int
    bbox: BBox
    score: float
    label: str = ''
    edge_ids: Tuple[int, ...] = ()
    ambiguous: bool = False

    def to_dict(self) -> dict:
        return {
            'class_id': self.class_id, 'x': self.bbox.x, 'y': self.bbox.y,
            'w': self.bbox.w, 'h': self.bbox.h, 'score': round(self.score, 4),
            'label': self.label, 'edge_ids': ';'.join(str(e) for e in self.edge_ids),
            'ambiguous': self.ambiguous,
        }


class SymbolLocalizer(Protocol):
    """Proposes class-agnostic symbol boxes inside one patch"""
    thread_safe: bool

    def propose(self, patch: GrayRaster) -> List[Tuple[BBox, float]]:
        ...


class FineGrainedClassifier(Protocol):
    thread_safe: bool

    def classify(self, crop: GrayRaster) -> Tuple[int, float]:
        ...


@dataclass(frozen=True)
class SymbolDetectConfig:
    patch_size: int = 400
    overlap: float = 0.5
    localizer_min: float = 0.8
    classifier_min: float = 0.9
    nms_iou: float = 0.5
    template_size: int = 80
    threads: int = 1

    def __post_init__(self):
        for name in ('localizer_min', 'classifier_min', 'nms_iou'):
            value = getattr(self, name)
            if not 0 < value < 1:
                raise ValueError(f"{name} must be in (0, 1), got {value}")
        if self.template_size < 16:
            raise ValueError(f"template_size must be >= 16, got {self.template_size}")
        if self.patch_size < int(np.ceil(self.template_size * max(LOCALIZER_SCALES))):
            raise ValueError("patch_size must fit the largest template scale")


def _ink(image: np.ndarray) -> np.ndarray:
    """Ink map in [0, 1] as float32 (dark pixels high)"""
    return (255.0 - image.astype(np.float32)) / 255.0


@dataclass
class TemplateBank:
    """
    One ink mask per complex class at a canonical size

    `silhouette` is the outline shared by all complex classes and drives
    the coarse localization pass.
    """
    size: int
    templates: Dict[int, np.ndarray]
    silhouette: np.ndarray
    names: Dict[int, str] = field(default_factory=dict)

    @classmethod
    def from_library(cls, size: int = 80) -> 'TemplateBank':
        templates = {c: _ink(render_symbol(c, size).data) for c in COMPLEX_CLASSES}
        canvas = np.full((size, size), 255, dtype=np.uint8)
        cv2.polylines(canvas, [diamond_outline(size)], True, 0, stroke_width(size), cv2.LINE_8)
        names = {c: SYMBOL_LIBRARY[c].name for c in COMPLEX_CLASSES}
        return cls(size, templates, _ink(canvas), names)

    def save(self, directory) -> Path:
        """Write one PNG mask per class plus manifest.json"""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        manifest = []
        for class_id, mask in sorted(self.templates.items()):
            name = f"class_{class_id:02d}.png"
            cv2.imwrite(str(directory / name), np.round(255 - mask * 255).astype(np.uint8))
            manifest.append({'class_id': class_id, 'size': self.size,
                             'name': self.names.get(class_id, ''), 'file': name})
        cv2.imwrite(str(directory / 'silhouette.png'),
                    np.round(255 - self.silhouette * 255).astype(np.uint8))
        with open(directory / 'manifest.json', 'w', encoding='utf-8') as f:
            json.dump({'size': self.size, 'classes': manifest}, f, indent=2)
        logging.getLogger(__name__).info(f"Saved {len(manifest)} templates to {directory}")
        return directory

    @classmethod
    def load(cls, directory) -> 'TemplateBank':
        directory = Path(directory)
        manifest_path = directory / 'manifest.json'
        if not manifest_path.exists():
            raise FileNotFoundError(f"Template manifest not found: {manifest_path}")
        with open(manifest_path, 'r', encoding='utf-8') as f:
            manifest = json.load(f)
        templates, names = {}, {}
        for entry in manifest['classes']:
            image = cv2.imread(str(directory / entry['file']), cv2.IMREAD_GRAYSCALE)
            if image is None:
                raise FileNotFoundError(f"Template image missing: {entry['file']}")
            templates[int(entry['class_id'])] = _ink(image)
            names[int(entry['class_id'])] = entry.get('name', '')
        silhouette = cv2.imread(str(directory / 'silhouette.png'), cv2.IMREAD_GRAYSCALE)
        if silhouette is None:
            raise FileNotFoundError(f"Silhouette image missing in {directory}")
        return cls(int(manifest['size']), templates, _ink(silhouette), names)

    def scaled(self, mask: np.ndarray, scale: float) -> np.ndarray:
        side = max(8, int(round(self.size * scale)))
        if side == mask.shape[0]:
            return mask
        return cv2.resize(mask, (side, side), interpolation=cv2.INTER_AREA)


def _peaks(response: np.ndarray, window: int, minimum: float) -> List[Tuple[int, int, float]]:
    """Local maxima of a correlation map above `minimum`, as (x, y, value)"""
    kernel = np.ones((max(1, window), max(1, window)), np.uint8)
    local_max = cv2.dilate(response, kernel)
    ys, xs = np.nonzero((response >= local_max) & (response >= minimum))
    return [(int(x), int(y), float(response[y, x])) for y, x in zip(ys, xs)]


def _best_match(region: np.ndarray, template: np.ndarray) -> float:
    if region.shape[0] < template.shape[0] or region.shape[1] < template.shape[1]:
        return 0.0
    if float(region.std()) == 0.0:
        return 0.0
    response = cv2.matchTemplate(region, template, cv2.TM_CCOEFF_NORMED)
    return float(np.clip(response.max(), 0.0, 1.0))


def template_localize(patch: GrayRaster, templates: TemplateBank) -> List[Tuple[BBox, float]]:
    """
    Propose complex-symbol boxes inside a patch

    A coarse map correlates the shared outline at each scale; at each coarse
    peak the score is the best per-class correlation within a few pixels.
    """
    ink = _ink(np.asarray(patch.data))
    if float(ink.std()) == 0.0:
        return []
    proposals = []
    for scale in LOCALIZER_SCALES:
        outline = templates.scaled(templates.silhouette, scale)
        side = outline.shape[0]
        if side > ink.shape[0] or side > ink.shape[1]:
            continue
        coarse = cv2.matchTemplate(ink, outline, cv2.TM_CCOEFF_NORMED)
        peaks = _peaks(coarse, side // 2, PEAK_MIN * 0.6)
        if not peaks:
            continue
        masks = [templates.scaled(np.ascontiguousarray(np.rot90(mask, k)), scale)
                 for mask in templates.templates.values() for k in range(4)]
        for x, y, _ in peaks:
            x0, y0 = max(0, x - SHIFT_SEARCH), max(0, y - SHIFT_SEARCH)
            region = ink[y0:y + side + SHIFT_SEARCH, x0:x + side + SHIFT_SEARCH]
            score = max(_best_match(region, mask) for mask in masks)
            if score > PEAK_MIN:
                proposals.append((BBox(x, y, side, side), score))
    kept = non_max_suppression([SymbolInstance(OTHERS, box, score) for box, score in proposals], 0.5)
    return [(inst.bbox, inst.score) for inst in kept]


def _canonical_crop(crop: GrayRaster, size: int) -> np.ndarray:
    """Resize the crop's longer side to `size` and centre it on a white square"""
    data = np.asarray(crop.data)
    h, w = data.shape
    factor = size / max(h, w)
    nh, nw = max(1, int(round(h * factor))), max(1, int(round(w * factor)))
    interpolation = cv2.INTER_AREA if factor < 1 else cv2.INTER_LINEAR
    resized = cv2.resize(data, (nw, nh), interpolation=interpolation)
    canvas = np.full((size, size), 255, dtype=np.uint8)
    oy, ox = (size - nh) // 2, (size - nw) // 2
    canvas[oy:oy + nh, ox:ox + nw] = resized
    return canvas


def template_classify(crop: GrayRaster, templates: TemplateBank) -> Tuple[int, float]:
    """
    Best class by normalized cross-correlation over quarter-turn rotations

    When the runner-up is within TIE_MARGIN the two are re-scored on the
    central quarter of the symbol, where the complex classes differ.
    """
    if int(np.asarray(crop.data).min()) == int(np.asarray(crop.data).max()):
        return OTHERS, 0.0
    size = templates.size
    ink = _ink(_canonical_crop(crop, size))
    padded = cv2.copyMakeBorder(ink, SHIFT_SEARCH, SHIFT_SEARCH, SHIFT_SEARCH, SHIFT_SEARCH,
                                cv2.BORDER_CONSTANT, value=0.0)

    scores = []
    for class_id, mask in sorted(templates.templates.items()):
        best, best_rot = 0.0, 0
        for k in range(4):
            score = _best_match(padded, np.ascontiguousarray(np.rot90(mask, k)))
            if score > best:
                best, best_rot = score, k
        scores.append((best, class_id, best_rot))
    scores.sort(key=lambda s: (-s[0], s[1]))
    best_score, best_class, _ = scores[0]
    if best_score <= 0.0:
        return OTHERS, 0.0

    if len(scores) > 1 and best_score - scores[1][0] <= TIE_MARGIN:
        lo, hi = size // 4, size - size // 4
        centre = np.ascontiguousarray(padded[lo:hi + 2 * SHIFT_SEARCH, lo:hi + 2 * SHIFT_SEARCH])
        refined = []
        for score, class_id, rot in scores[:2]:
            mask = np.rot90(templates.templates[class_id], rot)
            refined.append((_best_match(centre, np.ascontiguousarray(mask[lo:hi, lo:hi])), class_id))
        refined.sort(key=lambda s: (-s[0], s[1]))
        best_class = refined[0][1]
    return best_class, best_score


class TemplateLocalizer:
    thread_safe = True

    def __init__(self, bank: TemplateBank):
        self.bank = bank

    def propose(self, patch: GrayRaster) -> List[Tuple[BBox, float]]:
        return template_localize(patch, self.bank)


class TemplateClassifier:
    thread_safe = True

    def __init__(self, bank: TemplateBank):
        self.bank = bank

    def classify(self, crop: GrayRaster) -> Tuple[int, float]:
        return template_classify(crop, self.bank)


def non_max_suppression(instances: Sequence[SymbolInstance], iou_max: float = 0.5) -> List[SymbolInstance]:
    """Greedy NMS: keep the highest score, drop anything with IOU >= iou_max to a kept box"""
    ordered = sorted(instances, key=lambda s: (-s.score, s.bbox.y, s.bbox.x, s.class_id))
    kept: List[SymbolInstance] = []
    for inst in ordered:
        if all(iou(inst.bbox, k.bbox) < iou_max for k in kept):
            kept.append(inst)
    return kept


class SymbolDetector:
    """Localize-then-classify pipeline for complex symbols"""

    def __init__(self, localizer: Optional[SymbolLocalizer] = None,
                 classifier: Optional[FineGrainedClassifier] = None,
                 config: SymbolDetectConfig = SymbolDetectConfig(),
                 bank: Optional[TemplateBank] = None):
        self.config = config
        if localizer is None or classifier is None:
            bank = bank or TemplateBank.from_library(config.template_size)
        self.localizer = localizer or TemplateLocalizer(bank)
        self.classifier = classifier or TemplateClassifier(bank)
        self.logger = logging.getLogger(__name__)

    def _map(self, func, items, thread_safe: bool) -> list:
        if thread_safe and self.config.threads > 1:
            with ThreadPoolExecutor(max_workers=self.config.threads) as pool:
                return list(pool.map(func, items))
        return [func(item) for item in items]

    def detect_complex_symbols(self, sheet: GrayRaster,
                               warnings: Optional[List[str]] = None) -> List[SymbolInstance]:
        """
        Localize, deduplicate and classify complex symbols on a sheet

        Args:
            sheet: Resized grayscale sheet
            warnings: Optional list collecting per-patch failures

        Returns:
            List[SymbolInstance]: instances in sheet coordinates; crops scoring
            below classifier_min are kept with class OTHERS
        """
        cfg = self.config
        warnings = warnings if warnings is not None else []
        patches = split_patches(sheet, cfg.patch_size, cfg.overlap)

        def run(item):
            patch, offset = item
            if int(np.asarray(patch.data).min()) == int(np.asarray(patch.data).max()):
                return offset, []
            try:
                return offset, self.localizer.propose(patch)
            except Exception as e:
                return offset, e

        proposals = []
        for offset, found in self._map(run, patches, getattr(self.localizer, 'thread_safe', False)):
            if isinstance(found, Exception):
                message = f"Symbol localizer failed on patch at {offset}: {found}"
                self.logger.warning(message)
                warnings.append(message)
                continue
            for box, score in found:
                if score >= cfg.localizer_min:
                    proposals.append(SymbolInstance(OTHERS, box.translate(*offset), float(score)))
        survivors = non_max_suppression(proposals, cfg.nms_iou)

        def classify(inst: SymbolInstance):
            try:
                box = inst.bbox.clamp(sheet.width, sheet.height)
                return inst, self.classifier.classify(sheet.crop(*box))
            except Exception as e:
                return inst, e

        instances = []
        for inst, outcome in self._map(classify, survivors, getattr(self.classifier, 'thread_safe', False)):
            if isinstance(outcome, Exception):
                message = f"Symbol classifier failed on box {tuple(inst.bbox)}: {outcome}"
                self.logger.warning(message)
                warnings.append(message)
                continue
            class_id, score = outcome
            if score < cfg.classifier_min:
                class_id = OTHERS
            instances.append(replace(inst, class_id=int(class_id), score=float(score)))

        instances.sort(key=lambda s: (s.bbox.y, s.bbox.x))
        self.logger.info(f"Detected {len(instances)} complex symbols from {len(proposals)} proposals "
                         f"({sum(s.class_id == OTHERS for s in instances)} unclassified)")
        return instances


def detect_complex_symbols(sheet: GrayRaster, loc: SymbolLocalizer, cls: FineGrainedClassifier,
                           cfg: SymbolDetectConfig = SymbolDetectConfig()) -> List[SymbolInstance]:
    return SymbolDetector(loc, cls, cfg).detect_complex_symbols(sheet)
