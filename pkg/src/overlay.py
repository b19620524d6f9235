"""Debug overlays of digitization output on the source sheet"""

import logging
from pathlib import Path
from typing import Optional, Sequence

import cv2
import numpy as np

from src.aggregate import DigitizationResult
from src.line_detect import HoughParams, LineDetectConfig, LineDetector, LineSegment, detect_lines_hough
from src.raster import GrayRaster, binarize
from src.symbol_detect import OTHERS
from src.text_extract import TextBox

# BGR
COLORS = {
    'solid': (0, 160, 0),
    'dashed': (0, 140, 255),
    'text': (255, 0, 0),
    'symbol': (0, 0, 255),
    'other': (128, 128, 128),
    'label': (160, 0, 160),
    'hough': (0, 0, 255),
}


def _point(p) -> tuple:
    return int(round(p.x)), int(round(p.y))


def draw_lines(image: np.ndarray, lines: Sequence[LineSegment], color=None, thickness: int = 2) -> np.ndarray:
    for line in lines:
        cv2.line(image, _point(line.p1), _point(line.p2),
                 color or COLORS[line.style.value], thickness, cv2.LINE_8)
    return image


class OverlayRenderer:
    """Draws pipelines, symbols, labels and text boxes in distinct colors"""

    def __init__(self, thickness: int = 2, font_scale: float = 0.6):
        self.thickness = thickness
        self.font_scale = font_scale
        self.logger = logging.getLogger(__name__)

    def render(self, sheet: GrayRaster, result: DigitizationResult,
               texts: Sequence[TextBox] = ()) -> np.ndarray:
        """
        Overlay a result on its sheet

        Returns:
            np.ndarray: BGR image, or an unmodified grayscale copy when there
            is nothing to draw
        """
        base = np.array(sheet.data)
        if not result.symbols and not result.pipelines and not texts:
            return base
        image = cv2.cvtColor(base, cv2.COLOR_GRAY2BGR)
        t = self.thickness
        for p in result.pipelines:
            cv2.line(image, _point(p.v1), _point(p.v2), COLORS.get(p.style, COLORS['solid']), t, cv2.LINE_8)
        for box in texts:
            b = box.bbox.as_int()
            cv2.rectangle(image, (int(b.x), int(b.y)), (int(b.x2) - 1, int(b.y2) - 1), COLORS['text'], 1)
        for s in result.symbols:
            b = s.bbox.as_int()
            color = COLORS['other'] if s.class_id == OTHERS else COLORS['symbol']
            cv2.rectangle(image, (int(b.x), int(b.y)), (int(b.x2) - 1, int(b.y2) - 1), color, t)
            caption = f"{s.class_id}:{s.label}" if s.label else str(s.class_id)
            cv2.putText(image, caption, (int(b.x), max(12, int(b.y) - 4)), cv2.FONT_HERSHEY_SIMPLEX,
                        self.font_scale, COLORS['label'], 1, cv2.LINE_8)
        return image

    def compare_hough(self, sheet: GrayRaster, config: LineDetectConfig = LineDetectConfig(),
                      params: Optional[HoughParams] = None) -> np.ndarray:
        """Side-by-side kernel-opening lines (left) and Hough baseline lines (right)"""
        ink = binarize(sheet)
        detection = LineDetector(config).detect(ink)
        params = params or HoughParams(line_length=2 * detection.kernel_length)
        hough = detect_lines_hough(ink, params)
        left = draw_lines(cv2.cvtColor(np.array(sheet.data), cv2.COLOR_GRAY2BGR), detection.all_lines,
                          thickness=self.thickness)
        right = draw_lines(cv2.cvtColor(np.array(sheet.data), cv2.COLOR_GRAY2BGR), hough,
                           COLORS['hough'], self.thickness)
        self.logger.info(f"Kernel method: {len(detection.all_lines)} lines, Hough: {len(hough)} lines")
        return np.hstack([left, right])

    def save(self, image: np.ndarray, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        ok, encoded = cv2.imencode('.png', image)
        if not ok:
            raise ValueError(f"PNG encoding failed for {path}")
        with open(path, 'wb') as f:
            f.write(encoded.tobytes())
        return path
