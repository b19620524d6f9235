"""Bitmap glyph atlas used to render labels and to recognize them again"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Tuple

import cv2
import numpy as np

GLYPH_ROWS = 7
# blank columns between glyphs and width of a space, in font units
CHAR_SPACING = 1
SPACE_WIDTH = 3

_FONT: Dict[str, Tuple[str, ...]] = {
    'A': ('.###.', '#...#', '#...#', '#####', '#...#', '#...#', '#...#'),
    'B': ('####.', '#...#', '#...#', '####.', '#...#', '#...#', '####.'),
    'C': ('.###.', '#...#', '#....', '#....', '#....', '#...#', '.###.'),
    'D': ('###..', '#..#.', '#...#', '#...#', '#...#', '#..#.', '###..'),
    'E': ('#####', '#....', '#....', '####.', '#....', '#....', '#####'),
    'F': ('#####', '#....', '#....', '####.', '#....', '#....', '#....'),
    'G': ('.###.', '#...#', '#....', '#.###', '#...#', '#...#', '.####'),
    'H': ('#...#', '#...#', '#...#', '#####', '#...#', '#...#', '#...#'),
    'I': ('###', '.#.', '.#.', '.#.', '.#.', '.#.', '###'),
    'J': ('..###', '...#.', '...#.', '...#.', '...#.', '#..#.', '.##..'),
    'K': ('#...#', '#..#.', '#.#..', '##...', '#.#..', '#..#.', '#...#'),
    'L': ('#....', '#....', '#....', '#....', '#....', '#....', '#####'),
    'M': ('#...#', '##.##', '#.#.#', '#.#.#', '#...#', '#...#', '#...#'),
    'N': ('#...#', '#...#', '##..#', '#.#.#', '#..##', '#...#', '#...#'),
    'O': ('.###.', '#...#', '#...#', '#...#', '#...#', '#...#', '.###.'),
    'P': ('####.', '#...#', '#...#', '####.', '#....', '#....', '#....'),
    'Q': ('.###.', '#...#', '#...#', '#...#', '#.#.#', '#..#.', '.##.#'),
    'R': ('####.', '#...#', '#...#', '####.', '#.#..', '#..#.', '#...#'),
    'S': ('.####', '#....', '#....', '.###.', '....#', '....#', '####.'),
    'T': ('#####', '..#..', '..#..', '..#..', '..#..', '..#..', '..#..'),
    'U': ('#...#', '#...#', '#...#', '#...#', '#...#', '#...#', '.###.'),
    'V': ('#...#', '#...#', '#...#', '#...#', '#...#', '.#.#.', '..#..'),
    'W': ('#...#', '#...#', '#...#', '#.#.#', '#.#.#', '#.#.#', '.#.#.'),
    'X': ('#...#', '#...#', '.#.#.', '..#..', '.#.#.', '#...#', '#...#'),
    'Y': ('#...#', '#...#', '.#.#.', '..#..', '..#..', '..#..', '..#..'),
    'Z': ('#####', '....#', '...#.', '..#..', '.#...', '#....', '#####'),
    '0': ('.###.', '#...#', '#..##', '#.#.#', '##..#', '#...#', '.###.'),
    '1': ('.#.', '##.', '.#.', '.#.', '.#.', '.#.', '###'),
    '2': ('.###.', '#...#', '....#', '...#.', '..#..', '.#...', '#####'),
    '3': ('####.', '....#', '....#', '.###.', '....#', '....#', '####.'),
    '4': ('...#.', '..##.', '.#.#.', '#..#.', '#####', '...#.', '...#.'),
    '5': ('#####', '#....', '####.', '....#', '....#', '#...#', '.###.'),
    '6': ('..##.', '.#...', '#....', '####.', '#...#', '#...#', '.###.'),
    '7': ('#####', '....#', '...#.', '..#..', '.#...', '.#...', '.#...'),
    '8': ('.###.', '#...#', '#...#', '.###.', '#...#', '#...#', '.###.'),
    '9': ('.###.', '#...#', '#...#', '.####', '....#', '...#.', '.##..'),
    '-': ('...', '...', '...', '###', '...', '...', '...'),
    '/': ('....#', '....#', '...#.', '..#..', '.#...', '#....', '#....'),
    '"': ('##', '##', '##', '..', '..', '..', '..'),
}


def _bitmap(rows: Tuple[str, ...]) -> np.ndarray:
    return np.array([[c == '#' for c in row] for row in rows], dtype=bool)


@dataclass(frozen=True)
class GlyphAtlas:
    """
    Character bitmaps in font units (GLYPH_ROWS tall, variable width)

    On disk the atlas is a PNG sprite sheet (black ink on white) plus a JSON
    index mapping each character to its cell rectangle [x, y, w, h].
    """
    glyphs: Dict[str, np.ndarray]

    @classmethod
    def default(cls) -> 'GlyphAtlas':
        return cls({ch: _bitmap(rows) for ch, rows in _FONT.items()})

    @property
    def charset(self) -> str:
        return ''.join(sorted(self.glyphs))

    def text_size(self, text: str, scale: int) -> Tuple[int, int]:
        """(width, height) in pixels of `text` rendered at `scale`"""
        units = 0
        for i, ch in enumerate(text):
            units += SPACE_WIDTH if ch == ' ' else self.glyphs[ch].shape[1]
            if i < len(text) - 1:
                units += CHAR_SPACING
        return units * scale, GLYPH_ROWS * scale

    def render_text(self, text: str, scale: int = 2) -> np.ndarray:
        """Render a single-line label as a boolean ink mask"""
        if scale < 1:
            raise ValueError(f"scale must be >= 1, got {scale}")
        unknown = sorted(set(text) - set(self.glyphs) - {' '})
        if unknown:
            raise ValueError(f"Characters not in atlas: {unknown}")
        width, height = self.text_size(text, 1)
        canvas = np.zeros((height, max(width, 1)), dtype=bool)
        x = 0
        for ch in text:
            if ch == ' ':
                x += SPACE_WIDTH + CHAR_SPACING
                continue
            glyph = self.glyphs[ch]
            canvas[:, x:x + glyph.shape[1]] = glyph
            x += glyph.shape[1] + CHAR_SPACING
        return np.kron(canvas, np.ones((scale, scale), dtype=bool))

    def save(self, directory) -> Path:
        """Write glyphs.png and glyphs.json into `directory`"""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        chars = self.charset
        cell_w = max(g.shape[1] for g in self.glyphs.values()) + 1
        sheet = np.full((GLYPH_ROWS, cell_w * len(chars)), 255, dtype=np.uint8)
        index = {}
        for i, ch in enumerate(chars):
            glyph = self.glyphs[ch]
            x = i * cell_w
            sheet[:, x:x + glyph.shape[1]][glyph] = 0
            index[ch] = [x, 0, int(glyph.shape[1]), GLYPH_ROWS]
        cv2.imwrite(str(directory / 'glyphs.png'), sheet)
        with open(directory / 'glyphs.json', 'w', encoding='utf-8') as f:
            json.dump(index, f, indent=2, sort_keys=True)
        logging.getLogger(__name__).info(f"Saved {len(chars)}-glyph atlas to {directory}")
        return directory

    @classmethod
    def load(cls, directory) -> 'GlyphAtlas':
        directory = Path(directory)
        sprite = cv2.imread(str(directory / 'glyphs.png'), cv2.IMREAD_GRAYSCALE)
        if sprite is None:
            raise FileNotFoundError(f"Glyph sprite sheet not found in {directory}")
        with open(directory / 'glyphs.json', 'r', encoding='utf-8') as f:
            index = json.load(f)
        glyphs = {}
        for ch, (x, y, w, h) in index.items():
            glyphs[ch] = sprite[y:y + h, x:x + w] < 128
        return cls(glyphs)
