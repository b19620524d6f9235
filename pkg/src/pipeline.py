"""Per-sheet digitization and the batch worker pool"""

import hashlib
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from src.aggregate import Aggregator, DigitizationResult
from src.config_manager import PipelineConfig
from src.evaluate import DETECTIONS_SUFFIX
from src.geometry import containment
from src.graph_build import GraphBuilder, PidGraph
from src.line_detect import LineDetector, LineSegment
from src.raster import GrayRaster, binarize, load_gray_file, resize_to_width
from src.shape_detect import ShapeDetector
from src.symbol_detect import OTHERS, SymbolDetector, SymbolInstance
from src.text_extract import TextBox, TextExtractor

# texts mostly inside a complex symbol are marks of the symbol, not labels
SYMBOL_TEXT_CONTAINMENT = 0.8


@dataclass
class SheetOutput:
    """Everything one digitization run produces for a sheet"""
    result: DigitizationResult
    report: List[dict]
    graph: PidGraph
    lines: List[LineSegment] = field(default_factory=list)
    texts: List[TextBox] = field(default_factory=list)
    symbols: List[SymbolInstance] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    def detections_json(self) -> str:
        data = {'lines': [s.to_dict() for s in self.lines], 'texts': [t.to_dict() for t in self.texts]}
        return json.dumps(data, indent=2, sort_keys=True)


class SheetDigitizer:
    """Runs the full pipeline on one grayscale sheet"""

    def __init__(self, config: PipelineConfig = PipelineConfig(),
                 text_extractor: Optional[TextExtractor] = None,
                 symbol_detector: Optional[SymbolDetector] = None):
        self.config = config
        self.text_extractor = text_extractor or TextExtractor(config=config.text)
        self.symbol_detector = symbol_detector or SymbolDetector(config=config.symbol_detect)
        self.line_detector = LineDetector(config.line_detect)
        self.shape_detector = ShapeDetector(config.shape)
        self.graph_builder = GraphBuilder(config.graph)
        self.aggregator = Aggregator(config.aggregate)
        self.logger = logging.getLogger(__name__)

    def digitize(self, gray: GrayRaster) -> SheetOutput:
        """
        Digitize one sheet

        Order: resize, binarize, text, complex symbols, lines (dash candidates
        exclude text and symbol boxes), shapes and basic symbols, graph,
        aggregation and reconciliation. Coordinates are in the resized frame.
        """
        cfg = self.config
        warnings: List[str] = []
        sheet = resize_to_width(gray, cfg.raster.resize_width)
        ink = binarize(sheet, cfg.raster.threshold)

        texts = self.text_extractor.extract_text(sheet, warnings)
        complex_symbols = self.symbol_detector.detect_complex_symbols(sheet, warnings)
        texts = [t for t in texts
                 if not any(containment(t.bbox, s.bbox) >= SYMBOL_TEXT_CONTAINMENT for s in complex_symbols)]

        exclude = [t.bbox for t in texts] + [s.bbox for s in complex_symbols]
        detection = self.line_detector.detect(ink, exclude)
        lines = detection.all_lines

        basic_symbols, _, _ = self.shape_detector.detect(ink, detection.horizontal, detection.vertical,
                                                         lines, texts)
        symbols = sorted(complex_symbols + basic_symbols, key=lambda s: (s.bbox.y, s.bbox.x, s.class_id))
        graph = self.graph_builder.build(lines, texts, symbols, detection.kernel_length)

        patterns = [re.compile(p) for p in cfg.graph.label_regexes]
        symbol_texts = [t for t in texts if not any(p.match(t.text) for p in patterns)]
        result, report = self.aggregator.aggregate(symbols, symbol_texts, graph, (sheet.width, sheet.height))

        others = sum(s.class_id == OTHERS for s in symbols)
        self.logger.info(f"Digitized sheet {sheet.width}x{sheet.height}: {len(result.symbols)} symbols "
                         f"({others} unclassified), {len(result.pipelines)} pipelines, {len(texts)} texts")
        return SheetOutput(result, report, graph, lines, texts, symbols, warnings)


class BatchProcessor:
    """Digitizes sheet files in a worker pool and writes one output set per sheet"""

    def __init__(self, config: PipelineConfig, out_dir, digitizer: Optional[SheetDigitizer] = None):
        self.config = config
        self.out_dir = Path(out_dir)
        self.digitizer = digitizer or SheetDigitizer(config)
        self.logger = logging.getLogger(__name__)
        self.history_path = Path(config.pipeline.history_path)
        self.ensure_directories()

    def ensure_directories(self):
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.history_path.parent.mkdir(parents=True, exist_ok=True)

    def process_sheets(self, paths: Sequence) -> Dict[str, Any]:
        """
        Digitize a list of sheet images

        Args:
            paths: Image files; outputs are named after each file's stem

        Returns:
            Dict[str, Any]: Run summary
        """
        results = {
            'total_sheets': len(paths),
            'successful': 0,
            'failed': 0,
            'errors': [],
            'sheet_details': []
        }

        threads = max(1, self.config.pipeline.threads)
        if threads > 1 and len(paths) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                details = list(pool.map(self.process_single_sheet, paths))
        else:
            details = [self.process_single_sheet(p) for p in paths]

        for detail in details:
            results['sheet_details'].append(detail)
            if detail['success']:
                results['successful'] += 1
            else:
                results['failed'] += 1
                results['errors'].extend(detail['errors'])

        self._save_history(results)
        return results

    def process_single_sheet(self, path) -> Dict[str, Any]:
        path = Path(path)
        result = {
            'sheet': path.stem,
            'source': str(path),
            'success': False,
            'outputs': {},
            'errors': [],
            'warnings': [],
            'timestamp': datetime.now().isoformat()
        }

        try:
            self.logger.info(f"Processing sheet: {path.name}")
            output = self.digitizer.digitize(load_gray_file(path))
            result['outputs'] = self._write_outputs(path.stem, output)
            result['warnings'] = output.warnings
            result['symbols'] = len(output.result.symbols)
            result['pipelines'] = len(output.result.pipelines)
            result['success'] = True
            return result

        except Exception as e:
            error_msg = f"Error processing sheet {path.name}: {str(e)}"
            self.logger.error(error_msg)
            result['errors'].append(error_msg)
            return result

    def _write_outputs(self, stem: str, output: SheetOutput) -> Dict[str, str]:
        """Write tables, report, raw detections and graph; returns file name -> md5"""
        symbols_csv, pipelines_csv = output.result.write_csv(self.out_dir, stem)
        written = [symbols_csv, pipelines_csv]

        report_path = self.out_dir / f"{stem}_report.json"
        with open(report_path, 'w', encoding='utf-8', newline='\n') as f:
            json.dump({'reconcile': output.report, 'warnings': output.warnings}, f, indent=2, sort_keys=True)
        detections_path = self.out_dir / f"{stem}{DETECTIONS_SUFFIX}"
        with open(detections_path, 'w', encoding='utf-8', newline='\n') as f:
            f.write(output.detections_json())
        written += [report_path, detections_path]
        if self.config.pipeline.write_graph_json:
            graph_path = self.out_dir / f"{stem}_graph.json"
            with open(graph_path, 'w', encoding='utf-8', newline='\n') as f:
                f.write(output.graph.to_json())
            written.append(graph_path)
        return {p.name: self._calculate_md5(p) for p in written if p.suffix == '.csv'}

    def _calculate_md5(self, file_path: Path) -> str:
        """Calculate MD5 hash of a file"""
        hash_md5 = hashlib.md5()
        with open(file_path, "rb") as f:
            for chunk in iter(lambda: f.read(4096), b""):
                hash_md5.update(chunk)
        return hash_md5.hexdigest()

    def _save_history(self, results: Dict[str, Any]):
        """Append the run summary to the history file, keeping the last 100 runs"""
        try:
            if self.history_path.exists():
                with open(self.history_path, 'r', encoding='utf-8') as f:
                    log_data = json.load(f)
            else:
                log_data = {'runs': []}

            log_data['runs'].append({'timestamp': datetime.now().isoformat(), 'results': results})
            log_data['runs'] = log_data['runs'][-100:]

            with open(self.history_path, 'w', encoding='utf-8') as f:
                json.dump(log_data, f, indent=2)

        except Exception as e:
            self.logger.error(f"Failed to save digitize history: {str(e)}")
