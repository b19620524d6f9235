# main.py
"""
P&ID Digitization
Turns P&ID sheet images into symbol and pipeline tables, generates synthetic
annotated sheets and scores the pipeline against them
"""

import sys
import os
import argparse
import logging
from pathlib import Path

import psutil

from src.config_manager import ConfigManager, PipelineConfig
from src.aggregate import DigitizationResult
from src.dataset_gen import write_dataset
from src.evaluate import DETECTIONS_SUFFIX, Evaluator, SheetSetMismatch, load_detections
from src.logger import log_run_header, setup_logging
from src.overlay import OverlayRenderer
from src.pipeline import BatchProcessor
from src.raster import load_gray_file, resize_to_width

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_USAGE = 2
IMAGE_SUFFIXES = {'.png', '.jpg', '.jpeg', '.tif', '.tiff', '.bmp'}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='P&ID Digitization')
    parser.add_argument('--config', default='config/settings.json',
                        help='Path to configuration file')
    parser.add_argument('--log-level', default='INFO',
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'],
                        help='Logging level')
    parser.add_argument('--log-dir', default='logs', help='Directory for log files')
    sub = parser.add_subparsers(dest='command', required=True)

    gen = sub.add_parser('generate', help='Generate a synthetic annotated dataset')
    gen.add_argument('--out-dir', required=True, help='Dataset output directory')
    gen.add_argument('--seed', type=int, help='Override generator seed')
    gen.add_argument('--count', type=int, help='Override number of sheets')

    dig = sub.add_parser('digitize', help='Digitize sheet images into CSV tables')
    dig.add_argument('sheets', nargs='+', help='Sheet images or directories of images')
    dig.add_argument('--out-dir', required=True, help='Output directory for tables')
    dig.add_argument('--resize-width', type=int, help='Override resize width')
    dig.add_argument('--threads', type=int, help='Worker threads')
    dig.add_argument('--rules', help='Reconciliation rule file')

    ev = sub.add_parser('evaluate', help='Score predictions against a generated dataset')
    ev.add_argument('--pred-dir', required=True, help='Directory of digitize outputs')
    ev.add_argument('--truth-dir', required=True, help='Dataset directory with manifest.json')
    ev.add_argument('--out-dir', required=True, help='Directory for report files')
    ev.add_argument('--threads', type=int, help='Worker threads')

    ov = sub.add_parser('overlay', help='Draw a result on its sheet')
    ov.add_argument('--sheet', required=True, help='Sheet image')
    ov.add_argument('--result-dir', help='Directory holding the sheet\'s CSV tables')
    ov.add_argument('--out', required=True, help='Output PNG path')
    ov.add_argument('--resize-width', type=int, help='Override resize width')
    ov.add_argument('--compare-hough', action='store_true',
                    help='Render kernel and Hough line detections side by side')
    return parser


def thread_cap() -> int:
    """PID_THREADS if set, else the physical core count"""
    env = os.environ.get('PID_THREADS')
    if env:
        value = int(env)
        if value < 1:
            raise ValueError(f"PID_THREADS must be >= 1, got {value}")
        return value
    return psutil.cpu_count(logical=False) or 1


def load_pipeline_config(path: str, required: bool = True) -> PipelineConfig:
    if not required and not Path(path).exists():
        return PipelineConfig()
    return ConfigManager(path).load_config()


def collect_sheets(entries) -> list:
    paths = []
    for entry in entries:
        entry = Path(entry)
        if entry.is_dir():
            paths.extend(sorted(p for p in entry.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES))
        else:
            paths.append(entry)
    return paths


def cmd_generate(args, config: PipelineConfig, logger) -> int:
    config = config.with_overrides(seed=args.seed, count=args.count)
    try:
        manifest = write_dataset(config.generator, args.out_dir)
    except OSError as e:
        logger.error(f"Dataset generation failed: {str(e)}")
        return EXIT_PARTIAL
    logger.info(f"Generated {manifest['count']} sheets in {args.out_dir}")
    return EXIT_OK


def cmd_digitize(args, config: PipelineConfig, logger) -> int:
    threads = min(args.threads or config.pipeline.threads, thread_cap())
    config = config.with_overrides(resize_width=args.resize_width, threads=threads, rules=args.rules)
    sheets = collect_sheets(args.sheets)
    if not sheets:
        logger.error("No sheet images found")
        return EXIT_USAGE
    processor = BatchProcessor(config, args.out_dir)
    results = processor.process_sheets(sheets)
    logger.info(f"Digitized {results['successful']}/{results['total_sheets']} sheets")
    for error in results['errors']:
        logger.error(error)
    return EXIT_OK if results['failed'] == 0 else EXIT_PARTIAL


def cmd_evaluate(args, config: PipelineConfig, logger) -> int:
    threads = min(args.threads or config.pipeline.threads, thread_cap())
    try:
        report = Evaluator(threads=threads).evaluate_dirs(args.pred_dir, args.truth_dir, args.out_dir)
    except (SheetSetMismatch, FileNotFoundError) as e:
        logger.error(str(e))
        return EXIT_PARTIAL
    logger.info(f"Mean symbol F1 {report.summary()['mean_f1']:.3f} over {report.sheets} sheets")
    return EXIT_OK


def cmd_overlay(args, config: PipelineConfig, logger) -> int:
    config = config.with_overrides(resize_width=args.resize_width)
    renderer = OverlayRenderer()
    loaded = load_gray_file(args.sheet)
    if args.compare_hough:
        image = renderer.compare_hough(resize_to_width(loaded, config.raster.resize_width), config.line_detect)
    else:
        stem = Path(args.sheet).stem
        result_dir = Path(args.result_dir or Path(args.sheet).parent)
        if (result_dir / f"{stem}_symbols.csv").exists():
            result = DigitizationResult.read_csv(result_dir, stem)
        else:
            logger.warning(f"No result tables for {stem} in {result_dir}; drawing nothing")
            result = DigitizationResult((), ())
        _, texts = load_detections(result_dir / f"{stem}{DETECTIONS_SUFFIX}")
        if result.symbols or result.pipelines or texts:
            # result coordinates are in the resized frame
            image = renderer.render(resize_to_width(loaded, config.raster.resize_width), result, texts)
        else:
            image = renderer.render(loaded, result, texts)
    renderer.save(image, args.out)
    logger.info(f"Overlay written to {args.out}")
    return EXIT_OK


COMMANDS = {
    'generate': cmd_generate,
    'digitize': cmd_digitize,
    'evaluate': cmd_evaluate,
    'overlay': cmd_overlay,
}


def main(argv=None) -> int:
    """Main entry point for the digitization tools"""
    args = build_parser().parse_args(argv)

    try:
        logger = setup_logging(args.log_level, args.log_dir)
        log_run_header(logger, args.command)

        try:
            config = load_pipeline_config(args.config, required=args.command != 'overlay')
        except (FileNotFoundError, ValueError) as e:
            logger.error(f"Configuration error: {str(e)}")
            print(f"Configuration error: {str(e)}", file=sys.stderr)
            return EXIT_USAGE

        code = COMMANDS[args.command](args, config, logger)
        if code == EXIT_OK:
            logger.info(f"{args.command} completed successfully")
        else:
            print(f"{args.command} finished with errors (exit {code}); see log", file=sys.stderr)
        return code

    except Exception as e:
        logging.error(f"Critical error in main execution: {str(e)}")
        print(f"Error: {str(e)}", file=sys.stderr)
        return EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main())
