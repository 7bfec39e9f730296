"""
Report export: CSV tables for every evaluation result and 8-bit PGM heatmaps
for similarity matrices.

CSV schemas (after the `# key=value` echo lines):

    retrieval  use_pca,metric,top_n,fold,precision,mean_ap,queries,memory_size,excluded
               (fold is an index, or 'mean' / 'std' for the summary rows)
    matrix     label,<class 1>,...,<class C>   (one row per class; undefined entries are 'nan')
    psnr       position,kind,model_mean,model_std,baseline_mean,baseline_std
"""

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from evaluation.types import PsnrCurve, RetrievalReport, SimilarityMatrix
from network.repository import render_csv
from shared.constants import EXPORT_CHOICES, EXPORT_CSV, EXPORT_PGM_HEATMAP
from shared.exceptions import ConfigurationError, ContractViolation
from shared.utils import PathLike, atomic_write_bytes, atomic_write_text, echo_lines

logger = logging.getLogger(__name__)

RETRIEVAL_COLUMNS = [
    'use_pca', 'metric', 'top_n', 'fold', 'precision', 'mean_ap', 'queries', 'memory_size', 'excluded'
]
PSNR_COLUMNS = ['position', 'kind', 'model_mean', 'model_std', 'baseline_mean', 'baseline_std']
SIDECAR_SUFFIX = '.txt'

Exportable = Union[RetrievalReport, Sequence[RetrievalReport], SimilarityMatrix, PsnrCurve]


def retrieval_rows(report: RetrievalReport) -> List[Dict[str, Any]]:
    """Per-fold rows followed by mean and std rows; no rows for an empty report."""
    settings = {
        'use_pca': report.use_pca,
        'metric': report.metric,
        'top_n': report.echo.get('top_n', '')
    }
    rows = []
    for result in report.folds:
        rows.append(dict(
            settings, fold=result.fold, precision=result.precision, mean_ap=result.mean_ap,
            queries=result.queries, memory_size=result.memory_size, excluded=result.excluded
        ))
    if report.folds:
        rows.append(dict(
            settings, fold='mean', precision=report.precision_mean, mean_ap=report.map_mean,
            queries=sum(result.queries for result in report.folds), memory_size='', excluded=''
        ))
        rows.append(dict(
            settings, fold='std', precision=report.precision_std, mean_ap=report.map_std,
            queries='', memory_size='', excluded=''
        ))
    return rows


def render_retrieval(reports: Sequence[RetrievalReport], echo: Optional[Dict[str, Any]] = None) -> str:
    echo = dict(echo or {})
    if len(reports) == 1:
        echo.update({key: value for key, value in reports[0].echo.items() if key not in echo})
    rows = [row for report in reports for row in retrieval_rows(report)]
    return render_csv(RETRIEVAL_COLUMNS, rows, echo)


def render_matrix(matrix: SimilarityMatrix, echo: Optional[Dict[str, Any]] = None) -> str:
    columns = ['label'] + list(matrix.labels)
    rows = []
    for name, values in zip(matrix.labels, matrix.values):
        row = {'label': name}
        row.update({column: float(value) for column, value in zip(matrix.labels, values)})
        rows.append(row)
    return render_csv(columns, rows, echo or {})


def render_curve(curve: PsnrCurve, echo: Optional[Dict[str, Any]] = None) -> str:
    echo = dict(echo or {})
    echo.setdefault('episodes', curve.episodes)
    echo.setdefault('encoder_length', curve.encoder_length)
    rows = [
        {
            'position': position + 1,
            'kind': kind,
            'model_mean': float(curve.model_mean[position]),
            'model_std': float(curve.model_std[position]),
            'baseline_mean': float(curve.baseline_mean[position]),
            'baseline_std': float(curve.baseline_std[position])
        }
        for position, kind in enumerate(curve.kinds())
    ]
    return render_csv(PSNR_COLUMNS, rows, echo)


def heatmap_pixels(values: np.ndarray) -> np.ndarray:
    """
    Min-max normalize a matrix to 8-bit gray levels.

    The minimum maps to 0 and the maximum to 255; undefined (NaN) entries
    are black. A constant matrix maps to 255 everywhere.
    """
    values = np.asarray(values, dtype=np.float64)
    defined = ~np.isnan(values)
    pixels = np.zeros(values.shape, dtype=np.uint8)
    if not np.any(defined):
        return pixels
    low = float(values[defined].min())
    high = float(values[defined].max())
    if high - low <= 0.0:
        pixels[defined] = 255
        return pixels
    scaled = np.rint((values[defined] - low) / (high - low) * 255.0)
    pixels[defined] = np.clip(scaled, 0, 255).astype(np.uint8)
    return pixels


def encode_pgm(pixels: np.ndarray) -> bytes:
    """Binary (P5) PGM for a [H, W] uint8 array."""
    if pixels.ndim != 2 or pixels.dtype != np.uint8:
        raise ContractViolation(f"encode_pgm: expected a 2-D uint8 array, got {pixels.dtype} {pixels.shape}")
    height, width = pixels.shape
    return f"P5\n{width} {height}\n255\n".encode('ascii') + pixels.tobytes()


def sidecar_path(path: PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.name + SIDECAR_SUFFIX)


def render_sidecar(matrix: SimilarityMatrix, echo: Optional[Dict[str, Any]] = None) -> str:
    defined = matrix.values[matrix.defined]
    low = float(defined.min()) if defined.size else float('nan')
    high = float(defined.max()) if defined.size else float('nan')
    lines = echo_lines(echo or {}, prefix='# ')
    lines += [
        'normalization=min-max',
        f'min={low!r}',
        f'max={high!r}',
        'min_pixel=0',
        'max_pixel=255',
        'undefined_pixel=0',
        f"labels={','.join(matrix.labels)}"
    ]
    return '\n'.join(lines) + '\n'


def export_report(
    obj: Exportable,
    path: PathLike,
    format: str = EXPORT_CSV,
    echo: Optional[Dict[str, Any]] = None
) -> Path:
    """
    Write an evaluation result to disk.

    Args:
        obj: RetrievalReport, a list of them (sweep), SimilarityMatrix or PsnrCurve
        path: Destination file
        format: 'csv' or 'pgm-heatmap' (matrices only; a `.txt` sidecar records the normalization)
        echo: Configuration echoed as `# key=value` lines

    Returns:
        The written path

    Raises:
        ConfigurationError: On an unknown format or a heatmap of a non-matrix
        PersistenceError: If the file cannot be written
    """
    if format not in EXPORT_CHOICES:
        raise ConfigurationError(f"unknown export format '{format}', expected one of {EXPORT_CHOICES}")
    path = Path(path)

    if format == EXPORT_PGM_HEATMAP:
        if not isinstance(obj, SimilarityMatrix):
            raise ConfigurationError(
                f"{EXPORT_PGM_HEATMAP} export needs a similarity matrix, got {type(obj).__name__}"
            )
        atomic_write_bytes(path, encode_pgm(heatmap_pixels(obj.values)))
        atomic_write_text(sidecar_path(path), render_sidecar(obj, echo))
        logger.info(f"Wrote {len(obj.labels)}x{len(obj.labels)} heatmap to {path}")
        return path

    if isinstance(obj, SimilarityMatrix):
        text = render_matrix(obj, echo)
    elif isinstance(obj, PsnrCurve):
        text = render_curve(obj, echo)
    elif isinstance(obj, RetrievalReport):
        text = render_retrieval([obj], echo)
    elif isinstance(obj, (list, tuple)) and all(isinstance(item, RetrievalReport) for item in obj):
        text = render_retrieval(list(obj), echo)
    else:
        raise ConfigurationError(f"cannot export {type(obj).__name__}")
    atomic_write_text(path, text)
    logger.info(f"Wrote {type(obj).__name__} report to {path}")
    return path
