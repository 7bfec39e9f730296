import csv
import io
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence

from shared.utils import PathLike, atomic_write_text, echo_lines

logger = logging.getLogger(__name__)

TRAINING_LOG = 'training.csv'
VALIDATION_LOG = 'validation.csv'

TRAINING_COLUMNS = ['epoch', 'step', 'lr', 'loss', 'mse', 'gd']
VALIDATION_COLUMNS = ['epoch', 'loss', 'reconstruction_psnr', 'prediction_psnr', 'baseline_psnr']


def render_csv(columns: Sequence[str], rows: Iterable[Dict[str, Any]], echo: Dict[str, Any]) -> str:
    """CSV text: `# key=value` echo lines, a header row, then one line per row."""
    output = io.StringIO()
    for line in echo_lines(echo, prefix='# '):
        output.write(line + '\n')
    writer = csv.writer(output, lineterminator='\n')
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_format(row[column]) for column in columns])
    return output.getvalue()


def _format(value: Any) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def read_csv(path: PathLike) -> List[Dict[str, str]]:
    """Rows of a CSV written by `render_csv`, skipping echo comment lines."""
    with open(path, newline='', encoding='utf-8') as handle:
        lines = [line for line in handle if not line.startswith('#')]
    return list(csv.DictReader(lines))


class TrainingLogRepository:
    """
    Repository class for the per-step training log and per-epoch validation log.

    Both files are rewritten whole after every epoch.
    """

    def __init__(self, directory: PathLike, echo: Dict[str, Any]):
        self.directory = Path(directory)
        self.echo = echo
        self.training_rows: List[Dict[str, Any]] = []
        self.validation_rows: List[Dict[str, Any]] = []

    def add_step(self, epoch: int, step: int, lr: float, loss: float, mse: float, gd: float) -> None:
        self.training_rows.append({'epoch': epoch, 'step': step, 'lr': lr, 'loss': loss, 'mse': mse, 'gd': gd})

    def add_validation(self, epoch: int, summary: Dict[str, float]) -> None:
        row = {'epoch': epoch}
        row.update({column: summary[column] for column in VALIDATION_COLUMNS[1:]})
        self.validation_rows.append(row)

    def flush(self) -> None:
        atomic_write_text(self.directory / TRAINING_LOG, render_csv(TRAINING_COLUMNS, self.training_rows, self.echo))
        atomic_write_text(
            self.directory / VALIDATION_LOG, render_csv(VALIDATION_COLUMNS, self.validation_rows, self.echo)
        )
        logger.debug(f"Wrote {len(self.training_rows)} training rows to {self.directory}")
