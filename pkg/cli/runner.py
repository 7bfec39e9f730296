"""
`epimem` subcommands: generate data, train, encode, build and query the
memory, evaluate and emit predicted frames.

Exit codes: 0 on success, 1 on usage, configuration or contract errors,
2 on I/O failures.
"""

import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, TextIO

from django.conf import settings
from django.core.management.base import CommandError, CommandParser

from cli.config import RunConfig
from cli.images import ROLE_PREDICTION, ROLE_RECONSTRUCTION, write_frames
from cli.latents import LatentTable, read_latents, write_latents
from episodes.repository import EpisodeRepository
from episodes.services import generate_dataset
from episodes.sources import SyntheticEpisodeSource
from evaluation.exporters import export_report
from evaluation.services import (
    class_similarity_matrix,
    holdout_retrieval,
    psnr_curves,
    retrieval_benchmark,
    retrieval_sweep,
)
from memory.repository import MemoryRepository
from memory.types import RecordMetadata
from network.repository import render_csv
from network.services import InferenceService, TrainingService
from network.types import EpisodeTensor
from shared.constants import EXPORT_CHOICES, EXPORT_CSV, METRIC_CHOICES, SPLIT_CHOICES, SPLIT_TRAIN, SPLIT_VALIDATION
from shared.exceptions import ConfigurationError, ContractViolation, EpisodicMemoryError, PersistenceError
from shared.utils import atomic_write_text, echo_lines

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_IO = 2

SPLIT_ALL = 'all'
QUERY_COLUMNS = ['rank', 'id', 'label', 'source', 'similarity']
PREDICT_ECHO = 'predict.txt'


# ============================================================================
# HELPERS
# ============================================================================

def _path(value: str) -> Path:
    """Resolve a path argument against EPIMEM_WORKDIR."""
    return Path(settings.EPIMEM_WORKDIR) / value


def _assignments(pairs: Optional[Sequence[str]]) -> Dict[str, str]:
    assignments = {}
    for pair in pairs or []:
        key, sep, value = pair.partition('=')
        if not sep or not key.strip():
            raise ConfigurationError(f"--set expects key=value, got '{pair}'")
        assignments[key.strip()] = value.strip()
    return assignments


def _checkpoint(args, run_config: RunConfig) -> InferenceService:
    location = args.checkpoint or run_config['checkpoint']
    if not location:
        raise ConfigurationError("no checkpoint given (use --checkpoint or set checkpoint= in the config file)")
    return InferenceService.from_checkpoint(_path(location))


def _split_episodes(source: SyntheticEpisodeSource, split: str) -> List[EpisodeTensor]:
    splits = SPLIT_CHOICES if split == SPLIT_ALL else (split,)
    return [episode for name in splits for episode in source.load_split(name)]


def _encode_table(inference: InferenceService, source: SyntheticEpisodeSource, split: str) -> LatentTable:
    splits = SPLIT_CHOICES if split == SPLIT_ALL else (split,)
    episodes, names = [], []
    for name in splits:
        loaded = source.load_split(name)
        episodes.extend(loaded)
        names.extend([name] * len(loaded))
    k = inference.config.encoder_length
    return LatentTable(
        episode_ids=[episode.episode_id for episode in episodes],
        labels=[episode.label for episode in episodes],
        splits=names,
        frame_start=[0] * len(episodes),
        frame_stop=[k] * len(episodes),
        vectors=inference.encode_many(episodes)
    )


def _class_order(run_config: RunConfig, labels: Sequence[str]) -> Optional[Sequence[str]]:
    classes = run_config['classes']
    return classes if set(labels) <= set(classes) else None


def _check_prefix(episode: EpisodeTensor, inference: InferenceService) -> None:
    config = inference.config
    if episode.frame_shape != config.frame_shape:
        raise ContractViolation(
            f"episode frame shape {episode.frame_shape} differs from checkpoint frames {config.frame_shape}"
        )
    if episode.length < config.encoder_length:
        raise ContractViolation(f"episode has {episode.length} frames, the checkpoint encodes {config.encoder_length}")


# ============================================================================
# SUBCOMMANDS
# ============================================================================

def gen_data(args, run_config: RunConfig, out: TextIO) -> None:
    manifest = generate_dataset(
        run_config.dataset_config(),
        master_seed=run_config.seed,
        out_path=_path(args.out),
        workers=run_config['workers'],
        echo=run_config.echo('gen-data')
    )
    out.write(f"{len(manifest.entries)} episodes written to {args.out}\n")


def train(args, run_config: RunConfig, out: TextIO) -> None:
    source = SyntheticEpisodeSource(_path(args.data))
    service = TrainingService.from_seed(run_config.model_config(), run_config.seed, run_config.training_config())
    result = service.fit(
        source.load_split(SPLIT_TRAIN),
        source.load_split(SPLIT_VALIDATION),
        epochs=run_config['epochs'],
        out_dir=_path(args.out),
        seed=run_config.seed,
        echo=run_config.echo('train')
    )
    out.write(f"{result.checkpoint}\n")


def encode(args, run_config: RunConfig, out: TextIO) -> None:
    inference = _checkpoint(args, run_config)
    table = _encode_table(inference, SyntheticEpisodeSource(_path(args.data)), args.split)
    write_latents(_path(args.out), table, run_config.echo('encode'))
    out.write(f"{len(table)} latents of dimension {table.dimension} written to {args.out}\n")


def mem_insert(args, run_config: RunConfig, out: TextIO) -> None:
    if bool(args.latents) == bool(args.episode):
        raise ConfigurationError("mem-insert needs either --latents or --episode")
    repository = MemoryRepository()
    if args.latents:
        table = read_latents(_path(args.latents))
        vectors = table.vectors
        metadata = [
            RecordMetadata(
                label=table.labels[row] or None,
                source=table.source(row),
                frame_start=table.frame_start[row],
                frame_stop=table.frame_stop[row]
            )
            for row in range(len(table))
        ]
    else:
        inference = _checkpoint(args, run_config)
        k = inference.config.encoder_length
        episodes = [EpisodeRepository().load(_path(path)) for path in args.episode]
        for episode in episodes:
            _check_prefix(episode, inference)
        vectors = [inference.encode(episode).values for episode in episodes]
        metadata = [
            RecordMetadata(label=episode.label, source=str(path), frame_start=0, frame_stop=k)
            for episode, path in zip(episodes, args.episode)
        ]

    memory = repository.load_or_create(_path(args.memory), len(vectors[0]))
    ids = memory.insert_many(vectors, metadata)
    if args.fit_pca:
        memory.fit_pca(args.fit_pca)
    repository.save(memory, _path(args.memory))
    out.write(f"inserted {len(ids)} records (ids {ids[0]}..{ids[-1]}), memory holds {len(memory)}\n")


def query(args, run_config: RunConfig, out: TextIO) -> None:
    memory = MemoryRepository().load(_path(args.memory))
    inference = _checkpoint(args, run_config)
    episode = EpisodeRepository().load(_path(args.episode))
    _check_prefix(episode, inference)
    if args.static_frame is not None:
        if not 0 <= args.static_frame < episode.length:
            raise ContractViolation(f"--static-frame {args.static_frame} outside 0..{episode.length - 1}")
        latent = inference.encode_static_scene(episode.frames[args.static_frame])
    else:
        latent = inference.encode(episode)
    results = memory.query(latent, run_config['top_n'], use_pca=args.pca, metric=run_config['metric'])
    rows = [
        {
            'rank': rank,
            'id': result.record.id,
            'label': result.record.label or '',
            'source': result.record.metadata.source,
            'similarity': result.similarity
        }
        for rank, result in enumerate(results, start=1)
    ]
    out.write(render_csv(QUERY_COLUMNS, rows, run_config.echo('query')))


def sim_matrix(args, run_config: RunConfig, out: TextIO) -> None:
    table = read_latents(_path(args.latents))
    matrix = class_similarity_matrix(
        table.vectors, table.labels, use_pca=args.pca, pca_components=run_config['pca_components'],
        classes=_class_order(run_config, table.labels)
    )
    export_report(matrix, _path(args.out), format=args.format, echo=run_config.echo('sim-matrix'))
    out.write(
        f"intra-class {matrix.diagonal_mean():.4f}, inter-class {matrix.off_diagonal_mean():.4f} "
        f"-> {args.out}\n"
    )


def eval_retrieval(args, run_config: RunConfig, out: TextIO) -> None:
    table = read_latents(_path(args.latents))
    settings_kwargs = dict(top_n=run_config['top_n'], metric=run_config['metric'])
    if args.queries:
        queries = read_latents(_path(args.queries))
        reports = [holdout_retrieval(
            table.vectors, table.labels, queries.vectors, queries.labels,
            pca_components=run_config['pca_components'] if args.pca else None, **settings_kwargs
        )]
    else:
        common = dict(
            folds=run_config['folds'], memory_fraction=run_config['memory_fraction'], top_n=run_config['top_n'],
            seed=run_config.seed, pca_components=run_config['pca_components'], workers=run_config['workers']
        )
        if args.sweep:
            reports = retrieval_sweep(table.vectors, table.labels, **common)
        else:
            reports = [retrieval_benchmark(
                table.vectors, table.labels, use_pca=args.pca, metric=run_config['metric'], **common
            )]
    export_report(reports, _path(args.out), echo=run_config.echo('eval-retrieval'))
    for report in reports:
        out.write(
            f"pca={report.use_pca} metric={report.metric}: precision {report.precision_mean:.4f} "
            f"+- {report.precision_std:.4f}, mAP {report.map_mean:.4f} +- {report.map_std:.4f}\n"
        )


def eval_psnr(args, run_config: RunConfig, out: TextIO) -> None:
    inference = _checkpoint(args, run_config)
    episodes = _split_episodes(SyntheticEpisodeSource(_path(args.data)), args.split)
    curve = psnr_curves(inference, episodes)
    export_report(curve, _path(args.out), echo=run_config.echo('eval-psnr'))
    out.write(
        f"reconstruction {curve.reconstruction_mean():.2f} dB, prediction {curve.prediction_mean():.2f} dB "
        f"over {curve.episodes} episodes\n"
    )


def predict(args, run_config: RunConfig, out: TextIO) -> None:
    inference = _checkpoint(args, run_config)
    episode = EpisodeRepository().load(_path(args.episode))
    _check_prefix(episode, inference)
    k = inference.config.encoder_length
    reconstruction, prediction = inference.generate(episode.frames[:k])
    out_dir = _path(args.out)
    paths = write_frames(out_dir, reconstruction, ROLE_RECONSTRUCTION, first_position=1)
    paths += write_frames(out_dir, prediction, ROLE_PREDICTION, first_position=k + 1)
    echo = run_config.echo('predict')
    echo['episode'] = args.episode
    atomic_write_text(out_dir / PREDICT_ECHO, '\n'.join(echo_lines(echo)) + '\n')
    out.write(f"{len(paths)} frames written to {args.out}\n")


# ============================================================================
# PARSER
# ============================================================================

def _common_arguments(parser: CommandParser) -> None:
    parser.add_argument('--config', help='key=value configuration file')
    parser.add_argument('--seed', type=int, help='seed of every random stream')
    parser.add_argument('--set', action='append', metavar='KEY=VALUE', help='override one configuration key')


def build_parser() -> CommandParser:
    parser = CommandParser(prog='epimem', description='Deep episodic memory pipeline', called_from_command_line=False)
    subparsers = parser.add_subparsers(dest='command', required=True)

    sub = subparsers.add_parser('gen-data', help='render the synthetic episode corpus')
    sub.add_argument('--out', required=True)
    sub.add_argument('--workers', type=int)
    sub.set_defaults(handler=gen_data)

    sub = subparsers.add_parser('train', help='train the composite network')
    sub.add_argument('--data', required=True)
    sub.add_argument('--out', required=True)
    sub.add_argument('--epochs', type=int)
    sub.set_defaults(handler=train)

    sub = subparsers.add_parser('encode', help='write the latents of a corpus split')
    sub.add_argument('--checkpoint')
    sub.add_argument('--data', required=True)
    sub.add_argument('--split', choices=SPLIT_CHOICES + (SPLIT_ALL,), default=SPLIT_VALIDATION)
    sub.add_argument('--out', required=True)
    sub.set_defaults(handler=encode)

    sub = subparsers.add_parser('mem-insert', help='add latents to a memory file')
    sub.add_argument('--memory', required=True)
    sub.add_argument('--latents')
    sub.add_argument('--episode', action='append')
    sub.add_argument('--checkpoint')
    sub.add_argument('--fit-pca', type=int, metavar='COMPONENTS')
    sub.set_defaults(handler=mem_insert)

    sub = subparsers.add_parser('query', help='retrieve the closest stored episodes')
    sub.add_argument('--memory', required=True)
    sub.add_argument('--episode', required=True)
    sub.add_argument('--checkpoint')
    sub.add_argument('--top', type=int, dest='top_n')
    sub.add_argument('--static-frame', type=int)
    sub.add_argument('--pca', action='store_true')
    sub.add_argument('--metric', choices=METRIC_CHOICES)
    sub.set_defaults(handler=query)

    sub = subparsers.add_parser('sim-matrix', help='class similarity matrix of a latent table')
    sub.add_argument('--latents', required=True)
    sub.add_argument('--out', required=True)
    sub.add_argument('--format', choices=EXPORT_CHOICES, default=EXPORT_CSV)
    sub.add_argument('--pca', action='store_true')
    sub.set_defaults(handler=sim_matrix)

    sub = subparsers.add_parser('eval-retrieval', help='k-fold retrieval benchmark')
    sub.add_argument('--latents', required=True)
    sub.add_argument('--queries', help='fixed query latents; --latents is then the whole memory')
    sub.add_argument('--out', required=True)
    sub.add_argument('--sweep', action='store_true', help='every PCA and metric combination')
    sub.add_argument('--pca', action='store_true')
    sub.add_argument('--metric', choices=METRIC_CHOICES)
    sub.add_argument('--folds', type=int)
    sub.add_argument('--memory-fraction', type=float)
    sub.add_argument('--top', type=int, dest='top_n')
    sub.set_defaults(handler=eval_retrieval)

    sub = subparsers.add_parser('eval-psnr', help='PSNR per frame position against the mean-frame baseline')
    sub.add_argument('--checkpoint')
    sub.add_argument('--data', required=True)
    sub.add_argument('--split', choices=SPLIT_CHOICES + (SPLIT_ALL,), default=SPLIT_VALIDATION)
    sub.add_argument('--out', required=True)
    sub.set_defaults(handler=eval_psnr)

    sub = subparsers.add_parser('predict', help='write reconstructed and predicted frames')
    sub.add_argument('--checkpoint')
    sub.add_argument('--episode', required=True)
    sub.add_argument('--out', required=True)
    sub.set_defaults(handler=predict)

    for choice in subparsers.choices.values():
        _common_arguments(choice)
    return parser


# Flags that override a configuration key of the same name
OVERRIDE_FLAGS = ('seed', 'workers', 'epochs', 'top_n', 'metric', 'folds', 'memory_fraction')


def run(argv: Sequence[str], stdout: Optional[TextIO] = None, stderr: Optional[TextIO] = None) -> int:
    """
    Parse argv, resolve the run configuration and execute one subcommand.

    Returns:
        Process exit code
    """
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv))
    except CommandError as e:
        stderr.write(parser.format_usage())
        stderr.write(f"{str(e)}\n")
        return EXIT_FAILURE
    except SystemExit as e:
        return EXIT_OK if not e.code else EXIT_FAILURE

    try:
        overrides = {name: getattr(args, name) for name in OVERRIDE_FLAGS if hasattr(args, name)}
        run_config = RunConfig.resolve(
            _path(args.config) if args.config else None, overrides, _assignments(args.set)
        )
        logger.info(f"epimem {args.command} (seed={run_config.seed})")
        args.handler(args, run_config, stdout)
    except (PersistenceError, OSError) as e:
        logger.debug(f"{args.command} failed", exc_info=True)
        stderr.write(f"epimem {args.command}: {str(e)}\n")
        return EXIT_IO
    except EpisodicMemoryError as e:
        logger.debug(f"{args.command} failed", exc_info=True)
        stderr.write(f"epimem {args.command}: {type(e).__name__}: {str(e)}\n")
        return EXIT_FAILURE
    return EXIT_OK
