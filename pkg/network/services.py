import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from metrics.quality import mean_frame_baseline, psnr
from network.composite import CompositeNetwork
from network.config import ModelConfig, TrainingConfig
from network.repository import CheckpointRepository, TrainingLogRepository
from network.types import EpisodeTensor, LatentVector
from shared.constants import MODE_EVAL, MODE_TRAIN
from shared.exceptions import ConfigurationError, ContractViolation, NumericalError
from shared.utils import PathLike, chunked
from substrate.optim import AdamState, adam_update, exp_decay_lr
from substrate.params import ParamSet
from substrate.rng import RngStream

logger = logging.getLogger(__name__)

# child stream keys under the run seed
INIT_STREAM = 0
SHUFFLE_STREAM = 1
NOISE_STREAM = 2

DEFAULT_EVAL_BATCH = 16


def stack_episodes(episodes: Sequence[EpisodeTensor], config: ModelConfig, op: str) -> np.ndarray:
    """
    Stack episodes into [N, n, C, H, W] after checking each against the config.

    Raises:
        ContractViolation: If the batch is empty or an episode does not conform
    """
    if not episodes:
        raise ContractViolation(f"{op}: empty batch")
    for episode in episodes:
        episode.check(config)
    return np.stack([episode.frames for episode in episodes]).astype(config.numpy_dtype, copy=False)


@dataclass
class StepResult:
    """Pre-update losses of one training step and the pre-clip gradient norm."""
    loss: float
    mse: float
    gd: float
    grad_norm: float


@dataclass
class FitResult:
    """Outcome of a training run."""
    checkpoint: Path
    trace: List[Dict[str, Any]] = field(default_factory=list)
    validation: List[Dict[str, Any]] = field(default_factory=list)


class InferenceService:
    """
    Eval-mode use of a trained network: encoding, frame generation and
    validation scoring.
    """

    def __init__(self, network: CompositeNetwork, params: ParamSet):
        self.network = network
        self.params = params

    @property
    def config(self) -> ModelConfig:
        return self.network.config

    @classmethod
    def from_checkpoint(cls, path: PathLike) -> 'InferenceService':
        """
        Load a checkpoint file (or the latest one in a directory).

        Raises:
            NotFoundError: If no checkpoint exists at the path
            PersistenceError: If the checkpoint is malformed
        """
        repository = CheckpointRepository()
        checkpoint = repository.load(repository.resolve(path))
        return cls(CompositeNetwork(checkpoint.config), checkpoint.to_params())

    def _encoder_frames(self, frames) -> np.ndarray:
        if isinstance(frames, EpisodeTensor):
            frames = frames.frames
        frames = np.asarray(frames)
        k = self.config.encoder_length
        if frames.ndim != 4 or frames.shape[0] < k:
            raise ContractViolation(f"expected at least {k} frames [T, C, H, W], got shape {frames.shape}")
        return frames[:k]

    def encode(self, frames) -> LatentVector:
        """V of the first k frames of an episode (or of exactly k frames)."""
        latent = self.network.encode(self._encoder_frames(frames), self.params, MODE_EVAL)
        return LatentVector.from_tensor(latent)

    def encode_many(self, episodes: Sequence[EpisodeTensor], batch_size: int = DEFAULT_EVAL_BATCH) -> np.ndarray:
        """Latents [N, 2d] of many episodes, encoded in batches."""
        rows = []
        for batch in chunked(list(episodes), batch_size):
            frames = np.stack([self._encoder_frames(episode) for episode in batch])
            rows.append(self.network.encode(frames, self.params, MODE_EVAL).data)
        if not rows:
            return np.zeros((0, self.config.latent_dim), dtype=self.config.numpy_dtype)
        return np.concatenate(rows, axis=0)

    def encode_static_scene(self, frame: np.ndarray) -> LatentVector:
        return LatentVector.from_tensor(self.network.encode_static_scene(frame, self.params))

    def generate(self, frames) -> Tuple[np.ndarray, np.ndarray]:
        """
        Reconstructed k frames and predicted n - k frames for an episode prefix.

        Returns:
            (Y_r [k, C, H, W], Y_p [n-k, C, H, W])
        """
        latent = self.network.encode(self._encoder_frames(frames), self.params, MODE_EVAL)
        reconstruction = self.network.decode_reconstruct(latent, self.params, MODE_EVAL)
        prediction = self.network.decode_predict(latent, self.params, MODE_EVAL)
        return reconstruction.data, prediction.data

    def generate_many(self, episodes: Sequence[EpisodeTensor], batch_size: int = DEFAULT_EVAL_BATCH) -> np.ndarray:
        """Generated sequences [N, n, C, H, W] (reconstruction followed by prediction)."""
        outputs = []
        for batch in chunked(list(episodes), batch_size):
            frames = stack_episodes(batch, self.config, 'generate_many')
            result = self.network.forward_composite(frames, self.params, MODE_EVAL)
            outputs.append(np.concatenate([result.reconstruction.data, result.prediction.data], axis=1))
        return np.concatenate(outputs, axis=0)

    def evaluate_loss(self, episodes: Sequence[EpisodeTensor], batch_size: int = DEFAULT_EVAL_BATCH) -> Dict[str, float]:
        """Eval-mode loss components averaged over episodes."""
        totals = {'loss': 0.0, 'mse': 0.0, 'gd': 0.0}
        count = 0
        for batch in chunked(list(episodes), batch_size):
            frames = stack_episodes(batch, self.config, 'evaluate_loss')
            values = self.network.forward_composite(frames, self.params, MODE_EVAL).losses.as_floats()
            for key in totals:
                totals[key] += values[key] * len(batch)
            count += len(batch)
        if not count:
            raise ContractViolation("evaluate_loss: no episodes")
        return {key: value / count for key, value in totals.items()}

    def validation_summary(self, episodes: Sequence[EpisodeTensor], batch_size: int = DEFAULT_EVAL_BATCH) -> Dict[str, float]:
        """
        Mean eval loss and PSNR over a validation set.

        Returns:
            Dict with loss, reconstruction_psnr (positions 1..k), prediction_psnr
            (positions k+1..n) and baseline_psnr (mean-frame baseline over all n)
        """
        k = self.config.encoder_length
        generated = self.generate_many(episodes, batch_size)
        reconstruction, prediction, baseline = [], [], []
        for episode, output in zip(episodes, generated):
            reconstruction.extend(psnr(output[i], episode.frames[i]) for i in range(k))
            prediction.extend(psnr(output[i], episode.frames[i]) for i in range(k, episode.length))
            stand_in = mean_frame_baseline(episode.encoder_frames(k))
            baseline.extend(psnr(stand_in, frame) for frame in episode.frames)
        summary = {
            'loss': self.evaluate_loss(episodes, batch_size)['loss'],
            'reconstruction_psnr': float(np.mean(reconstruction)),
            'prediction_psnr': float(np.mean(prediction)),
            'baseline_psnr': float(np.mean(baseline))
        }
        return summary


class TrainingService:
    """
    Mini-batch training of the composite network with clipped ADAM steps.

    All randomness (dropout masks, latent noise) comes from `rng`; shuffles
    derive from the seed given to `fit`.
    """

    def __init__(
        self,
        network: CompositeNetwork,
        params: ParamSet,
        rng: RngStream,
        training: Optional[TrainingConfig] = None,
        adam: Optional[AdamState] = None
    ):
        self.network = network
        self.params = params
        self.rng = rng
        self.training = training or TrainingConfig()
        self.adam = adam or AdamState.for_params(params)
        self.checkpoints = CheckpointRepository()

    @property
    def config(self) -> ModelConfig:
        return self.network.config

    @classmethod
    def from_seed(cls, config: ModelConfig, seed: int, training: Optional[TrainingConfig] = None) -> 'TrainingService':
        """Fresh parameters and noise stream derived from one seed."""
        root = RngStream(seed)
        network = CompositeNetwork(config)
        params = network.init_params(root.child(INIT_STREAM))
        return cls(network, params, root.child(NOISE_STREAM), training)

    def step(self, batch: Sequence[EpisodeTensor], lr: float) -> StepResult:
        """
        One forward/backward pass over the batch followed by one ADAM update.

        Raises:
            ContractViolation: If the batch is empty or inconsistent
            NumericalError: If the loss is non-finite (parameters untouched)
        """
        frames = stack_episodes(batch, self.config, 'train_step')
        self.params.zero_grad()
        output = self.network.forward_composite(frames, self.params, MODE_TRAIN, self.rng)
        values = output.losses.as_floats()
        if not all(math.isfinite(value) for value in values.values()):
            ids = [episode.episode_id for episode in batch]
            raise NumericalError(
                f"Non-finite training loss for batch indices {list(range(len(batch)))} "
                f"(episodes {ids}): loss={values['loss']}, mse={values['mse']}, gd={values['gd']}"
            )
        output.losses.combined.backward()
        norm = self.params.clip_grad_norm(self.training.clip_norm)
        adam_update(self.params, self.adam, lr)
        return StepResult(loss=values['loss'], mse=values['mse'], gd=values['gd'], grad_norm=norm)

    def train_step(self, batch: Sequence[EpisodeTensor], lr: float) -> float:
        """Mean batch loss before the update."""
        return self.step(batch, lr).loss

    def fit(
        self,
        train: Sequence[EpisodeTensor],
        validation: Sequence[EpisodeTensor],
        epochs: int,
        out_dir: PathLike,
        seed: int,
        echo: Optional[Dict[str, Any]] = None
    ) -> FitResult:
        """
        Train for a number of epochs, writing versioned checkpoints and logs.

        The initial parameters are saved as epoch 0; later checkpoints follow
        every `checkpoint_every` epochs and after the last one. A write failure
        aborts the run and leaves earlier checkpoints intact.

        Args:
            train: Training episodes
            validation: Validation episodes (may be empty)
            epochs: Number of passes over `train`
            out_dir: Directory for checkpoints, training.csv and validation.csv
            seed: Seed of the per-epoch shuffles
            echo: Run configuration echoed into every artifact

        Returns:
            FitResult with the last checkpoint path and the logged rows

        Raises:
            ConfigurationError: If epochs is negative
            ContractViolation: If episodes do not conform or training data is missing
            PersistenceError: If a checkpoint or log cannot be written
        """
        if epochs < 0:
            raise ConfigurationError(f"epochs must be >= 0, got {epochs}")
        if epochs and not train:
            raise ContractViolation("fit: no training episodes")
        for episode in list(train) + list(validation):
            episode.check(self.config)

        out_dir = Path(out_dir)
        run_echo = dict(echo or {})
        run_echo['seed'] = seed
        log = TrainingLogRepository(out_dir, run_echo)
        shuffles = RngStream(seed).child(SHUFFLE_STREAM)
        batch_size = self.training.batch_size
        steps_per_epoch = max(1, math.ceil(len(train) / batch_size))

        last = self._save(out_dir, 0, 0, run_echo)
        step = 0
        for epoch in range(1, epochs + 1):
            order = shuffles.child(epoch).permutation(len(train))
            for indices in chunked([int(i) for i in order], batch_size):
                lr = exp_decay_lr(step, self.training.lr0, self.training.gamma, steps_per_epoch)
                result = self.step([train[i] for i in indices], lr)
                log.add_step(epoch, step, lr, result.loss, result.mse, result.gd)
                logger.debug(
                    f"epoch {epoch} step {step}: loss={result.loss:.5f} mse={result.mse:.5f} "
                    f"gd={result.gd:.5f} grad_norm={result.grad_norm:.3f} lr={lr:.2e}"
                )
                step += 1

            epoch_rows = log.training_rows[-steps_per_epoch:]
            mean_loss = float(np.mean([row['loss'] for row in epoch_rows]))
            if validation:
                summary = InferenceService(self.network, self.params).validation_summary(validation)
                log.add_validation(epoch, summary)
                logger.info(
                    f"Epoch {epoch}/{epochs}: train loss {mean_loss:.5f}, validation loss {summary['loss']:.5f}, "
                    f"PSNR recon {summary['reconstruction_psnr']:.2f} dB / pred {summary['prediction_psnr']:.2f} dB "
                    f"/ baseline {summary['baseline_psnr']:.2f} dB"
                )
            else:
                logger.info(f"Epoch {epoch}/{epochs}: train loss {mean_loss:.5f}")
            log.flush()
            if epoch % self.training.checkpoint_every == 0 or epoch == epochs:
                last = self._save(out_dir, epoch, step, run_echo)

        log.flush()
        return FitResult(checkpoint=last, trace=log.training_rows, validation=log.validation_rows)

    def _save(self, out_dir: Path, epoch: int, step: int, echo: Dict[str, Any]) -> Path:
        meta = dict(echo)
        meta.update({'epoch': epoch, 'step': step})
        return self.checkpoints.save(self.checkpoints.path_for(out_dir, epoch), self.params, self.config, meta)
