"""
End-to-end tests for the epimem subcommands on a tiny corpus and network.
"""

import csv
import io
import tempfile
from pathlib import Path

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from cli.images import quantize
from cli.latents import read_latents
from cli.runner import EXIT_FAILURE, EXIT_IO, EXIT_OK, run
from episodes.repository import EpisodeRepository, ManifestRepository
from episodes.test_generation import corpus_digest
from evaluation.exporters import sidecar_path
from memory.repository import MemoryRepository
from network.repository import read_csv
from network.services import InferenceService

TINY_RUN = """\
# tiny corpus and network for end-to-end runs
frame_size=16
channels=1
sequence_length=4
encoder_length=2
source_frames=8
train_per_class=2
validation_per_class=1
convlstm_widths=2
conv_widths=2
fc_width=4
lstm_width=3
dropout_rate=0.0
"""


def parse_stdout_csv(text: str):
    return list(csv.DictReader(line for line in text.splitlines() if not line.startswith('#')))


class RunnerTest(SimpleTestCase):
    """Test cases for the epimem subcommands end to end"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.tmp = tempfile.TemporaryDirectory()
        cls.root = Path(cls.tmp.name)
        cls.config = cls.root / 'tiny.cfg'
        cls.config.write_text(TINY_RUN)
        cls.data = cls.root / 'corpus'
        cls.ckpt = cls.root / 'ckpt'
        cls.latents = cls.root / 'latents.csv'
        cls.memory = cls.root / 'memory.epmem'
        cls.must('gen-data', '--seed', '7', '--out', str(cls.data))
        cls.must('train', '--data', str(cls.data), '--epochs', '0', '--out', str(cls.ckpt), '--seed', '3')
        cls.must(
            'encode', '--checkpoint', str(cls.ckpt), '--data', str(cls.data), '--split', 'all', '--out', str(cls.latents)
        )
        cls.must('mem-insert', '--memory', str(cls.memory), '--latents', str(cls.latents))
        cls.episode = cls.data / ManifestRepository().load(cls.data).entries[0].path

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()
        super().tearDownClass()

    @classmethod
    def call(cls, *argv, config=True):
        stdout, stderr = io.StringIO(), io.StringIO()
        argv = list(argv) + (['--config', str(cls.config)] if config else [])
        code = run(argv, stdout=stdout, stderr=stderr)
        return code, stdout.getvalue(), stderr.getvalue()

    @classmethod
    def must(cls, *argv):
        code, _, stderr = cls.call(*argv)
        if code != EXIT_OK:
            raise AssertionError(f"epimem {argv[0]} exited with {code}: {stderr}")

    # ------------------------------------------------------------------
    # Pipeline
    # ------------------------------------------------------------------

    def test_gen_data_is_deterministic(self):
        """Test gen-data writes an identical corpus for the same seed"""
        again = self.root / 'corpus-again'
        code, _, _ = self.call('gen-data', '--seed', '7', '--out', str(again))
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(corpus_digest(self.data), corpus_digest(again))

    def test_zero_epoch_training_writes_initial_checkpoint(self):
        """Test zero training epochs still write the epoch-0 checkpoint"""
        self.assertTrue((self.ckpt / 'checkpoint-epoch-0000.ckpt').exists())

    def test_one_epoch_training(self):
        """Test one epoch writes its checkpoint and one validation row"""
        out = self.root / 'ckpt-one'
        code, stdout, _ = self.call('train', '--data', str(self.data), '--epochs', '1', '--out', str(out))
        self.assertEqual(code, EXIT_OK)
        self.assertIn('checkpoint-epoch-0001.ckpt', stdout)
        self.assertEqual(len(read_csv(out / 'validation.csv')), 1)

    def test_encode_writes_every_episode(self):
        """Test encode with --split all writes a latent for every episode"""
        table = read_latents(self.latents)
        self.assertEqual(len(table), 24)
        self.assertEqual(table.dimension, 6)
        self.assertEqual(set(table.splits), {'train', 'validation'})
        self.assertIn('# command=encode', self.latents.read_text())

    def test_query_matches_memory_query(self):
        """Test the query subcommand returns what EpisodicMemory.query returns"""
        code, stdout, _ = self.call(
            'query', '--memory', str(self.memory), '--checkpoint', str(self.ckpt), '--episode', str(self.episode),
            '--top', '3'
        )
        self.assertEqual(code, EXIT_OK)
        rows = parse_stdout_csv(stdout)
        self.assertEqual([row['rank'] for row in rows], ['1', '2', '3'])

        inference = InferenceService.from_checkpoint(self.ckpt)
        episode = EpisodeRepository().load(self.episode)
        expected = MemoryRepository().load(self.memory).query(inference.encode(episode), 3)
        self.assertEqual([int(row['id']) for row in rows], [result.record.id for result in expected])
        for row, result in zip(rows, expected):
            self.assertAlmostEqual(float(row['similarity']), result.similarity, places=12)

    def test_checkpoint_from_config_file(self):
        """Test query reads the checkpoint path from the config file"""
        config = self.root / 'with-checkpoint.cfg'
        config.write_text(TINY_RUN + f'checkpoint={self.ckpt}\n')
        code, stdout, _ = self.call(
            'query', '--memory', str(self.memory), '--episode', str(self.episode), '--config', str(config),
            config=False
        )
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(len(parse_stdout_csv(stdout)), 3)

    def test_static_scene_query(self):
        """Test querying with a single static frame"""
        args = ['query', '--memory', str(self.memory), '--checkpoint', str(self.ckpt), '--episode', str(self.episode)]
        code, stdout, _ = self.call(*args, '--static-frame', '0', '--top', '2')
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(len(parse_stdout_csv(stdout)), 2)
        code, _, stderr = self.call(*args, '--static-frame', '9')
        self.assertEqual(code, EXIT_FAILURE)
        self.assertIn('--static-frame', stderr)

    def test_query_with_pca(self):
        """Test query in the class-mean PCA space"""
        fitted = self.root / 'fitted.epmem'
        code, _, _ = self.call('mem-insert', '--memory', str(fitted), '--latents', str(self.latents), '--fit-pca', '3')
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(MemoryRepository().load(fitted).pca.num_components, 3)
        code, stdout, _ = self.call(
            'query', '--memory', str(fitted), '--checkpoint', str(self.ckpt), '--episode', str(self.episode),
            '--pca', '--metric', 'euclidean'
        )
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(len(parse_stdout_csv(stdout)), 3)

    def test_mem_insert_episode_files(self):
        """Test mem-insert encodes episode files directly"""
        memory = self.root / 'episodes.epmem'
        code, _, _ = self.call(
            'mem-insert', '--memory', str(memory), '--checkpoint', str(self.ckpt),
            '--episode', str(self.episode), '--episode', str(self.episode)
        )
        self.assertEqual(code, EXIT_OK)
        records = MemoryRepository().load(memory).records
        self.assertEqual([record.id for record in records], [0, 1])
        self.assertEqual(records[0].metadata.frame_stop, 2)

    def test_sim_matrix_exports(self):
        """Test sim-matrix CSV and PGM heatmap output"""
        out = self.root / 'matrix.csv'
        code, _, _ = self.call('sim-matrix', '--latents', str(self.latents), '--out', str(out))
        self.assertEqual(code, EXIT_OK)
        rows = read_csv(out)
        self.assertEqual(len(rows), 8)
        self.assertEqual(rows[0]['label'], 'slide-right')

        heatmap = self.root / 'matrix.pgm'
        code, _, _ = self.call('sim-matrix', '--latents', str(self.latents), '--out', str(heatmap), '--format',
                               'pgm-heatmap')
        self.assertEqual(code, EXIT_OK)
        self.assertTrue(heatmap.read_bytes().startswith(b'P5\n8 8\n255\n'))
        self.assertIn('normalization=min-max', sidecar_path(heatmap).read_text())

    def test_eval_retrieval_sweep(self):
        """Test eval-retrieval --sweep writes every configuration"""
        out = self.root / 'sweep.csv'
        code, stdout, _ = self.call('eval-retrieval', '--latents', str(self.latents), '--out', str(out), '--sweep')
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(len(read_csv(out)), 4 * 7)
        self.assertEqual(len(stdout.splitlines()), 4)

    def test_eval_retrieval_holdout(self):
        """Test eval-retrieval against a held-out query set"""
        out = self.root / 'holdout.csv'
        code, _, _ = self.call(
            'eval-retrieval', '--latents', str(self.latents), '--queries', str(self.latents), '--out', str(out)
        )
        self.assertEqual(code, EXIT_OK)
        rows = read_csv(out)
        self.assertEqual(rows[0]['queries'], '24')

    def test_eval_psnr(self):
        """Test eval-psnr writes one row per frame position"""
        out = self.root / 'psnr.csv'
        code, _, _ = self.call('eval-psnr', '--checkpoint', str(self.ckpt), '--data', str(self.data), '--out', str(out))
        self.assertEqual(code, EXIT_OK)
        rows = read_csv(out)
        self.assertEqual(
            [row['kind'] for row in rows], ['reconstruction', 'reconstruction', 'prediction', 'prediction']
        )

    def test_predict_writes_one_image_per_position(self):
        """Test predict writes one image per frame position"""
        first, second = self.root / 'frames-a', self.root / 'frames-b'
        for out in (first, second):
            code, _, _ = self.call('predict', '--checkpoint', str(self.ckpt), '--episode', str(self.episode),
                                   '--out', str(out))
            self.assertEqual(code, EXIT_OK)
        images = sorted(path.name for path in first.glob('*.pgm'))
        self.assertEqual(images, [
            'prediction-03.pgm', 'prediction-04.pgm', 'reconstruction-01.pgm', 'reconstruction-02.pgm'
        ])
        for name in images:
            self.assertEqual((first / name).read_bytes(), (second / name).read_bytes())

        inference = InferenceService.from_checkpoint(self.ckpt)
        reconstruction, _ = inference.generate(EpisodeRepository().load(self.episode).frames[:2])
        pixels = (first / 'reconstruction-01.pgm').read_bytes()[-16 * 16:]
        self.assertEqual(pixels, quantize(reconstruction[0])[:, :, 0].tobytes())

    # ------------------------------------------------------------------
    # Failures
    # ------------------------------------------------------------------

    def test_unknown_subcommand(self):
        """Test unknown subcommand exits with 1"""
        code, _, stderr = self.call('dance', config=False)
        self.assertEqual(code, EXIT_FAILURE)
        self.assertIn('usage: epimem', stderr)

    def test_unknown_flag(self):
        """Test unknown flag exits with 1"""
        code, _, stderr = self.call('gen-data', '--out', str(self.root / 'x'), '--colour', 'red')
        self.assertEqual(code, EXIT_FAILURE)
        self.assertIn('--colour', stderr)

    def test_unknown_config_key(self):
        """Test unknown config key exits with 1"""
        config = self.root / 'bad.cfg'
        config.write_text('learning_rate=0.1\n')
        code, _, stderr = self.call('gen-data', '--out', str(self.root / 'y'), '--config', str(config), config=False)
        self.assertEqual(code, EXIT_FAILURE)
        self.assertIn('learning_rate', stderr)

    def test_checkpoint_config_mismatch(self):
        """Test an episode of another frame size is rejected with exit 1"""
        other = self.root / 'wide-corpus'
        self.call('gen-data', '--out', str(other), '--set', 'frame_size=32')
        episode = other / ManifestRepository().load(other).entries[0].path
        code, _, stderr = self.call('predict', '--checkpoint', str(self.ckpt), '--episode', str(episode),
                                    '--out', str(self.root / 'z'))
        self.assertEqual(code, EXIT_FAILURE)
        self.assertIn('frame shape', stderr)

    def test_corrupt_memory_is_io_failure(self):
        """Test a corrupt memory file exits with 2"""
        broken = self.root / 'broken.epmem'
        broken.write_bytes(self.memory.read_bytes()[:40])
        code, _, _ = self.call('query', '--memory', str(broken), '--checkpoint', str(self.ckpt), '--episode',
                               str(self.episode))
        self.assertEqual(code, EXIT_IO)

    def test_missing_config_file_is_io_failure(self):
        """Test a missing config file exits with 2"""
        code, _, _ = self.call('gen-data', '--out', str(self.root / 'w'), '--config', str(self.root / 'absent.cfg'),
                               config=False)
        self.assertEqual(code, EXIT_IO)

    def test_management_command(self):
        """Test the epimem management command through call_command"""
        stdout = io.StringIO()
        call_command('epimem', 'encode', '--checkpoint', str(self.ckpt), '--data', str(self.data), '--out',
                     str(self.root / 'cmd.csv'), '--config', str(self.config), stdout=stdout)
        self.assertIn('8 latents', stdout.getvalue())
        with self.assertRaises(CommandError):
            call_command('epimem', 'dance', stderr=io.StringIO())
