"""
Constants shared across the episodic memory apps.
"""

# Padding modes for convolutions
PADDING_SAME = 'same'
PADDING_VALID = 'valid'
PADDING_CHOICES = (PADDING_SAME, PADDING_VALID)

# Network modes
MODE_TRAIN = 'train'
MODE_EVAL = 'eval'
MODE_CHOICES = (MODE_TRAIN, MODE_EVAL)

# Matching metrics for the episodic memory
METRIC_COSINE = 'cosine'
METRIC_EUCLIDEAN = 'euclidean'
METRIC_CHOICES = (METRIC_COSINE, METRIC_EUCLIDEAN)

# Dataset splits
SPLIT_TRAIN = 'train'
SPLIT_VALIDATION = 'validation'
SPLIT_CHOICES = (SPLIT_TRAIN, SPLIT_VALIDATION)

# Export formats
EXPORT_CSV = 'csv'
EXPORT_PGM_HEATMAP = 'pgm-heatmap'
EXPORT_CHOICES = (EXPORT_CSV, EXPORT_PGM_HEATMAP)

# Binary artifact headers
CHECKPOINT_MAGIC = b'EPICKPT\x00'
CHECKPOINT_VERSION = 1
MEMORY_MAGIC = b'EPMEM\x00\x00\x00'
MEMORY_VERSION = 1
EPISODE_MAGIC = b'EPIS'
EPISODE_VERSION = 1
MANIFEST_VERSION = 1

MEMORY_SUFFIX = '.epmem'
CHECKPOINT_SUFFIX = '.ckpt'
EPISODE_SUFFIX = '.bin'

# PSNR reported for (near-)identical frames
PSNR_CAP_DB = 100.0
PSNR_MSE_FLOOR = 1e-10
