"""marblevad: a small, self-contained voice activity detection stack.

Everything runs on the CPU from plain numpy: WAV ingestion and synthetic
corpora, MFCC / log-mel front ends, a reverse-mode autodiff engine sized to
the model, the separable-convolution VAD network itself, the training
recipe, overlapped sliding-window inference with median/mean smoothing, and
frame-level ROC evaluation.
"""

__version__ = "0.1.0"
