"""Zero-shot cross-lingual self-training for rumour detection on threads.

Submodules: ``corpus`` (data), ``tokenizer`` (shared subwords), ``model``
(classifier, training, pretraining), ``selftrain`` (teacher/student loop),
``evaluation`` (metrics and harnesses) and ``cli``.
"""
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
