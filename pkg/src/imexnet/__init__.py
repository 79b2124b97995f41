"""Semi-implicit (IMEX) residual networks on periodic images, with a small numerical laboratory.

Modules: ``tensor`` (periodic convolutions, normalization), ``rng``
(SplitMix64), ``spectral`` (FFT solves of ``(I + h B^T B) Y = R``),
``layers`` (explicit / IMEX / diffusion-reaction steps and networks),
``stability`` (model-problem magnification factors), ``qtips`` (synthetic
dataset), ``autodiff`` and ``train`` (reverse mode, SGD, metrics),
``config``/``formats``/``cli`` (files and the command line).
"""

__version__ = "0.1.0"
