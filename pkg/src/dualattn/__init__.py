"""Dual-attention text-to-image GAN on a small second-order autodiff engine.

Modules: ``tensor`` (autodiff), ``nn`` (layers and parameter registry),
``attention`` (channel/pixel attention and CAdaILN), ``networks``, ``losses``,
``data`` (synthetic captioned shapes), ``trainer``, ``checkpoint``,
``gradcheck`` and ``cli``.
"""

__version__ = "0.1.0"

from .kernels import BACKEND as KERNEL_BACKEND

__all__ = ["__version__", "KERNEL_BACKEND"]
