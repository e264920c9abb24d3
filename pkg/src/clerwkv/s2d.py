"""Space-to-depth machinery: pixel unshuffle/shuffle and the embedding layers.

The index contract for unshuffle with factor r is

    out(y, x, c*r^2 + dy*r + dx) = in(y*r + dy, x*r + dx, c)

i.e. source-channel-major, then raster order within each r x r block.
Shuffle is the exact (bitwise) inverse. Folding a whole block into one token
is what removes the "scanning gap": two pixels of the same block always share
a token, so their interaction costs zero scan distance.
"""

from __future__ import annotations

from . import tensor as T
from .errors import ContractViolation
from .tensor import Tensor


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """(H, W, C) -> (H/r, W/r, C*r^2)."""
    if r < 1:
        raise ContractViolation("shuffle factor must be >= 1")
    H, W, C = x.shape
    if H % r or W % r:
        raise ContractViolation(f"spatial dims {H}x{W} not divisible by r={r}")
    if r == 1:
        return x
    t = T.reshape(x, (H // r, r, W // r, r, C))
    t = T.transpose(t, (0, 2, 4, 1, 3))  # (H/r, W/r, C, dy, dx)
    return T.reshape(t, (H // r, W // r, C * r * r))


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """(H, W, C*r^2) -> (H*r, W*r, C); exact inverse of pixel_unshuffle."""
    if r < 1:
        raise ContractViolation("shuffle factor must be >= 1")
    H, W, CR = x.shape
    if CR % (r * r):
        raise ContractViolation(f"channel count {CR} not divisible by r^2={r * r}")
    if r == 1:
        return x
    C = CR // (r * r)
    t = T.reshape(x, (H, W, C, r, r))
    t = T.transpose(t, (0, 3, 1, 4, 2))  # (H, dy, W, dx, C)
    return T.reshape(t, (H * r, W * r, C))


def ps_ds_embed(x: Tensor, r: int, projection: Tensor, bias: Tensor | None = None) -> Tensor:
    """Pixel unshuffle then 1x1 projection; tokens are the downsampled grid."""
    folded = pixel_unshuffle(x, r)
    if projection.shape[0] != folded.shape[-1]:
        raise ContractViolation(
            f"projection expects {folded.shape[-1]} input channels, has {projection.shape[0]}")
    return T.conv1x1(folded, projection, bias)


def ps_us_embed(x: Tensor, r: int, projection: Tensor, bias: Tensor | None = None) -> Tensor:
    """1x1 projection to C_out*r^2 channels, then pixel shuffle back up."""
    if projection.shape[1] % (r * r):
        raise ContractViolation(
            f"projection output channels {projection.shape[1]} not divisible by r^2")
    return pixel_shuffle(T.conv1x1(x, projection, bias), r)


def token_count(height: int, width: int, r: int) -> int:
    """Sequence length after unshuffle: compaction by exactly r^2."""
    if height % r or width % r:
        raise ContractViolation("dims must be divisible by r")
    return (height // r) * (width // r)
