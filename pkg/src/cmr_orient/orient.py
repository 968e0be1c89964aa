"""Algebra of the 8 axis-aligned orientation operations on 2D slices.

The eight codes form the dihedral group of order 8.  A code is a 3-bit
string b2b1b0:

    b2 = transpose (swap in-plane axes), applied first
    b1 = flip along axis 0 (vertical flip of the displayed image)
    b0 = flip along axis 1 (horizontal flip of the displayed image)

so ``apply_to_grid(code, g) == fliplr^b0(flipud^b1(transpose^b2(g)))``.
This decomposition reproduces the standard corner layouts::

    000 -> 1 2   001 -> 2 1   010 -> 3 4   011 -> 4 3
           3 4          4 3          1 2          2 1
    100 -> 1 3   101 -> 3 1   110 -> 2 4   111 -> 4 2
           2 4          4 2          1 3          3 1

Coordinate conventions: ``x`` is the axis-1 (column) index, ``y`` the
axis-0 (row) index.  Everything here is a pure function on immutable
inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

__all__ = [
    "OrientCode",
    "IndexMap",
    "ALL_CODES",
    "all_codes",
    "as_code",
    "index_map",
    "apply_to_grid",
    "compose",
    "invert",
    "apply_to_volume",
    "update_affine",
]


@dataclass(frozen=True, order=True)
class OrientCode:
    """One of the 8 orientation classes, encoded as 3 bits b2b1b0."""

    bits: int

    def __post_init__(self) -> None:
        if not 0 <= self.bits <= 7:
            raise ValueError(f"orientation code out of range: {self.bits}")

    @classmethod
    def parse(cls, s: str) -> "OrientCode":
        if len(s) != 3 or any(c not in "01" for c in s):
            raise ValueError(f"not a 3-bit orientation code: {s!r}")
        return cls(int(s, 2))

    def __str__(self) -> str:
        return format(self.bits, "03b")

    def __repr__(self) -> str:
        return f"OrientCode({self})"

    @property
    def flip_x(self) -> bool:
        """b0: flip along axis 1 (horizontal)."""
        return bool(self.bits & 1)

    @property
    def flip_y(self) -> bool:
        """b1: flip along axis 0 (vertical)."""
        return bool(self.bits & 2)

    @property
    def transposed(self) -> bool:
        """b2: in-plane axes swapped."""
        return bool(self.bits & 4)


CodeLike = Union[OrientCode, str, int]

ALL_CODES: tuple[OrientCode, ...] = tuple(OrientCode(i) for i in range(8))


def all_codes() -> list[OrientCode]:
    """The 8 codes in row order 000..111."""
    return list(ALL_CODES)


def as_code(code: CodeLike) -> OrientCode:
    """Coerce a string / int / OrientCode to OrientCode."""
    if isinstance(code, OrientCode):
        return code
    if isinstance(code, str):
        return OrientCode.parse(code)
    if isinstance(code, (int, np.integer)):
        return OrientCode(int(code))
    raise TypeError(f"cannot interpret {code!r} as an orientation code")


@dataclass(frozen=True)
class IndexMap:
    """Source-from-target index map of one orientation operation.

    ``(xs, ys) = permutation @ (xt, yt) + offsets`` with x = axis-1 index
    and y = axis-0 index; z is untouched.  The map is a bijection from the
    target lattice {0..sx'-1} x {0..sy'-1} onto the source lattice.
    """

    permutation: np.ndarray  # 2x2 signed permutation, int
    offsets: np.ndarray  # length-2, int, in voxels
    src_size: tuple[int, int]  # (sx, sy) of the source
    dst_size: tuple[int, int]  # (sx', sy') of the target

    def source_of(self, x, y):
        """Map target indices (arrays ok) to source indices (xs, ys)."""
        x = np.asarray(x)
        y = np.asarray(y)
        p = self.permutation
        o = self.offsets
        xs = p[0, 0] * x + p[0, 1] * y + o[0]
        ys = p[1, 0] * x + p[1, 1] * y + o[1]
        return xs, ys

    def inverse(self) -> "IndexMap":
        p = self.permutation
        pinv = np.round(np.linalg.inv(p)).astype(int)
        oinv = -pinv @ self.offsets
        return IndexMap(pinv, oinv, self.dst_size, self.src_size)


def _check_sizes(sx: int, sy: int) -> None:
    if sx < 1 or sy < 1:
        raise ValueError(f"sizes must be positive, got sx={sx}, sy={sy}")


def index_map(code: CodeLike, sx: int, sy: int) -> IndexMap:
    """Source-from-target index map for `code` on an sx-by-sy source.

    sx counts voxels along x (axis 1), sy along y (axis 0).
    """
    _check_sizes(sx, sy)
    c = as_code(code)
    # Target sizes (transpose swaps the in-plane extents).
    sxt, syt = (sy, sx) if c.transposed else (sx, sy)
    # Walk the target index back through flip-x, flip-y, then transpose.
    # x' = sxt-1-x if b0;  y' = syt-1-y if b1;  (xs,ys) = (y',x') if b2.
    ax = -1 if c.flip_x else 1
    bx = sxt - 1 if c.flip_x else 0
    ay = -1 if c.flip_y else 1
    by = syt - 1 if c.flip_y else 0
    if c.transposed:
        perm = np.array([[0, ay], [ax, 0]])
        off = np.array([by, bx])
    else:
        perm = np.array([[ax, 0], [0, ay]])
        off = np.array([bx, by])
    return IndexMap(perm, off, (sx, sy), (sxt, syt))


def apply_to_grid(code: CodeLike, grid) -> np.ndarray:
    """Apply an orientation operation to a 2D array.

    Element values are preserved; output dims swap when b2 is set.
    """
    g = np.asarray(grid)
    if g.ndim != 2 or g.size == 0:
        raise ValueError(f"expected a nonempty 2D grid, got shape {g.shape}")
    c = as_code(code)
    out = g
    if c.transposed:
        out = out.T
    if c.flip_y:
        out = out[::-1, :]
    if c.flip_x:
        out = out[:, ::-1]
    return np.ascontiguousarray(out)


def _build_group_tables() -> tuple[dict[tuple[int, int], int], dict[int, int]]:
    # Compose by matching the action on an asymmetric labeled probe grid.
    probe = np.arange(12).reshape(3, 4)
    action = {c.bits: apply_to_grid(c, probe) for c in ALL_CODES}
    comp: dict[tuple[int, int], int] = {}
    for a in ALL_CODES:
        for b in ALL_CODES:
            seq = apply_to_grid(a, apply_to_grid(b, probe))
            for c in ALL_CODES:
                if action[c.bits].shape == seq.shape and np.array_equal(
                    action[c.bits], seq
                ):
                    comp[(a.bits, b.bits)] = c.bits
                    break
            else:  # pragma: no cover - group closure guarantees a match
                raise AssertionError("composition fell outside the group")
    inv = {a: b for (a, b), r in comp.items() if r == 0 and comp[(b, a)] == 0}
    return comp, inv


_COMPOSE, _INVERT = _build_group_tables()


def compose(a: CodeLike, b: CodeLike) -> OrientCode:
    """Code of applying `b` first, then `a`:

    ``apply_to_grid(compose(a, b), g) == apply_to_grid(a, apply_to_grid(b, g))``
    """
    return OrientCode(_COMPOSE[(as_code(a).bits, as_code(b).bits)])


def invert(code: CodeLike) -> OrientCode:
    """The code undoing `code`: compose(invert(c), c) == 000."""
    return OrientCode(_INVERT[as_code(code).bits])


def update_affine(code: CodeLike, affine, sx: int, sy: int) -> np.ndarray:
    """Rewrite a 4x4 voxel->world affine so world coordinates survive
    the in-plane permutation of `code` on an sx-by-sy (x-by-y) slice stack.

    Affine columns follow array axes: column 0 multiplies the axis-0
    (y) index, column 1 the axis-1 (x) index, column 2 the z index.
    """
    a = np.asarray(affine, dtype=float)
    if a.shape != (4, 4):
        raise ValueError(f"affine must be 4x4, got {a.shape}")
    if abs(np.linalg.det(a)) < 1e-12:
        raise ValueError("affine is singular")
    m = index_map(code, sx, sy)
    # Old (row, col) from new (row, col): rows are y, cols are x.
    t = np.eye(4)
    # x = col -> affine axis 1; y = row -> affine axis 0.
    p = m.permutation
    o = m.offsets
    t[1, 1], t[1, 0] = p[0, 0], p[0, 1]  # xs from (xt, yt)
    t[0, 1], t[0, 0] = p[1, 0], p[1, 1]  # ys from (xt, yt)
    t[1, 3] = o[0]
    t[0, 3] = o[1]
    return a @ t


def apply_to_volume(code: CodeLike, vol):
    """Apply an orientation operation to every z-slice of a Volume.

    Voxel values are permuted (histogram preserved exactly), the affine is
    rewritten per :func:`update_affine`, and in-plane spacing entries swap
    for transpose-containing codes.
    """
    from .volume import Volume  # local import to avoid a cycle

    if not isinstance(vol, Volume):
        raise TypeError("apply_to_volume expects a Volume")
    c = as_code(code)
    v = vol.voxels
    out = v
    if c.transposed:
        out = np.swapaxes(out, 0, 1)
    if c.flip_y:
        out = out[::-1]
    if c.flip_x:
        out = out[:, ::-1]
    out = np.ascontiguousarray(out)
    sy, sx = v.shape[0], v.shape[1]
    new_affine = update_affine(c, vol.affine, sx, sy)
    spacing = list(vol.spacing)
    if c.transposed:
        spacing[0], spacing[1] = spacing[1], spacing[0]
    return vol.replace(voxels=out, affine=new_affine, spacing=tuple(spacing))
