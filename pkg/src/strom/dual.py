"""Vectorized forward-mode dual arithmetic.

A :class:`Dual` wraps a value array together with a tangent array that
carries one extra trailing axis of directional-derivative components.
All elemental kernels are written once against this module; evaluating
them with plain ndarrays gives values only, while seeding ``Dual``
inputs propagates exact directional derivatives through the same code.

Only the operations the kernels need are implemented.  Tangents of
``abs``/``maximum`` at their kinks use the convention ``sign(0) = 0``;
the solvers only ever differentiate away from kinks.
"""

import numpy as np


def _match(tan, val_shape):
    # broadcast a tangent to a (possibly grown) value shape
    target = tuple(val_shape) + (tan.shape[-1],)
    if tan.shape == target:
        return tan
    return np.broadcast_to(tan, target).copy()


def _as_tan(x, like_val, ntan):
    if isinstance(x, Dual):
        return _match(x.tan, np.shape(like_val))
    return np.zeros(np.shape(like_val) + (ntan,))


class Dual:
    __slots__ = ("val", "tan")

    def __init__(self, val, tan):
        self.val = np.asarray(val, dtype=float)
        self.tan = np.asarray(tan, dtype=float)

    @property
    def ntan(self):
        return self.tan.shape[-1]

    @property
    def shape(self):
        return self.val.shape

    def __getitem__(self, idx):
        # indices address value axes only; the tangent axis always stays
        tidx = idx if isinstance(idx, tuple) else (idx,)
        return Dual(self.val[idx], self.tan[tidx + (slice(None),)])

    def copy(self):
        return Dual(self.val.copy(), self.tan.copy())

    def set_where(self, mask, other):
        """In-place masked overwrite; ``other`` may be Dual, array, or scalar."""
        if isinstance(other, Dual):
            self.val[mask] = np.broadcast_to(other.val, self.val.shape)[mask]
            self.tan[mask] = np.broadcast_to(other.tan, self.tan.shape)[mask]
        else:
            self.val[mask] = np.broadcast_to(np.asarray(other), self.val.shape)[mask]
            self.tan[mask] = 0.0
        return self

    # -- arithmetic ---------------------------------------------------
    def __neg__(self):
        return Dual(-self.val, -self.tan)

    def __add__(self, other):
        if isinstance(other, Dual):
            val = self.val + other.val
            return Dual(val, _match(self.tan, val.shape) + _match(other.tan, val.shape))
        val = self.val + np.asarray(other)
        return Dual(val, _match(self.tan, val.shape))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            val = self.val - other.val
            return Dual(val, _match(self.tan, val.shape) - _match(other.tan, val.shape))
        val = self.val - np.asarray(other)
        return Dual(val, _match(self.tan, val.shape))

    def __rsub__(self, other):
        val = np.asarray(other) - self.val
        return Dual(val, -_match(self.tan, val.shape))

    def __mul__(self, other):
        if isinstance(other, Dual):
            val = self.val * other.val
            tan = (
                _match(self.tan, val.shape) * other.val[..., None]
                + self.val[..., None] * _match(other.tan, val.shape)
            )
            return Dual(val, tan)
        other = np.asarray(other)
        val = self.val * other
        return Dual(val, _match(self.tan, val.shape) * other[..., None])

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            inv = 1.0 / other.val
            val = self.val * inv
            tan = (
                _match(self.tan, val.shape)
                - val[..., None] * _match(other.tan, val.shape)
            ) * inv[..., None]
            return Dual(val, tan)
        other = np.asarray(other)
        val = self.val / other
        return Dual(val, _match(self.tan, val.shape) / other[..., None])

    def __rtruediv__(self, other):
        other = np.asarray(other)
        inv = 1.0 / self.val
        val = other * inv
        return Dual(val, -(val * inv)[..., None] * _match(self.tan, val.shape))

    def __pow__(self, p):
        if p == 2:
            return Dual(self.val**2, 2.0 * self.val[..., None] * self.tan)
        return Dual(self.val**p, p * (self.val ** (p - 1))[..., None] * self.tan)


def value(x):
    return x.val if isinstance(x, Dual) else np.asarray(x)


def is_dual(x):
    return isinstance(x, Dual)


def exp(x):
    if isinstance(x, Dual):
        v = np.exp(x.val)
        return Dual(v, v[..., None] * x.tan)
    return np.exp(x)


def sin(x):
    if isinstance(x, Dual):
        return Dual(np.sin(x.val), np.cos(x.val)[..., None] * x.tan)
    return np.sin(x)


def cos(x):
    if isinstance(x, Dual):
        return Dual(np.cos(x.val), -np.sin(x.val)[..., None] * x.tan)
    return np.cos(x)


def sqrt(x):
    if isinstance(x, Dual):
        v = np.sqrt(x.val)
        return Dual(v, (0.5 / v)[..., None] * x.tan)
    return np.sqrt(x)


def absolute(x):
    if isinstance(x, Dual):
        return Dual(np.abs(x.val), np.sign(x.val)[..., None] * x.tan)
    return np.abs(x)


def maximum(a, b):
    av, bv = value(a), value(b)
    if not (isinstance(a, Dual) or isinstance(b, Dual)):
        return np.maximum(av, bv)
    pick_a = av >= bv
    val = np.where(pick_a, av, bv)
    ntan = a.ntan if isinstance(a, Dual) else b.ntan
    ta = _as_tan(a, val, ntan)
    tb = _as_tan(b, val, ntan)
    return Dual(val, np.where(pick_a[..., None], ta, tb))


def stack(parts, axis):
    """Stack along a value axis (negative axes count from the value end)."""
    if not any(isinstance(p, Dual) for p in parts):
        return np.stack(parts, axis=axis)
    ntan = next(p.ntan for p in parts if isinstance(p, Dual))
    vals = [value(p) for p in parts]
    tans = [_as_tan(p, v, ntan) for p, v in zip(parts, vals)]
    vaxis = axis if axis >= 0 else vals[0].ndim + 1 + axis
    return Dual(np.stack(vals, axis=vaxis), np.stack(tans, axis=vaxis))


def einsum(spec, a, b):
    """Two-operand einsum where either operand may be a Dual.

    The tangent axis is appended to the dual operand's subscripts and to
    the output; products of two duals follow the Leibniz rule.
    """
    ins, out = spec.split("->")
    sa, sb = ins.split(",")
    if not isinstance(a, Dual) and not isinstance(b, Dual):
        return np.einsum(spec, a, b, optimize=True)
    val = np.einsum(spec, value(a), value(b), optimize=True)
    tan = None
    if isinstance(a, Dual):
        tan = np.einsum(f"{sa}z,{sb}->{out}z", a.tan, value(b), optimize=True)
    if isinstance(b, Dual):
        t2 = np.einsum(f"{sa},{sb}z->{out}z", value(a), b.tan, optimize=True)
        tan = t2 if tan is None else tan + t2
    return Dual(val, tan)


def expand(x, k=1):
    """Append ``k`` singleton value axes (before the tangent axis)."""
    if isinstance(x, Dual):
        val, tan = x.val, x.tan
        for _ in range(k):
            val = val[..., None]
            tan = np.expand_dims(tan, axis=-2)
        return Dual(val, tan)
    x = np.asarray(x)
    for _ in range(k):
        x = x[..., None]
    return x


def reshape(x, shape):
    """Reshape the value dimensions, keeping the tangent axis last."""
    if isinstance(x, Dual):
        return Dual(x.val.reshape(shape), x.tan.reshape(tuple(shape) + (x.ntan,)))
    return np.asarray(x).reshape(shape)


def seed_batch_identity(val, offset, ntan):
    """Dual over a batch whose tangent is the identity on per-row entries.

    Row ``b`` of ``val`` (all axes past the first flattened to length n)
    gets derivative 1 of entry k in tangent slot ``offset + k``.
    """
    val = np.asarray(val, dtype=float)
    n = int(np.prod(val.shape[1:], dtype=int))
    tan = np.zeros((n, ntan))
    tan[np.arange(n), offset + np.arange(n)] = 1.0
    tan = np.broadcast_to(tan.reshape(val.shape[1:] + (ntan,)), val.shape + (ntan,))
    return Dual(val, tan.copy())
