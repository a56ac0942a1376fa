"""Dense basis network with exact input jets and parameter gradients.

The network maps an encoded input to ``N`` basis values. Input derivatives
are carried forward as a jet: for every differentiation direction the
first and second derivatives of each layer's activations are propagated
with the chain and product rules. Directions are given as input-space
tangents plus (optional) curvatures, so a coordinate map such as a periodic
embedding ``x -> (sin 2 pi x, cos 2 pi x)`` is differentiated exactly.

Parameter gradients of any linear functional of the jet are obtained by a
reverse sweep over the recorded forward tape.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, InputError

ACTIVATIONS = ("tanh", "sin", "identity", "relu")
_SMOOTH = ("tanh", "sin", "identity")


@dataclass
class NetworkParams:
    layer_sizes: tuple
    weights: list          # each (out, in)
    biases: list           # each (out,)
    activation: str = "tanh"
    seed: int | None = None

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise InputError("number of weight/bias arrays does not match layer_sizes")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_sizes[i + 1], self.layer_sizes[i])
            if W.shape != shape or b.shape != (shape[0],):
                raise InputError(f"layer {i}: weight {W.shape}/bias {b.shape} do not match {shape}")

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def flat(self) -> np.ndarray:
        return _flatten(self.weights, self.biases)

    def with_flat(self, vec) -> "NetworkParams":
        Ws, bs = _unflatten(self.layer_sizes, vec)
        return NetworkParams(self.layer_sizes, Ws, bs, self.activation, self.seed)

    def copy(self) -> "NetworkParams":
        return self.with_flat(self.flat())


@dataclass
class ParamGradient:
    weights: list
    biases: list

    def flat(self) -> np.ndarray:
        return _flatten(self.weights, self.biases)

    def __add__(self, other: "ParamGradient") -> "ParamGradient":
        return ParamGradient([a + b for a, b in zip(self.weights, other.weights)],
                             [a + b for a, b in zip(self.biases, other.biases)])

    def scale(self, c: float) -> "ParamGradient":
        return ParamGradient([c * w for w in self.weights], [c * b for b in self.biases])

    @classmethod
    def zeros_like(cls, params: NetworkParams) -> "ParamGradient":
        return cls([np.zeros_like(W) for W in params.weights], [np.zeros_like(b) for b in params.biases])


@dataclass
class JetBundle:
    """Basis values and input derivatives.

    For a batch of ``P`` points: ``values`` is (P, N), ``first`` and
    ``second`` are (P, N, d). A single point drops the leading axis.
    ``second`` is None for first-order jets, ``first`` is None for plain
    evaluations.
    """

    values: np.ndarray
    first: np.ndarray | None = None
    second: np.ndarray | None = None

    @property
    def order(self) -> int:
        return 0 if self.first is None else (1 if self.second is None else 2)

    def combine(self, omega) -> "JetBundle":
        """Jet of the scalar field ``sum_i omega_i f_i``."""
        omega = np.asarray(omega, dtype=np.float64)
        first = None if self.first is None else np.einsum("...nd,n->...d", self.first, omega)
        second = None if self.second is None else np.einsum("...nd,n->...d", self.second, omega)
        return JetBundle(self.values @ omega, first, second)


def _flatten(Ws, bs) -> np.ndarray:
    parts = []
    for W, b in zip(Ws, bs):
        parts.append(W.ravel())
        parts.append(b.ravel())
    return np.concatenate(parts) if parts else np.zeros(0)


def _unflatten(layer_sizes, vec):
    vec = np.asarray(vec, dtype=np.float64).ravel()
    expected = sum(n_in * n_out + n_out for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]))
    if vec.size != expected:
        raise InputError(f"flat vector has {vec.size} entries, expected {expected}")
    Ws, bs = [], []
    pos = 0
    for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        Ws.append(vec[pos:pos + n_in * n_out].reshape(n_out, n_in).copy())
        pos += n_in * n_out
        bs.append(vec[pos:pos + n_out].copy())
        pos += n_out
    return Ws, bs


def init_params(layer_sizes: Sequence[int], seed: int = 0, activation: str = "tanh",
                first_scale: float = 1.0) -> NetworkParams:
    """Glorot-uniform weights, zero biases.

    With ``activation="sin"`` the sine-network scheme is used instead: the
    first layer is uniform in ``+-first_scale / n_in`` and later layers in
    ``+-sqrt(6 / n_in)``, with biases drawn like the weights.
    """
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2:
        raise InputError("need at least an input and an output layer")
    if min(sizes) < 1:
        raise InputError("layer sizes must be positive")
    rng = np.random.default_rng(seed)
    Ws, bs = [], []
    for l, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        if activation == "sin":
            bound = first_scale / n_in if l == 0 else np.sqrt(6.0 / n_in)
            Ws.append(rng.uniform(-bound, bound, size=(n_out, n_in)))
            bs.append(rng.uniform(-bound, bound, size=n_out))
            continue
        bound = np.sqrt(6.0 / (n_in + n_out))
        Ws.append(rng.uniform(-bound, bound, size=(n_out, n_in)))
        bs.append(np.zeros(n_out))
    return NetworkParams(tuple(sizes), Ws, bs, activation, seed)


def glorot_bound(n_in: int, n_out: int) -> float:
    return float(np.sqrt(6.0 / (n_in + n_out)))


def _activate(kind, z, order, need_third):
    # Returns sigma(z) and its first three derivatives (None where unused).
    if kind == "tanh":
        t = np.tanh(z)
        s1 = 1.0 - t * t
        s2 = -2.0 * t * s1 if (order >= 1 or need_third) else None
        s3 = (-2.0 * s1 * s1 + 4.0 * t * t * s1) if need_third else None
        return t, s1, s2, s3
    if kind == "sin":
        sn, cs = np.sin(z), np.cos(z)
        return sn, cs, -sn if (order >= 1 or need_third) else None, -cs if need_third else None
    if kind == "identity":
        zero = np.zeros_like(z)
        return z, np.ones_like(z), zero, zero
    if kind == "relu":
        zero = np.zeros_like(z)
        return np.maximum(z, 0.0), (z > 0).astype(np.float64), zero, zero
    raise ConfigurationError(f"unknown activation {kind!r}")


@dataclass
class Tape:
    order: int
    layers: list = field(default_factory=list)


def _check_inputs(params, X, tangents, curvatures, order):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.n_inputs:
        raise InputError(f"inputs must have shape (P, {params.n_inputs}), got {X.shape}")
    if order not in (0, 1, 2):
        raise InputError("order must be 0, 1 or 2")
    if order == 2 and params.activation not in _SMOOTH:
        raise ConfigurationError(f"second derivatives need a smooth activation, got {params.activation!r}")
    if order >= 1:
        tangents = np.asarray(tangents, dtype=np.float64)
        if tangents.ndim != 3 or tangents.shape[0] != X.shape[0] or tangents.shape[2] != X.shape[1]:
            raise InputError(f"tangents must have shape (P, d, {params.n_inputs}), got {tangents.shape}")
        if order == 2:
            if curvatures is None:
                curvatures = np.zeros_like(tangents)
            curvatures = np.asarray(curvatures, dtype=np.float64)
            if curvatures.shape != tangents.shape:
                raise InputError("curvatures must match the tangents' shape")
        else:
            curvatures = None
    else:
        tangents = curvatures = None
    return X, tangents, curvatures


def forward(params: NetworkParams, X, tangents=None, curvatures=None, order: int = 0,
            record: bool = False):
    """Batched jet forward pass.

    Parameters
    ----------
    X : (P, D) encoded inputs.
    tangents : (P, d, D) input derivative along each of ``d`` directions.
    curvatures : (P, d, D) input second derivative along each direction
        (zero for straight coordinate directions).
    order : 0, 1 or 2.
    record : keep the tape needed by :func:`backward`.

    Returns
    -------
    JetBundle, and the Tape when ``record`` is set.
    """
    X, T, C = _check_inputs(params, X, tangents, curvatures, order)
    tape = Tape(order) if record else None
    a, da, d2a = X, T, C
    last = len(params.weights) - 1
    for l, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ W.T + b
        dz = da @ W.T if order >= 1 else None
        d2z = d2a @ W.T if order >= 2 else None
        entry = {"a": a, "da": da, "d2a": d2a}
        if l < last:
            t, s1, s2, s3 = _activate(params.activation, z, order, record)
            if order >= 1:
                da_next = s1[:, None, :] * dz
            if order >= 2:
                d2a_next = s1[:, None, :] * d2z + s2[:, None, :] * dz * dz
            entry.update(dz=dz, d2z=d2z, s1=s1, s2=s2, s3=s3)
            a = t
            da = da_next if order >= 1 else None
            d2a = d2a_next if order >= 2 else None
        else:
            a, da, d2a = z, dz, d2z
        if record:
            tape.layers.append(entry)
    first = np.transpose(da, (0, 2, 1)) if order >= 1 else None
    second = np.transpose(d2a, (0, 2, 1)) if order >= 2 else None
    bundle = JetBundle(a, first, second)
    return (bundle, tape) if record else bundle


def backward(params: NetworkParams, tape: Tape, adjoints: JetBundle) -> ParamGradient:
    """Gradient w.r.t. parameters of ``<adjoints, jet>`` summed over the batch."""
    order = tape.order
    P = tape.layers[0]["a"].shape[0]
    N = params.n_outputs
    ga = np.asarray(adjoints.values, dtype=np.float64)
    if ga.shape != (P, N):
        raise InputError(f"value adjoints must have shape {(P, N)}, got {ga.shape}")
    gda = gd2a = None
    if order >= 1:
        d = tape.layers[0]["da"].shape[1]
        gda = _adjoint_part(adjoints.first, (P, N, d), "first")
    if order >= 2:
        gd2a = _adjoint_part(adjoints.second, (P, N, d), "second")

    n_layers = len(params.weights)
    gWs = [None] * n_layers
    gbs = [None] * n_layers
    for l in range(n_layers - 1, -1, -1):
        e = tape.layers[l]
        W = params.weights[l]
        if l < n_layers - 1:
            s1, s2, s3 = e["s1"], e["s2"], e["s3"]
            gz = ga * s1
            gdz = gd2z = None
            if order >= 1:
                dz = e["dz"]
                gdz = s1[:, None, :] * gda
                gs1 = np.einsum("pdh,pdh->ph", gda, dz)
                if order >= 2:
                    d2z = e["d2z"]
                    gd2z = s1[:, None, :] * gd2a
                    gdz = gdz + 2.0 * s2[:, None, :] * dz * gd2a
                    gs1 = gs1 + np.einsum("pdh,pdh->ph", gd2a, d2z)
                    gz = gz + np.einsum("pdh,pdh->ph", gd2a, dz * dz) * s3
                gz = gz + gs1 * s2
        else:
            gz, gdz, gd2z = ga, gda, gd2a

        a = e["a"]
        gW = gz.T @ a
        if order >= 1:
            da = e["da"]
            gW += gdz.reshape(-1, gdz.shape[-1]).T @ da.reshape(-1, da.shape[-1])
        if order >= 2:
            d2a = e["d2a"]
            gW += gd2z.reshape(-1, gd2z.shape[-1]).T @ d2a.reshape(-1, d2a.shape[-1])
        gWs[l] = gW
        gbs[l] = gz.sum(axis=0)
        if l > 0:
            ga = gz @ W
            gda = gdz @ W if order >= 1 else None
            gd2a = gd2z @ W if order >= 2 else None
    return ParamGradient(gWs, gbs)


def _adjoint_part(arr, shape, name):
    if arr is None:
        return np.zeros((shape[0], shape[2], shape[1]))
    arr = np.asarray(arr, dtype=np.float64)
    if arr.shape != shape:
        raise InputError(f"{name}-derivative adjoints must have shape {shape}, got {arr.shape}")
    return np.transpose(arr, (0, 2, 1))


def _coordinate_directions(n_inputs, P, diff_coords):
    diff_coords = list(diff_coords)
    for k in diff_coords:
        if not 0 <= k < n_inputs:
            raise InputError(f"coordinate {k} out of range for input width {n_inputs}")
    T = np.zeros((P, len(diff_coords), n_inputs))
    for j, k in enumerate(diff_coords):
        T[:, j, k] = 1.0
    return T


def _as_batch(params, inp):
    x = np.asarray(inp, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != params.n_inputs:
        raise InputError(f"input width must be {params.n_inputs}, got shape {x.shape}")
    return X, single


def eval(params: NetworkParams, inp) -> np.ndarray:  # noqa: A001 - mirrors the operation name
    """Basis values for one input vector (or a (P, D) batch)."""
    X, single = _as_batch(params, inp)
    out = forward(params, X).values
    return out[0] if single else out


def eval_jet(params: NetworkParams, inp, diff_coords, order: int = 1) -> JetBundle:
    """Values and derivatives w.r.t. the listed input coordinates."""
    if order not in (1, 2):
        raise InputError("order must be 1 or 2")
    X, single = _as_batch(params, inp)
    T = _coordinate_directions(params.n_inputs, X.shape[0], diff_coords)
    jet = forward(params, X, T, None, order)
    if single:
        return JetBundle(jet.values[0], jet.first[0],
                         None if jet.second is None else jet.second[0])
    return jet


def backprop_params(params: NetworkParams, inp, diff_coords, order: int, adjoints: JetBundle) -> ParamGradient:
    """Parameter gradient of ``<adjoints, eval_jet(params, inp, diff_coords, order)>``."""
    if order not in (0, 1, 2):
        raise InputError("order must be 0, 1 or 2")
    X, single = _as_batch(params, inp)
    T = _coordinate_directions(params.n_inputs, X.shape[0], diff_coords) if order >= 1 else None
    _, tape = forward(params, X, T, None, order, record=True)
    if single:
        adjoints = JetBundle(
            np.asarray(adjoints.values)[None],
            None if adjoints.first is None else np.asarray(adjoints.first)[None],
            None if adjoints.second is None else np.asarray(adjoints.second)[None],
        )
    return backward(params, tape, adjoints)
