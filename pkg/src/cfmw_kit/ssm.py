"""State-space sequence machinery.

Covers the continuous diagonal model, zero-order-hold discretization, the
sequential recurrence, the equivalent structured convolution kernel, the
input-dependent selective scan, and the four-direction 2-D selective scan.

Conventions fixed here:

* The evolution operator is stored as a diagonal (one coefficient per state),
  so discretization is an elementwise exponential.
* The initial hidden state is always zero.
* The input-dependent projections are affine per token:
  ``delta = softplus(W_d x + u_d)``, ``B = W_b x + u_b``, ``C = W_c x + u_c``.
* Multiply counts are tracked through an optional :class:`OpCounter`, and the
  closed-form count functions below must agree exactly with the instrumented
  counts (this is tested).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import SeededRng, check_finite, sigmoid, softplus

__all__ = [
    "OpCounter",
    "ContinuousSsm",
    "DiscreteSsm",
    "SelectiveSsmParams",
    "Ss2dParams",
    "discretize",
    "scan",
    "kernel",
    "apply_kernel",
    "selective_scan",
    "selective_scan_input_grad",
    "ss2d",
    "save_scan_params",
    "load_scan_params",
    "scan_mac_count",
    "selective_scan_mac_count",
    "ss2d_mac_count",
    "softplus_inverse",
]

# Below this magnitude of delta*a the ZOH input factor is taken at its limit;
# avoids catastrophic cancellation in (exp(z) - 1) / z.
ZOH_SERIES_EPS = 1e-8


class OpCounter:
    """Accumulates floating multiply counts for complexity assertions."""

    __slots__ = ("macs",)

    def __init__(self):
        self.macs = 0

    def add(self, n: int) -> None:
        self.macs += int(n)


def _zoh_phi(z: np.ndarray) -> np.ndarray:
    """(exp(z) - 1) / z with the removable singularity evaluated at its limit."""
    z = np.asarray(z, dtype=np.float64)
    small = np.abs(z) < ZOH_SERIES_EPS
    safe = np.where(small, 1.0, z)
    return np.where(small, 1.0, np.expm1(z) / safe)


def _zoh_phi_prime(z: np.ndarray) -> np.ndarray:
    """Derivative of the ZOH factor, series-evaluated near zero."""
    z = np.asarray(z, dtype=np.float64)
    small = np.abs(z) < 1e-4
    safe = np.where(small, 1.0, z)
    direct = (np.exp(z) * (z - 1.0) + 1.0) / (safe * safe)
    series = 0.5 + z / 3.0 + (z * z) / 8.0
    return np.where(small, series, direct)


def softplus_inverse(y: float) -> float:
    """u such that softplus(u) == y, for y > 0."""
    if y <= 0:
        raise ValueError("softplus output is strictly positive")
    return float(y) if y > 30.0 else float(np.log(np.expm1(y)))


def _vector(v, n_name: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size < 1:
        raise ValueError(f"{n_name} must be a nonempty 1-D array")
    return check_finite(v, n_name)


@dataclass(frozen=True)
class ContinuousSsm:
    """Diagonal continuous model: h' = a * h + b * x, y = <c, h>."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        a = _vector(self.a, "a")
        b = _vector(self.b, "b")
        c = _vector(self.c, "c")
        if not (a.size == b.size == c.size):
            raise ValueError("a, b, c must share the state size")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)

    @property
    def n_state(self) -> int:
        return self.a.size

    @classmethod
    def random(cls, n_state: int, rng: SeededRng) -> "ContinuousSsm":
        """Stable random model: evolution coefficients strictly negative."""
        a = -(0.1 + 2.0 * rng.uniform(n_state))
        return cls(a=a, b=rng.normal(n_state), c=rng.normal(n_state))


@dataclass(frozen=True)
class DiscreteSsm:
    """Discretized model: h_t = a_bar * h_{t-1} + b_bar * x_t, y_t = <c, h_t>."""

    a_bar: np.ndarray
    b_bar: np.ndarray
    c: np.ndarray
    delta: float

    def __post_init__(self):
        a_bar = _vector(self.a_bar, "a_bar")
        b_bar = _vector(self.b_bar, "b_bar")
        c = _vector(self.c, "c")
        if not (a_bar.size == b_bar.size == c.size):
            raise ValueError("a_bar, b_bar, c must share the state size")
        if np.any(a_bar <= 0.0):
            # exp(delta * a) of a real diagonal is always positive.
            raise ValueError("a_bar entries must be positive")
        if not self.delta > 0.0:
            raise ValueError("delta must be positive")
        object.__setattr__(self, "a_bar", a_bar)
        object.__setattr__(self, "b_bar", b_bar)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "delta", float(self.delta))

    @property
    def n_state(self) -> int:
        return self.a_bar.size


def discretize(m: ContinuousSsm, delta: float) -> DiscreteSsm:
    """Zero-order-hold transform of a continuous model with step ``delta``.

    Per state: a_bar = exp(delta a) and b_bar = ((exp(delta a) - 1) / (delta a))
    * delta * b, the latter evaluated at its limit delta * b when
    |delta a| < 1e-8.
    """
    if not delta > 0.0:
        raise ValueError("delta must be positive")
    z = delta * m.a
    a_bar = np.exp(z)
    b_bar = _zoh_phi(z) * (delta * m.b)
    return DiscreteSsm(a_bar=a_bar, b_bar=b_bar, c=m.c.copy(), delta=float(delta))


def scan(m: DiscreteSsm, x: np.ndarray, counter: OpCounter | None = None) -> np.ndarray:
    """Run the recurrence over a length-L scalar sequence from h_0 = 0."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size < 1:
        raise ValueError("scan needs a nonempty 1-D input sequence")
    length = x.size
    n = m.n_state
    h = np.zeros(n, dtype=np.float64)
    y = np.empty(length, dtype=np.float64)
    for t in range(length):
        h = m.a_bar * h + m.b_bar * x[t]
        y[t] = m.c @ h
    if counter is not None:
        counter.add(scan_mac_count(length, n))
    return y


def kernel(m: DiscreteSsm, length: int) -> np.ndarray:
    """Structured convolution taps: tap_j = sum_i c_i * a_bar_i**j * b_bar_i."""
    if length < 1:
        raise ValueError("kernel length must be >= 1")
    powers = m.a_bar[None, :] ** np.arange(length, dtype=np.float64)[:, None]
    return powers @ (m.c * m.b_bar)


def apply_kernel(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Causal convolution y_t = sum_{j<=t} taps_j * x_{t-j}."""
    x = np.asarray(x, dtype=np.float64)
    taps = np.asarray(taps, dtype=np.float64)
    if x.ndim != 1 or taps.ndim != 1:
        raise ValueError("apply_kernel expects 1-D sequences")
    if x.size != taps.size:
        raise ValueError(f"length mismatch: x has {x.size}, taps has {taps.size}")
    return np.convolve(x, taps)[: x.size]


@dataclass(frozen=True)
class SelectiveSsmParams:
    """Input-dependent scan parameters for D channels and N states.

    Fields:
        a:        (D, N) per-channel evolution coefficients.
        w_delta:  (D, D) and u_delta (D,) -- affine map to the per-channel
                  step pre-activation; the step itself is softplus of it.
        w_b, u_b: (N, D) / (N,) affine map to the per-token input projection.
        w_c, u_c: (N, D) / (N,) affine map to the per-token output projection.
    """

    a: np.ndarray
    w_delta: np.ndarray
    u_delta: np.ndarray
    w_b: np.ndarray
    u_b: np.ndarray
    w_c: np.ndarray
    u_c: np.ndarray

    def __post_init__(self):
        a = check_finite(np.asarray(self.a, dtype=np.float64), "a")
        if a.ndim != 2:
            raise ValueError("a must be (channels, states)")
        d, n = a.shape
        expect = {
            "w_delta": (d, d),
            "u_delta": (d,),
            "w_b": (n, d),
            "u_b": (n,),
            "w_c": (n, d),
            "u_c": (n,),
        }
        for name, shape in expect.items():
            arr = check_finite(np.asarray(getattr(self, name), dtype=np.float64), name)
            if arr.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "a", a)

    @property
    def d_channels(self) -> int:
        return self.a.shape[0]

    @property
    def n_state(self) -> int:
        return self.a.shape[1]

    @classmethod
    def random(cls, d_channels: int, n_state: int, rng: SeededRng) -> "SelectiveSsmParams":
        d, n = d_channels, n_state
        sd = 1.0 / np.sqrt(d)
        return cls(
            a=-(0.1 + 2.0 * rng.uniform(d * n).reshape(d, n)),
            w_delta=rng.normal(d * d).reshape(d, d) * sd,
            u_delta=rng.normal(d) * 0.5,
            w_b=rng.normal(n * d).reshape(n, d) * sd,
            u_b=rng.normal(n) * 0.5,
            w_c=rng.normal(n * d).reshape(n, d) * sd,
            u_c=rng.normal(n) * 0.5,
        )

    @classmethod
    def frozen(cls, m: ContinuousSsm, d_channels: int, delta: float) -> "SelectiveSsmParams":
        """Constant projections reproducing ``discretize(m, delta)`` per channel."""
        if not delta > 0.0:
            raise ValueError("delta must be positive")
        d, n = d_channels, m.n_state
        return cls(
            a=np.tile(m.a, (d, 1)),
            w_delta=np.zeros((d, d)),
            u_delta=np.full(d, softplus_inverse(delta)),
            w_b=np.zeros((n, d)),
            u_b=m.b.copy(),
            w_c=np.zeros((n, d)),
            u_c=m.c.copy(),
        )

    def to_tensors(self) -> dict[str, np.ndarray]:
        return {
            "a": self.a,
            "w_delta": self.w_delta,
            "u_delta": self.u_delta,
            "w_b": self.w_b,
            "u_b": self.u_b,
            "w_c": self.w_c,
            "u_c": self.u_c,
        }

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray]) -> "SelectiveSsmParams":
        return cls(**{k: tensors[k] for k in
                      ("a", "w_delta", "u_delta", "w_b", "u_b", "w_c", "u_c")})


def _selective_forward(x: np.ndarray, p: SelectiveSsmParams):
    """Shared forward pass; returns intermediates needed by the backward pass."""
    length = x.shape[0]
    s = x @ p.w_delta.T + p.u_delta                      # (L, D)
    delta = softplus(s)                                  # (L, D), > 0
    b_seq = x @ p.w_b.T + p.u_b                          # (L, N)
    c_seq = x @ p.w_c.T + p.u_c                          # (L, N)
    z = delta[:, :, None] * p.a[None, :, :]              # (L, D, N)
    a_bar = np.exp(z)
    phi = _zoh_phi(z)
    d_b = delta[:, :, None] * b_seq[:, None, :]          # (L, D, N)
    b_bar = phi * d_b
    h = np.zeros((p.d_channels, p.n_state), dtype=np.float64)
    hs = np.empty((length, p.d_channels, p.n_state), dtype=np.float64)
    y = np.empty((length, p.d_channels), dtype=np.float64)
    for t in range(length):
        h = a_bar[t] * h + b_bar[t] * x[t][:, None]
        hs[t] = h
        y[t] = h @ c_seq[t]
    return y, s, delta, b_seq, c_seq, z, a_bar, phi, d_b, b_bar, hs


def selective_scan(x: np.ndarray, p: SelectiveSsmParams,
                   counter: OpCounter | None = None) -> np.ndarray:
    """Input-dependent scan over an (L, D) token sequence.

    Per channel d, with token-dependent step delta_{t,d} and projections
    B_t, C_t:

        h_t = exp(delta_{t,d} a_d) * h_{t-1} + b_bar_{t,d} * x_{t,d}
        y_{t,d} = <C_t, h_t>

    where b_bar uses the same zero-order-hold factor as :func:`discretize`.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError("selective_scan needs a nonempty (L, D) sequence")
    if x.shape[1] != p.d_channels:
        raise ValueError(f"channel mismatch: x has {x.shape[1]}, params {p.d_channels}")
    y = _selective_forward(x, p)[0]
    if counter is not None:
        counter.add(selective_scan_mac_count(x.shape[0], p.d_channels, p.n_state))
    return y


def selective_scan_input_grad(x: np.ndarray, p: SelectiveSsmParams) -> np.ndarray:
    """Hand-written gradient of sum(selective_scan(x, p)) with respect to x.

    Reverse-mode over the recurrence; used to validate the forward pass
    against central finite differences.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != p.d_channels:
        raise ValueError("x must be (L, D) matching the params")
    _, s, delta, b_seq, c_seq, z, a_bar, phi, d_b, b_bar, hs = _selective_forward(x, p)
    length = x.shape[0]
    g_x = np.zeros_like(x)
    g_s = np.zeros_like(s)
    g_b_seq = np.zeros_like(b_seq)
    g_c_seq = np.zeros_like(c_seq)
    gh = np.zeros((p.d_channels, p.n_state), dtype=np.float64)
    phi_p = _zoh_phi_prime(z)
    for t in range(length - 1, -1, -1):
        gh = gh + c_seq[t][None, :]                  # dL/dy_t = 1 for every (t, d)
        g_c_seq[t] = hs[t].sum(axis=0)
        h_prev = hs[t - 1] if t > 0 else np.zeros_like(gh)
        g_abar = gh * h_prev
        g_bbar = gh * x[t][:, None]
        g_x[t] += (gh * b_bar[t]).sum(axis=1)
        g_z = g_abar * a_bar[t] + g_bbar * d_b[t] * phi_p[t]
        g_db = g_bbar * phi[t]
        g_delta = (g_z * p.a).sum(axis=1) + (g_db * b_seq[t][None, :]).sum(axis=1)
        g_b_seq[t] = (g_db * delta[t][:, None]).sum(axis=0)
        g_s[t] = g_delta * sigmoid(s[t])
        gh = a_bar[t] * gh
    g_x += g_s @ p.w_delta + g_b_seq @ p.w_b + g_c_seq @ p.w_c
    return g_x


@dataclass(frozen=True)
class Ss2dParams:
    """One selective-scan parameter set per 2-D traversal direction."""

    row_fwd: SelectiveSsmParams
    row_bwd: SelectiveSsmParams
    col_fwd: SelectiveSsmParams
    col_bwd: SelectiveSsmParams

    def __post_init__(self):
        d = self.row_fwd.d_channels
        n = self.row_fwd.n_state
        for name in ("row_bwd", "col_fwd", "col_bwd"):
            q = getattr(self, name)
            if q.d_channels != d or q.n_state != n:
                raise ValueError("all four directions must share (D, N)")

    @property
    def d_channels(self) -> int:
        return self.row_fwd.d_channels

    @property
    def n_state(self) -> int:
        return self.row_fwd.n_state

    @classmethod
    def random(cls, d_channels: int, n_state: int, rng: SeededRng) -> "Ss2dParams":
        return cls(*(SelectiveSsmParams.random(d_channels, n_state, rng)
                     for _ in range(4)))

    def to_tensors(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for name in ("row_fwd", "row_bwd", "col_fwd", "col_bwd"):
            for key, arr in getattr(self, name).to_tensors().items():
                out[f"{name}.{key}"] = arr
        return out

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray]) -> "Ss2dParams":
        parts = {}
        for name in ("row_fwd", "row_bwd", "col_fwd", "col_bwd"):
            sub = {k.split(".", 1)[1]: v for k, v in tensors.items()
                   if k.startswith(name + ".")}
            parts[name] = SelectiveSsmParams.from_tensors(sub)
        return cls(**parts)


def ss2d(fmap: np.ndarray, p: Ss2dParams, counter: OpCounter | None = None) -> np.ndarray:
    """Four-direction 2-D selective scan over an (H, W, D) feature map.

    The map is flattened in row-major forward/backward and column-major
    forward/backward order; each order is scanned with its own parameters,
    un-flattened, and the four results are summed as
    (row_fwd + row_bwd) + (col_fwd + col_bwd).
    """
    fmap = np.asarray(fmap, dtype=np.float64)
    if fmap.ndim != 3:
        raise ValueError("ss2d expects an (H, W, D) feature map")
    h, w, d = fmap.shape
    if d != p.d_channels:
        raise ValueError(f"channel mismatch: map has {d}, params {p.d_channels}")
    row = fmap.reshape(h * w, d)
    col = fmap.transpose(1, 0, 2).reshape(h * w, d)

    y_rf = selective_scan(row, p.row_fwd, counter).reshape(h, w, d)
    y_rb = selective_scan(row[::-1], p.row_bwd, counter)[::-1].reshape(h, w, d)
    y_cf = selective_scan(col, p.col_fwd, counter).reshape(w, h, d).transpose(1, 0, 2)
    y_cb = (selective_scan(col[::-1], p.col_bwd, counter)[::-1]
            .reshape(w, h, d).transpose(1, 0, 2))
    return (y_rf + y_rb) + (y_cf + y_cb)


def save_scan_params(p: SelectiveSsmParams | Ss2dParams, directory) -> None:
    """Store parameter tensors as TSR1 files plus a role-naming manifest."""
    from pathlib import Path

    from .tensor_io import write_manifest, write_tensor

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    kind = "ss2d" if isinstance(p, Ss2dParams) else "selective"
    manifest: dict[str, str] = {"meta.kind": kind}
    for key, arr in p.to_tensors().items():
        fname = key + ".tsr"
        write_tensor(directory / fname, arr)
        manifest[f"tensor.{key}"] = fname
    write_manifest(directory / "manifest.txt", manifest)


def load_scan_params(directory) -> SelectiveSsmParams | Ss2dParams:
    from pathlib import Path

    from .tensor_io import read_manifest, read_tensor

    directory = Path(directory)
    manifest = read_manifest(directory / "manifest.txt")
    tensors = {key[len("tensor."):]: read_tensor(directory / value)
               for key, value in manifest.items() if key.startswith("tensor.")}
    kind = manifest.get("meta.kind")
    if kind == "ss2d":
        return Ss2dParams.from_tensors(tensors)
    if kind == "selective":
        return SelectiveSsmParams.from_tensors(tensors)
    raise ValueError(f"unknown parameter kind {kind!r}")


def scan_mac_count(length: int, n_state: int) -> int:
    """Exact multiply count of :func:`scan`: 3 N per step."""
    if length < 1 or n_state < 1:
        raise ValueError("sizes must be positive")
    return 3 * n_state * length


def selective_scan_mac_count(length: int, d_channels: int, n_state: int) -> int:
    """Exact multiply count of :func:`selective_scan`.

    Per token: D^2 (step projection) + 2 N D (input/output projections)
    + 4 N D (discretization: z, phi, delta*B, b_bar) + 3 N D (recurrence
    and output dot).
    """
    if length < 1 or d_channels < 1 or n_state < 1:
        raise ValueError("sizes must be positive")
    per_token = d_channels * d_channels + 9 * n_state * d_channels
    return per_token * length


def ss2d_mac_count(h: int, w: int, d_channels: int, n_state: int) -> int:
    """Exact multiply count of :func:`ss2d`: four directional scans."""
    return 4 * selective_scan_mac_count(h * w, d_channels, n_state)
