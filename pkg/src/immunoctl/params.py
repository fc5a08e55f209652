"""Model parameter sets, the rearranged-form derivation, and virtual patients.

The dynamics exist in two algebraically equivalent forms: the raw rate-law
form (21 named rate constants) and a rearranged rational form whose grouped
coefficients are named ``a`` through ``w``.  The rearranged coefficients are
always *derived* from a :class:`RawParams`, never edited independently, so the
two forms cannot drift apart.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace
from importlib import resources

import numpy as np

__all__ = [
    "RawParams",
    "ModelParams",
    "PatientSpec",
    "derive_params",
    "load_raw_params",
    "reference_params_path",
    "builtin_patient",
    "BUILTIN_PATIENT_IDS",
]


PARAMS_ENV_VAR = "IMMUNOCTL_PARAMS"


@dataclass(frozen=True)
class RawParams:
    """Rate constants of the 4-state inflammation model (raw form).

    All values are positive in the reference set; a scenario may zero
    individual rates, but ``p_inf`` and ``c_inf`` must stay positive because
    they appear in denominators and as an inhibition scale.
    """

    k_pg: float
    k_pm: float
    s_m: float
    mu_m: float
    k_mp: float
    p_inf: float
    k_pn: float
    s_nr: float
    mu_nr: float
    mu_n: float
    k_np: float
    k_nn: float
    k_nd: float
    k_dn: float
    x_dn: float
    mu_d: float
    s_c: float
    k_cn: float
    k_cnd: float
    mu_c: float
    c_inf: float

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v) or v < 0.0:
                raise ValueError(f"parameter {f.name} must be finite and >= 0, got {v}")
        if self.p_inf <= 0.0:
            raise ValueError("p_inf must be > 0 (pathogen carrying capacity)")
        if self.c_inf <= 0.0:
            raise ValueError("c_inf must be > 0 (anti-inflammatory scale)")


@dataclass(frozen=True)
class ModelParams:
    """Grouped coefficients of the rearranged rational form of the dynamics.

    Derived from a :class:`RawParams` by :func:`derive_params`; ``mu_d``,
    ``mu_c`` and ``s_c`` carry through unchanged.  The source raw set is kept
    so the two forms can be cross-checked.
    """

    a: float
    b: float
    c: float
    d: float
    e: float
    z: float
    g: float
    h: float
    i: float
    j: float
    k: float
    l: float
    m: float
    n: float
    o: float
    p: float
    q: float
    r: float
    s: float
    t: float
    u: float
    v: float
    w: float
    mu_d: float
    mu_c: float
    s_c: float
    raw: RawParams


def derive_params(raw: RawParams) -> ModelParams:
    """Compute the rearranged-form coefficients from the raw rate constants.

    The grouping comes from clearing the inhibition factor
    ``1 + (Ca/c_inf)^2`` out of every Hill term, which turns each saturating
    rate law into a single rational expression with constant coefficients.
    """
    c2 = raw.c_inf * raw.c_inf
    c12 = c2**6
    return ModelParams(
        a=raw.k_pg,
        b=raw.k_pg / raw.p_inf,
        c=raw.k_pm * raw.s_m,
        d=raw.mu_m,
        e=raw.k_mp,
        z=raw.k_pn * c2,
        g=c2,
        h=c2 * raw.s_nr * raw.k_np,
        i=c2 * raw.s_nr * raw.k_nn,
        j=c2 * raw.s_nr * raw.k_nd,
        k=c2 * raw.k_np,
        l=c2 * raw.k_nn,
        m=c2 * raw.k_nd,
        n=raw.mu_nr,
        o=c2 * raw.mu_nr,
        p=raw.mu_n,
        q=c12 * raw.k_dn,
        r=c2 * raw.x_dn,
        s=raw.x_dn,
        t=c12,
        u=c2 * raw.k_cn,
        v=c2 * raw.k_cn * raw.k_cnd,
        w=c2 * raw.k_cnd,
        mu_d=raw.mu_d,
        mu_c=raw.mu_c,
        s_c=raw.s_c,
        raw=raw,
    )


@dataclass(frozen=True)
class PatientSpec:
    """One virtual patient: a raw parameter set plus an initial state."""

    id: str
    raw: RawParams
    x0: np.ndarray  # (P, N, D, Ca) at t=0

    def __post_init__(self):
        x0 = np.asarray(self.x0, dtype=float)
        if x0.shape != (4,):
            raise ValueError("x0 must have shape (4,)")
        if np.any(x0 < 0.0):
            raise ValueError("initial state must lie in the positive octant")
        object.__setattr__(self, "x0", x0)

    @property
    def params(self) -> ModelParams:
        return derive_params(self.raw)


_RAW_NAMES = tuple(f.name for f in fields(RawParams))


def reference_params_path() -> str:
    """Path of the reference parameter file.

    The ``IMMUNOCTL_PARAMS`` environment variable overrides the packaged
    default.
    """
    override = os.environ.get(PARAMS_ENV_VAR)
    if override:
        return override
    return str(resources.files("immunoctl.data").joinpath("reference_params.txt"))


def load_raw_params(path: str | None = None) -> RawParams:
    """Load a :class:`RawParams` from a ``name = value`` text file.

    Lines are one parameter each; ``#`` starts a comment.  Unknown names and
    missing names are both rejected to keep the file trustworthy as the single
    source of the reference set.
    """
    if path is None:
        path = reference_params_path()
    values: dict[str, float] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'name = value', got {line!r}")
            name, _, raw_value = line.partition("=")
            name = name.strip()
            if name not in _RAW_NAMES:
                raise ValueError(f"{path}:{lineno}: unknown parameter {name!r}")
            if name in values:
                raise ValueError(f"{path}:{lineno}: duplicate parameter {name!r}")
            try:
                values[name] = float(raw_value.strip())
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: bad value for {name!r}") from exc
    missing = [n for n in _RAW_NAMES if n not in values]
    if missing:
        raise ValueError(f"{path}: missing parameters: {', '.join(missing)}")
    return RawParams(**values)


# Per-patient overrides of the reference set and initial states.  The same
# six rates differ between patients; everything else comes from the file.
_PATIENT_OVERRIDES = {
    "baseline": {},
    "patient1": dict(
        k_pg=0.5846, k_cn=0.0409, k_nd=0.0242, k_np=0.1211, k_cnd=49.1243, k_nn=0.012
    ),
    "patient2": dict(
        k_pg=0.4746, k_cn=0.0386, k_nd=0.0223, k_np=0.1116, k_cnd=46.3367, k_nn=0.0112
    ),
}

_PATIENT_X0 = {
    "baseline": np.array([0.0, 0.0, 0.0, 0.125]),
    "patient1": np.array([0.5360, 0.0660, 0.0477, 0.1635]),
    "patient2": np.array([1.0017, 0.0711, 0.0732, 0.1314]),
}

BUILTIN_PATIENT_IDS = tuple(sorted(_PATIENT_OVERRIDES))


def builtin_patient(id: str, params_path: str | None = None) -> PatientSpec:
    """Return a built-in virtual patient.

    ``baseline`` rests at the healthy equilibrium; ``patient1`` trends to the
    septic-death outcome and ``patient2`` to the aseptic-death outcome when
    left untreated.
    """
    if id not in _PATIENT_OVERRIDES:
        raise KeyError(f"unknown patient id {id!r}; expected one of {BUILTIN_PATIENT_IDS}")
    reference = load_raw_params(params_path)
    raw = replace(reference, **_PATIENT_OVERRIDES[id])
    return PatientSpec(id=id, raw=raw, x0=_PATIENT_X0[id].copy())
