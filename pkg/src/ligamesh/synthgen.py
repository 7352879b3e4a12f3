"""Deterministic synthetic bones, landmark ground truth and test primitives.

Bones are closed capsule-like tubes along +z, distal tip at z = 0.  The
cross-section is slightly egg-shaped and the shaft bowed, so neither axis
orientation nor roll is symmetric.  Each sample perturbs the radius with
axial sinusoids ``sin((k + 1) * pi * t)`` weighted by per-sample
coefficients; vertex positions are linear in those coefficients.

Randomness comes from numpy's PCG64 bit generator and only its ``random()``
doubles are consumed.  Coefficients use stratified normal quantiles so the
family's empirical variance tracks the nominal one even for small counts.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from statistics import NormalDist

import numpy as np

from .errors import ConfigInvalid
from .mesh.core import TriMesh
from .mesh.landmarks import LandmarkSet, site_label

DEFAULT_RATIOS = {
    "radius": {"DOB": 0.08, "DOAC": 0.13, "AB": 0.25, "CBD": 0.36, "CBP": 0.56, "POC": 0.80},
    "ulna": {"DOB": 0.10, "DOAC": 0.16, "AB": 0.30, "CBD": 0.46, "CBP": 0.66, "POC": 0.76},
}


@dataclass
class SynthFamilyConfig:
    count: int = 18
    base_length: float = 200.0
    base_radius: float = 12.0
    mode_count: int = 2
    mode_amplitudes: list[float] = field(default_factory=lambda: [3.0, 2.0])
    landmark_ratios: dict[str, float] | None = None
    seed: int = 0
    bone: str = "radius"
    side: str = "right"
    landmark_angle: float | None = None
    n_around: int = 40
    n_rings: int = 74
    ellipticity: float = 0.18
    asymmetry: float = 0.08
    flare: float = 0.35
    bow: float | None = None
    length_jitter: float = 0.0

    def __post_init__(self):
        if self.landmark_ratios is None:
            self.landmark_ratios = dict(DEFAULT_RATIOS[self.bone])
        if self.landmark_angle is None:
            self.landmark_angle = 0.0 if self.bone == "radius" else float(np.pi)
        if self.bow is None:
            self.bow = 3.0 if self.bone == "radius" else -3.0
        amps = np.atleast_1d(np.asarray(self.mode_amplitudes, dtype=np.float64))
        if amps.size == 1 and self.mode_count > 1:
            amps = np.repeat(amps, self.mode_count)
        self.mode_amplitudes = [float(a) for a in amps[: self.mode_count]]
        self.validate()

    def validate(self) -> None:
        if self.count < 2:
            raise ConfigInvalid("count must be >= 2")
        if self.base_length <= 2 * self.base_radius or self.base_radius <= 0:
            raise ConfigInvalid("need base_length > 2 * base_radius > 0")
        if self.mode_count < 0 or len(self.mode_amplitudes) != self.mode_count:
            raise ConfigInvalid("mode_amplitudes must provide one amplitude per mode")
        if any(not 0 <= a < self.base_radius / 2 for a in self.mode_amplitudes):
            raise ConfigInvalid("mode amplitudes must lie in [0, base_radius / 2)")
        for label, r in self.landmark_ratios.items():
            if not 0.0 < r < 1.0:
                raise ConfigInvalid(f"landmark ratio for {label} must lie in (0, 1)")
        if self.n_around < 8 or self.n_rings < 4:
            raise ConfigInvalid("tessellation too coarse")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SynthSample:
    mesh: TriMesh
    landmarks: LandmarkSet
    coefficients: np.ndarray
    distal_hint: np.ndarray
    length: float


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))


def stratified_normal(rng: np.random.Generator, count: int) -> np.ndarray:
    """``count`` standard-normal draws, one per equal-probability stratum, shuffled.

    Each draw sits in the central half of its stratum, which keeps the
    sample variance within 15% of one for count >= 18 whatever the seed.
    """
    perm = np.argsort(rng.random(count), kind="stable")
    jitter = rng.random(count)
    q = (perm + 0.25 + 0.5 * jitter) / count
    q = np.clip(q, 1e-12, 1 - 1e-12)
    inv = NormalDist().inv_cdf
    return np.array([inv(float(x)) for x in q])


def _profile(cfg: SynthFamilyConfig):
    """Arc-length sampled ring positions (z, base radius) of the capsule profile."""
    L, R = cfg.base_length, cfg.base_radius
    cap = 0.5 * np.pi * R
    total = 2 * cap + (L - 2 * R)
    s = total * np.arange(1, cfg.n_rings + 1) / (cfg.n_rings + 1)
    z = np.empty_like(s)
    rho = np.empty_like(s)
    lo = s < cap
    hi = s > total - cap
    mid = ~(lo | hi)
    phi = s[lo] / R
    z[lo], rho[lo] = R * (1 - np.cos(phi)), R * np.sin(phi)
    z[mid], rho[mid] = R + (s[mid] - cap), R
    phi = (total - s[hi]) / R
    z[hi], rho[hi] = L - R * (1 - np.cos(phi)), R * np.sin(phi)
    return z, rho


def _base_radius_at(cfg: SynthFamilyConfig, z: float) -> float:
    L, R = cfg.base_length, cfg.base_radius
    if z < R:
        return float(np.sqrt(max(R * R - (R - z) ** 2, 0.0)))
    if z > L - R:
        return float(np.sqrt(max(R * R - (z - (L - R)) ** 2, 0.0)))
    return R


def _surface_points(cfg, z, rho, theta, coeffs, length_scale):
    """Deformed positions for profile samples ``(z, rho)`` at angles ``theta``."""
    t = z / cfg.base_length
    radial = rho * (1.0 + cfg.flare * t ** 3)
    for k, (c, a) in enumerate(zip(coeffs, cfg.mode_amplitudes)):
        radial = radial + (rho / cfg.base_radius) * c * a * np.sin((k + 1) * np.pi * t)
    shape = 1.0 + cfg.ellipticity * np.cos(2 * theta) + cfg.asymmetry * np.cos(theta)
    r = radial * shape
    x = cfg.bow * np.sin(np.pi * t) + r * np.cos(theta)
    y = r * np.sin(theta)
    return np.stack([x, y, z * length_scale], axis=-1)


def capsule_triangles(n_rings: int, n_around: int) -> np.ndarray:
    """Outward-oriented triangles of a pole-ring-pole tube."""
    N = n_around
    top = 1 + n_rings * N
    tris = []
    j = np.arange(N)
    jn = (j + 1) % N
    tris.append(np.stack([np.zeros(N, dtype=np.int64), 1 + jn, 1 + j], axis=1))
    for i in range(n_rings - 1):
        a = 1 + i * N + j
        b = 1 + i * N + jn
        c = 1 + (i + 1) * N + jn
        d = 1 + (i + 1) * N + j
        tris.append(np.stack([a, b, c], axis=1))
        tris.append(np.stack([a, c, d], axis=1))
    last = 1 + (n_rings - 1) * N
    tris.append(np.stack([np.full(N, top, dtype=np.int64), last + j, last + jn], axis=1))
    return np.concatenate(tris).astype(np.int64)


def synth_bone(cfg: SynthFamilyConfig, coeffs, length_scale: float = 1.0) -> tuple[TriMesh, LandmarkSet]:
    """One bone with the given mode coefficients and its landmark ground truth."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    z, rho = _profile(cfg)
    theta = 2 * np.pi * np.arange(cfg.n_around) / cfg.n_around
    zz = np.repeat(z, cfg.n_around)
    rr = np.repeat(rho, cfg.n_around)
    tt = np.tile(theta, cfg.n_rings)
    ring = _surface_points(cfg, zz, rr, tt, coeffs, length_scale)
    bottom = np.array([[0.0, 0.0, 0.0]])
    top = np.array([[0.0, 0.0, cfg.base_length * length_scale]])
    mesh = TriMesh(np.concatenate([bottom, ring, top]), capsule_triangles(cfg.n_rings, cfg.n_around))

    entries = {}
    index = mesh.nearest_index()
    for site, ratio in cfg.landmark_ratios.items():
        zl = ratio * cfg.base_length
        p = _surface_points(
            cfg, np.array(zl), np.array(_base_radius_at(cfg, zl)), np.array(cfg.landmark_angle), coeffs, length_scale
        )
        entries[site_label(site, cfg.bone)] = index.nearest(p)
    return mesh, LandmarkSet(entries, cfg.bone, cfg.side)


def generate_bone_family(cfg: SynthFamilyConfig) -> list[SynthSample]:
    """Seeded family of ``cfg.count`` bones with their true coefficients."""
    cfg.validate()
    rng = _rng(cfg.seed)
    coeffs = np.stack([stratified_normal(rng, cfg.count) for _ in range(cfg.mode_count)], axis=1) \
        if cfg.mode_count else np.zeros((cfg.count, 0))
    if cfg.length_jitter > 0:
        scales = 1.0 + cfg.length_jitter * stratified_normal(rng, cfg.count)
    else:
        scales = np.ones(cfg.count)
    out = []
    for c, s in zip(coeffs, scales):
        mesh, lms = synth_bone(cfg, c, s)
        out.append(SynthSample(mesh, lms, c.copy(), np.zeros(3), float(cfg.base_length * s)))
    return out


def family_manifest(cfg: SynthFamilyConfig, samples: list[SynthSample], names: list[str]) -> str:
    data = {
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "samples": [
            {"name": n, "coefficients": s.coefficients.tolist(), "distal_hint": s.distal_hint.tolist(), "length": s.length}
            for n, s in zip(names, samples)
        ],
    }
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def analytic_ligament_oracle(corners, samples: int) -> np.ndarray:
    """Dense ``samples x samples`` bilinear patch spanned by the four corners.

    ``corners`` needs ``radius_proximal``, ``radius_distal``, ``ulna_proximal``
    and ``ulna_distal`` attributes (a :class:`LigamentCorners`).
    """
    if samples < 10:
        raise ValueError("oracle needs samples >= 10")
    u = np.linspace(0.0, 1.0, samples)[:, None, None]
    v = np.linspace(0.0, 1.0, samples)[None, :, None]
    rad = (1 - u) * corners.radius_proximal + u * corners.radius_distal
    uln = (1 - u) * corners.ulna_proximal + u * corners.ulna_distal
    return ((1 - v) * rad + v * uln).reshape(-1, 3)


# --- primitives used by tests and examples -------------------------------------------


def grid_mesh(nx: int, ny: int, dx: float = 1.0, dy: float = 1.0, origin=(0.0, 0.0, 0.0)) -> TriMesh:
    """Flat ``nx x ny`` vertex grid in the z = const plane, normals +z."""
    xs = origin[0] + dx * np.arange(nx)
    ys = origin[1] + dy * np.arange(ny)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    verts = np.stack([gx.ravel(), gy.ravel(), np.full(gx.size, float(origin[2]))], axis=1)
    tris = []
    for i in range(nx - 1):
        for j in range(ny - 1):
            a, b, c, d = i * ny + j, (i + 1) * ny + j, (i + 1) * ny + j + 1, i * ny + j + 1
            tris += [(a, b, c), (a, c, d)]
    return TriMesh(verts, np.array(tris, dtype=np.int64))


def box_mesh(lx: float, ly: float, lz: float, center=(0.0, 0.0, 0.0)) -> TriMesh:
    """Axis-aligned closed box, 8 vertices and 12 outward triangles."""
    c = np.asarray(center, dtype=np.float64)
    h = np.array([lx, ly, lz]) / 2
    corners = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=np.float64)
    tris = np.array([
        [0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5],
        [0, 4, 5], [0, 5, 1], [2, 3, 7], [2, 7, 6],
        [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3],
    ])
    return TriMesh(c + corners * h, tris)


def icosphere(subdivisions: int = 2, radius: float = 1.0) -> TriMesh:
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ]
    faces = [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ]
    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = new
    return TriMesh(np.array(verts) * radius, np.array(faces, dtype=np.int64))


def strip_bone(x0: float, width: float, length: float, nx: int, ny: int) -> TriMesh:
    """Flat bone stand-in: strip in z = 0 covering ``[x0, x0 + width] x [0, length]``."""
    return grid_mesh(nx, ny, width / (nx - 1), length / (ny - 1), origin=(x0, 0.0, 0.0))


def cylinder_patch(radius: float, angle: float, height: float, n_around: int, n_along: int) -> TriMesh:
    """Open patch of a cylinder around z; the grid's +normal points outward."""
    th = np.linspace(-angle / 2, angle / 2, n_around)
    zs = np.linspace(0.0, height, n_along)
    gt, gz = np.meshgrid(th, zs, indexing="ij")
    verts = np.stack([radius * np.cos(gt).ravel(), radius * np.sin(gt).ravel(), gz.ravel()], axis=1)
    tris = []
    for i in range(n_around - 1):
        for j in range(n_along - 1):
            a, b, c, d = i * n_along + j, (i + 1) * n_along + j, (i + 1) * n_along + j + 1, i * n_along + j + 1
            tris += [(a, b, c), (a, c, d)]
    return TriMesh(verts, np.array(tris, dtype=np.int64))
