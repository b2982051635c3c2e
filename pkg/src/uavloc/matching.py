"""Correspondence search, homography estimation, SSIM and the adaptive fix confidence.

Two matchers share one interface. The *oracle* matcher stands in for a learned
matcher: it samples keypoints, pushes them through a known homography and then
corrupts them with pixel noise, outliers and (optionally) whole-frame faults.
The *classical* matcher detects Harris corners and matches normalized
cross-correlation patches with a mutual nearest-neighbour and ratio test.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np
from scipy import ndimage

from uavloc.errors import EstimationFailed, InvalidArgument
from uavloc.geometry import apply_homography
from uavloc.world_sim import warp_to

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = (0.01 * 255) ** 2
SSIM_C2 = (0.03 * 255) ** 2


@dataclass(frozen=True)
class MatcherSpec:
    kind: str = "oracle"  # "oracle" | "classical"
    # oracle
    num_keypoints: int = 256
    pixel_noise: float = 0.5
    outlier_fraction: float = 0.1
    sigma_scale_px: float = 2.0
    outlier_sigma_range: tuple = (0.0, 0.6)
    fault_rate: float = 0.0
    fault_offset_px: tuple = (20.0, 20.0)
    fault_sigma_range: tuple = (0.3, 0.6)
    # classical
    max_corners: int = 400
    patch_size: int = 11
    ratio: float = 0.9
    harris_k: float = 0.04
    # shared
    sigma_min: float = 0.2
    ransac_threshold: float = 3.0
    ransac_iterations: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("oracle", "classical"):
            raise InvalidArgument(f"unknown matcher kind {self.kind!r}")
        if self.patch_size % 2 == 0:
            raise InvalidArgument("patch_size must be odd")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("outlier_sigma_range", "fault_offset_px", "fault_sigma_range"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def with_(self, **kw):
        return replace(self, **kw)


@dataclass(frozen=True)
class Correspondence:
    p_uav: tuple
    p_sat: tuple
    sigma: float


@dataclass
class MatchResult:
    pts_a: np.ndarray  # (M, 2) pixels in image_a
    pts_b: np.ndarray  # (M, 2) pixels in image_b
    sigma: np.ndarray  # (M,) matching degree in [0, 1]
    idx_a: np.ndarray  # (M,) index of the source keypoint on image_a
    homography: Optional[np.ndarray] = None  # image_a -> image_b
    inlier_mask: np.ndarray = field(default_factory=lambda: np.zeros(0, bool))

    @property
    def num_matches(self):
        return len(self.sigma)

    @property
    def num_inliers(self):
        return int(np.count_nonzero(self.inlier_mask))

    @property
    def mean_sigma(self):
        return float(np.mean(self.sigma)) if len(self.sigma) else 0.0

    @property
    def correspondences(self):
        return [
            Correspondence(tuple(a), tuple(b), float(s))
            for a, b, s in zip(self.pts_a, self.pts_b, self.sigma)
        ]


# ---------------------------------------------------------------------------
# homography estimation


def _normalizing_transform(pts):
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
    s = np.sqrt(2.0) / d if d > 0 else 1.0
    return np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])


def _dlt_rows(a, b):
    """Stacked DLT design matrices for batches of point sets, shape (..., 2n, 9)."""
    x, y = a[..., 0], a[..., 1]
    u, v = b[..., 0], b[..., 1]
    z = np.zeros_like(x)
    o = np.ones_like(x)
    r1 = np.stack([x, y, o, z, z, z, -u * x, -u * y, -u], axis=-1)
    r2 = np.stack([z, z, z, x, y, o, -v * x, -v * y, -v], axis=-1)
    return np.concatenate([r1, r2], axis=-2)


def dlt_homography(src, dst):
    """Normalized DLT over all given correspondences (src -> dst)."""
    src = np.asarray(src, float)
    dst = np.asarray(dst, float)
    if len(src) < 4:
        raise EstimationFailed("need at least 4 correspondences")
    T1 = _normalizing_transform(src)
    T2 = _normalizing_transform(dst)
    a = src @ T1[:2, :2].T + T1[:2, 2]
    b = dst @ T2[:2, :2].T + T2[:2, 2]
    A = _dlt_rows(a, b)
    _, s, vt = np.linalg.svd(A)
    Hn = vt[-1].reshape(3, 3)
    H = np.linalg.solve(T2, Hn @ T1)
    if abs(H[2, 2]) < 1e-15 or not np.all(np.isfinite(H)):
        raise EstimationFailed("degenerate homography")
    H = H / H[2, 2]
    if abs(np.linalg.det(H)) < 1e-12:
        raise EstimationFailed("singular homography")
    return H


def _collinear(pts, tol):
    """True where any three of the four sample points are (nearly) collinear. pts: (B, 4, 2)."""
    bad = np.zeros(pts.shape[0], bool)
    for i, j, k in ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)):
        d1 = pts[:, j] - pts[:, i]
        d2 = pts[:, k] - pts[:, i]
        area = np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        bad |= area < tol
    return bad


def transfer_errors(H, src, dst):
    p = apply_homography(H, src)
    return np.linalg.norm(p - dst, axis=1)


_RANSAC_CHUNK = 100


def _minimal_models(sa, sb, T1, T2):
    # 8x8 systems with the last entry pinned to 1, safe in normalized coordinates
    A = _dlt_rows(sa, sb)
    with np.errstate(all="ignore"):
        try:
            h8 = np.linalg.solve(A[:, :, :8], -A[:, :, 8:])[..., 0]
        except np.linalg.LinAlgError:
            h8 = np.stack([np.linalg.lstsq(m[:, :8], -m[:, 8], rcond=None)[0] for m in A])
    Hn = np.concatenate([h8, np.ones((len(h8), 1))], axis=1).reshape(-1, 3, 3)
    return np.linalg.inv(T2)[None] @ Hn @ T1[None]


def _score(Hs, src, dst, thr2):
    """Inlier masks (B, N) for a batch of hypotheses."""
    x, y = src[:, 0], src[:, 1]
    with np.errstate(all="ignore"):
        w = Hs[:, 2, 0, None] * x + Hs[:, 2, 1, None] * y + Hs[:, 2, 2, None]
        ex = Hs[:, 0, 0, None] * x + Hs[:, 0, 1, None] * y + Hs[:, 0, 2, None] - dst[:, 0] * w
        ey = Hs[:, 1, 0, None] * x + Hs[:, 1, 1, None] * y + Hs[:, 1, 2, None] - dst[:, 1] * w
        return (ex * ex + ey * ey) < thr2 * (w * w)


def _required_iterations(inlier_ratio, confidence):
    p = inlier_ratio**4
    if p >= 1.0:
        return 1
    if p <= 0.0:
        return 1 << 30
    return int(np.ceil(np.log(1.0 - confidence) / np.log(1.0 - p)))


def estimate_homography(src, dst, inlier_threshold_px=3.0, iterations=1000, seed=0, confidence=0.9999):
    """RANSAC over minimal normalized-DLT models, refit on the consensus set.

    At most ``iterations`` hypotheses are drawn; the search stops early once the
    best consensus makes further sampling pointless at the given ``confidence``.

    Returns ``(H, inlier_mask)`` with ``H[2, 2] == 1``. Raises
    :class:`EstimationFailed` for fewer than four correspondences or when no
    non-degenerate model with four inliers exists.
    """
    src = np.asarray(src, float).reshape(-1, 2)
    dst = np.asarray(dst, float).reshape(-1, 2)
    n = len(src)
    if n < 4:
        raise EstimationFailed(f"need >= 4 correspondences, got {n}")
    T1 = _normalizing_transform(src)
    T2 = _normalizing_transform(dst)
    a = src @ T1[:2, :2].T + T1[:2, 2]
    b = dst @ T2[:2, :2].T + T2[:2, 2]

    if n == 4:
        samples = np.arange(4)[None, :]
    else:
        rng = np.random.default_rng(seed)
        samples = rng.integers(0, n, size=(iterations, 4))
        for _ in range(8):
            s = np.sort(samples, axis=1)
            dup = np.any(s[:, 1:] == s[:, :-1], axis=1)
            if not dup.any():
                break
            samples[dup] = rng.integers(0, n, size=(int(dup.sum()), 4))
        s = np.sort(samples, axis=1)
        samples = samples[~np.any(s[:, 1:] == s[:, :-1], axis=1)]

    sa, sb = a[samples], b[samples]
    ok = ~(_collinear(sa, 1e-4) | _collinear(sb, 1e-4))
    if not ok.any():
        raise EstimationFailed("every minimal sample was degenerate")
    samples, sa, sb = samples[ok], sa[ok], sb[ok]

    thr2 = inlier_threshold_px**2
    best_count, mask, best_H = -1, None, None
    needed = len(samples)
    # hypotheses are scored in chunks so a clear consensus stops the search early
    for start in range(0, len(samples), _RANSAC_CHUNK):
        if start >= needed:
            break
        Hs = _minimal_models(sa[start:start + _RANSAC_CHUNK], sb[start:start + _RANSAC_CHUNK], T1, T2)
        inl = _score(Hs, src, dst, thr2)
        counts = inl.sum(axis=1)
        b = int(np.argmax(counts))
        if counts[b] > best_count:
            best_count, mask, best_H = int(counts[b]), inl[b], Hs[b]
            needed = min(len(samples), _required_iterations(best_count / n, confidence))
    if best_count < 4:
        raise EstimationFailed("no model reached four inliers")

    H = None
    for _ in range(5):
        try:
            H_new = dlt_homography(src[mask], dst[mask])
        except (EstimationFailed, np.linalg.LinAlgError):
            break
        new_mask = transfer_errors(H_new, src, dst) < inlier_threshold_px
        H = H_new
        if new_mask.sum() < 4:
            break
        if np.array_equal(new_mask, mask):
            break
        mask = new_mask
    if H is None:
        H = best_H / best_H[2, 2]
    if not np.all(np.isfinite(H)) or abs(np.linalg.det(H)) < 1e-12:
        raise EstimationFailed("estimated homography is singular")
    mask = transfer_errors(H, src, dst) < inlier_threshold_px
    if mask.sum() < 4:
        raise EstimationFailed("refit lost consensus")
    return H, mask


# ---------------------------------------------------------------------------
# SSIM


def _gaussian_kernel(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    r = size // 2
    x = np.arange(-r, r + 1, dtype=float)
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img, g):
    r = len(g) // 2
    out = ndimage.correlate1d(img, g, axis=0, mode="constant")
    out = ndimage.correlate1d(out, g, axis=1, mode="constant")
    return out[r:-r, r:-r]


def ssim_map(a, b):
    """Per-window SSIM over all window positions fully inside the images."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise InvalidArgument(f"SSIM needs equal shapes, got {a.shape} and {b.shape}")
    if a.ndim != 2 or min(a.shape) < SSIM_WINDOW:
        raise InvalidArgument(f"SSIM needs 2-D images of at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    g = _gaussian_kernel()
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    saa = _filter_valid(a * a, g) - mu_a * mu_a
    sbb = _filter_valid(b * b, g) - mu_b * mu_b
    sab = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * sab + SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (saa + sbb + SSIM_C2)
    return num / den


def ssim(a, b):
    return float(np.mean(ssim_map(a, b)))


def masked_ssim(a, b, valid):
    """Mean SSIM over windows whose pixels are all marked valid. Returns (value, n_windows)."""
    valid = np.asarray(valid, bool)
    a = np.where(valid, a, 0.0)
    b = np.where(valid, b, 0.0)
    m = ssim_map(a, b)
    r = SSIM_WINDOW // 2
    win_ok = ndimage.minimum_filter(valid.astype(np.uint8), size=SSIM_WINDOW, mode="constant")[r:-r, r:-r] > 0
    n = int(win_ok.sum())
    if n == 0:
        return 0.0, 0
    return float(m[win_ok].mean()), n


# ---------------------------------------------------------------------------
# confidence


class Confidence(NamedTuple):
    value: float
    ssim: float
    mean_sigma: float
    degenerate: bool


def confidence(tile_image, uav_image, result: MatchResult) -> Confidence:
    """Warped-overlap SSIM times the mean matching degree, clamped to [0, 1]."""
    if result.homography is None:
        raise InvalidArgument("confidence needs a match with a homography")
    tile_image = np.asarray(tile_image, dtype=float)
    H_uav_from_tile = np.linalg.inv(result.homography)
    warped = warp_to(uav_image, H_uav_from_tile, tile_image.shape, cval=np.nan)
    valid = np.isfinite(warped)
    if valid.sum() < SSIM_WINDOW * SSIM_WINDOW:
        return Confidence(0.0, 0.0, result.mean_sigma, True)
    # windows outside the bounding box of the overlap never count, so crop first
    rows = np.nonzero(valid.any(axis=1))[0]
    cols = np.nonzero(valid.any(axis=0))[0]
    box = (slice(rows[0], rows[-1] + 1), slice(cols[0], cols[-1] + 1))
    if min(rows[-1] - rows[0], cols[-1] - cols[0]) + 1 < SSIM_WINDOW:
        return Confidence(0.0, 0.0, result.mean_sigma, True)
    s, n = masked_ssim(tile_image[box], np.nan_to_num(warped[box]), valid[box])
    if n == 0:
        return Confidence(0.0, 0.0, result.mean_sigma, True)
    w = float(np.clip(s * result.mean_sigma, 0.0, 1.0))
    return Confidence(w, s, result.mean_sigma, False)


# ---------------------------------------------------------------------------
# classical matcher


def harris_corners(img, max_corners=400, k=0.04, sigma=1.5, nms_size=7, border=6, rel_threshold=0.01):
    """Harris corners with non-maximum suppression and quadratic sub-pixel refinement.

    Returns an (N, 2) array of (u, v) positions sorted by decreasing response.
    """
    img = np.asarray(img, dtype=float)
    ix = ndimage.sobel(img, axis=1)
    iy = ndimage.sobel(img, axis=0)
    sxx = ndimage.gaussian_filter(ix * ix, sigma)
    syy = ndimage.gaussian_filter(iy * iy, sigma)
    sxy = ndimage.gaussian_filter(ix * iy, sigma)
    resp = sxx * syy - sxy * sxy - k * (sxx + syy) ** 2
    peak = resp.max()
    if not peak > 0:
        return np.zeros((0, 2))
    is_max = (resp == ndimage.maximum_filter(resp, size=nms_size)) & (resp > rel_threshold * peak)
    is_max[:border] = is_max[-border:] = False
    is_max[:, :border] = is_max[:, -border:] = False
    vs, us = np.nonzero(is_max)
    order = np.argsort(-resp[vs, us], kind="stable")[:max_corners]
    vs, us = vs[order], us[order]
    # 1-D parabola through the 3 samples around each peak, per axis
    c = resp[vs, us]
    l, r = resp[vs, us - 1], resp[vs, us + 1]
    t, b = resp[vs - 1, us], resp[vs + 1, us]
    du = np.clip(0.5 * (l - r) / np.where(l - 2 * c + r != 0, l - 2 * c + r, -1.0), -0.5, 0.5)
    dv = np.clip(0.5 * (t - b) / np.where(t - 2 * c + b != 0, t - 2 * c + b, -1.0), -0.5, 0.5)
    return np.column_stack([us + du, vs + dv])


def patch_descriptors(img, pts, size=11):
    """Zero-mean, unit-norm patches; flat patches get an all-zero descriptor."""
    img = np.asarray(img, dtype=float)
    r = size // 2
    h, w = img.shape
    pts = np.asarray(pts, float).reshape(-1, 2)
    if len(pts) == 0:
        return np.zeros((0, size * size))
    cu = np.clip(np.rint(pts[:, 0]).astype(int), r, w - 1 - r)
    cv = np.clip(np.rint(pts[:, 1]).astype(int), r, h - 1 - r)
    off = np.arange(-r, r + 1)
    rows = cv[:, None, None] + off[None, :, None]
    cols = cu[:, None, None] + off[None, None, :]
    patches = img[rows, cols].reshape(len(pts), -1)
    patches = patches - patches.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(patches, axis=1, keepdims=True)
    return np.where(norms > 1e-6, patches / np.where(norms > 1e-6, norms, 1.0), 0.0)


def ncc_match(desc_a, desc_b, ratio=0.9):
    """Mutual nearest neighbours under NCC with a distance-ratio test.

    Returns (idx_a, idx_b, ncc) arrays.
    """
    if len(desc_a) == 0 or len(desc_b) < 2:
        return np.zeros(0, int), np.zeros(0, int), np.zeros(0)
    S = desc_a @ desc_b.T
    best_b = np.argmax(S, axis=1)
    best_a = np.argmax(S, axis=0)
    ia = np.arange(len(desc_a))
    mutual = best_a[best_b] == ia
    top2 = np.partition(-S, 1, axis=1)[:, :2] * -1
    d1 = np.sqrt(np.maximum(2 - 2 * top2[:, 0], 0))
    d2 = np.sqrt(np.maximum(2 - 2 * top2[:, 1], 0))
    keep = mutual & (d1 < ratio * d2) & (top2[:, 0] > 0)
    return ia[keep], best_b[keep], S[ia[keep], best_b[keep]]


def classical_correspondences(img_a, img_b, spec: MatcherSpec, keypoints_a=None, keypoints_b=None):
    if keypoints_a is None:
        keypoints_a = harris_corners(img_a, spec.max_corners, spec.harris_k)
    if keypoints_b is None:
        keypoints_b = harris_corners(img_b, spec.max_corners, spec.harris_k)
    keypoints_a = np.asarray(keypoints_a, float).reshape(-1, 2)
    keypoints_b = np.asarray(keypoints_b, float).reshape(-1, 2)
    da = patch_descriptors(img_a, keypoints_a, spec.patch_size)
    db = patch_descriptors(img_b, keypoints_b, spec.patch_size)
    ia, ib, score = ncc_match(da, db, spec.ratio)
    sigma = np.clip((score + 1.0) / 2.0, 0.0, 1.0)
    return keypoints_a[ia], keypoints_b[ib], sigma, ia


# ---------------------------------------------------------------------------
# oracle matcher


def oracle_correspondences(img_a, img_b, spec: MatcherSpec, gt, keypoints_a=None, rng_key=(), fault_key=None):
    """Synthesize noisy matches from a known image_a -> image_b homography."""
    ha, wa = np.asarray(img_a).shape[:2]
    hb, wb = np.asarray(img_b).shape[:2]
    rng = np.random.default_rng([spec.seed, 11, *[int(k) for k in rng_key]])
    if keypoints_a is None:
        n = spec.num_keypoints
        keypoints_a = np.column_stack([rng.uniform(2, wa - 3, n), rng.uniform(2, ha - 3, n)])
    else:
        keypoints_a = np.asarray(keypoints_a, float).reshape(-1, 2)
        n = len(keypoints_a)
    mapped = apply_homography(gt, keypoints_a) if n else np.zeros((0, 2))
    noise = rng.normal(0.0, spec.pixel_noise, (n, 2)) if spec.pixel_noise > 0 else np.zeros((n, 2))
    pts_b = mapped + noise
    sigma = np.exp(-np.sum(noise**2, axis=1) / (2 * spec.sigma_scale_px**2))

    n_out = int(round(spec.outlier_fraction * n))
    perm = rng.permutation(n)
    out_idx = perm[:n_out]
    out_pts = np.column_stack([rng.uniform(0, wb - 1, n_out), rng.uniform(0, hb - 1, n_out)])
    out_sig = rng.uniform(*spec.outlier_sigma_range, n_out)

    if fault_key is not None and spec.fault_rate > 0:
        frng = np.random.default_rng([spec.seed, 99, int(fault_key)])
        if frng.random() < spec.fault_rate:
            mag = frng.uniform(*spec.fault_offset_px)
            ang = frng.uniform(0, 2 * np.pi)
            pts_b = pts_b + mag * np.array([np.cos(ang), np.sin(ang)])
            sigma = frng.uniform(*spec.fault_sigma_range, n)

    pts_b[out_idx] = out_pts
    sigma[out_idx] = out_sig
    inside = (
        (pts_b[:, 0] >= 0) & (pts_b[:, 0] <= wb - 1) & (pts_b[:, 1] >= 0) & (pts_b[:, 1] <= hb - 1)
    )
    idx = np.nonzero(inside)[0]
    return keypoints_a[idx], pts_b[idx], sigma[idx], idx


def match(image_a, image_b, spec: MatcherSpec, gt=None, keypoints_a=None, keypoints_b=None,
          rng_key=(), fault_key=None) -> MatchResult:
    """Correspondences from ``image_a`` to ``image_b`` plus a RANSAC homography.

    Matches with matching degree below ``spec.sigma_min`` are pruned. Fewer than
    four survivors, or a failed estimate, give a result without homography.
    """
    if np.asarray(image_a).size == 0 or np.asarray(image_b).size == 0:
        raise InvalidArgument("images must be non-empty")
    if spec.kind == "oracle":
        if gt is None:
            raise InvalidArgument("the oracle matcher needs the ground-truth homography")
        pa, pb, sig, ia = oracle_correspondences(image_a, image_b, spec, gt, keypoints_a, rng_key, fault_key)
    else:
        pa, pb, sig, ia = classical_correspondences(image_a, image_b, spec, keypoints_a, keypoints_b)
    keep = sig >= spec.sigma_min
    res = MatchResult(pa[keep], pb[keep], sig[keep], ia[keep])
    res.inlier_mask = np.zeros(res.num_matches, bool)
    if res.num_matches >= 4:
        seed = int(np.random.SeedSequence([spec.seed, 5, *[int(k) for k in rng_key]]).generate_state(1)[0])
        try:
            H, mask = estimate_homography(
                res.pts_a, res.pts_b, spec.ransac_threshold, spec.ransac_iterations, seed
            )
            res.homography, res.inlier_mask = H, mask
        except EstimationFailed:
            pass
    return res
