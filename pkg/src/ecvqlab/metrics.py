"""Rate-distortion curves, Bjontegaard deltas, and partition rasters.

Rates are bits per dimension, distortion is MSE per dimension, and
PSNR = -10*log10(MSE) (unit peak; constant offsets cancel inside BD
differences). BD metrics follow the standard cubic-fit construction:
PSNR as a cubic in log2-rate (BD-PSNR) or log2-rate as a cubic in PSNR
(BD-rate), integrated exactly via the polynomial antiderivative over the
overlapping interval.
"""

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "psnr", "RDPoint", "RDCurve", "bd_psnr", "bd_rate",
    "PartitionRaster", "rasterize_partition", "neighbor_stats",
    "decision_boundary_1d", "partition_svg", "write_pgm",
]


def psnr(mse):
    """PSNR in dB under the unit-peak convention."""
    mse = np.asarray(mse, dtype=np.float64)
    with np.errstate(divide="ignore"):
        out = -10.0 * np.log10(mse)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class RDPoint:
    rate: float
    mse: float
    label: str = ""

    @property
    def psnr(self):
        return psnr(self.mse)


class RDCurve:
    """Rate-sorted list of RD points for one codec on one source."""

    def __init__(self, points, label=""):
        pts = sorted(points, key=lambda p: p.rate)
        if not pts:
            raise ValueError("curve needs at least one point")
        for p in pts:
            if p.rate < 0 or p.mse <= 0:
                raise ValueError(f"invalid RD point rate={p.rate} mse={p.mse}")
        rates = [p.rate for p in pts]
        if len(set(rates)) != len(rates):
            raise ValueError("curve has duplicate rates")
        self.points = pts
        self.label = label

    @property
    def rates(self):
        return np.array([p.rate for p in self.points])

    @property
    def psnrs(self):
        return np.array([p.psnr for p in self.points])

    def __len__(self):
        return len(self.points)

    def pareto(self):
        """Drop dominated points so rate up implies distortion down."""
        kept = []
        best = -np.inf
        for p in self.points:
            if p.psnr > best:
                kept.append(p)
                best = p.psnr
        return RDCurve(kept, label=self.label)


def _check_curve_for_bd(curve, name):
    if len(curve) < 4:
        raise ValueError(f"{name} needs at least 4 points for BD metrics, has {len(curve)}")
    if np.any(curve.rates <= 0):
        raise ValueError(f"{name} has nonpositive rates; BD metrics need log-rate")


def _fit_and_average(xa, ya, xb, yb):
    lo = max(xa.min(), xb.min())
    hi = min(xa.max(), xb.max())
    if hi <= lo:
        raise ValueError(f"curves do not overlap (interval [{lo:.4g}, {hi:.4g}])")
    pa = np.polyint(np.polyfit(xa, ya, 3))
    pb = np.polyint(np.polyfit(xb, yb, 3))
    ia = np.polyval(pa, hi) - np.polyval(pa, lo)
    ib = np.polyval(pb, hi) - np.polyval(pb, lo)
    return (ia - ib) / (hi - lo)


def bd_psnr(curve_a, curve_b):
    """Average PSNR difference (dB) of A over B across the shared rates."""
    _check_curve_for_bd(curve_a, "curve_a")
    _check_curve_for_bd(curve_b, "curve_b")
    return float(_fit_and_average(np.log2(curve_a.rates), curve_a.psnrs,
                                  np.log2(curve_b.rates), curve_b.psnrs))


def bd_rate(curve_a, curve_b):
    """Average rate difference of A over B in percent across shared PSNRs."""
    _check_curve_for_bd(curve_a, "curve_a")
    _check_curve_for_bd(curve_b, "curve_b")
    delta = _fit_and_average(curve_a.psnrs, np.log2(curve_a.rates),
                             curve_b.psnrs, np.log2(curve_b.rates))
    return float((2.0 ** delta - 1.0) * 100.0)


# ---------------------------------------------------------------------------
# partition rasters


@dataclass
class PartitionRaster:
    """Grid labels of an encoder rule over a 2-d box.

    ``labels[i, j]`` is the index emitted at (xs[j], ys[i]). The grid uses
    inclusive endpoints, so halving the step keeps every shared node.
    """

    xs: np.ndarray
    ys: np.ndarray
    labels: np.ndarray
    extent: tuple = field(default=None)

    def boundary_mask(self):
        """Nodes with at least one 4-neighbor of a different label."""
        lab = self.labels
        mask = np.zeros(lab.shape, dtype=bool)
        dh = lab[:, 1:] != lab[:, :-1]
        dv = lab[1:, :] != lab[:-1, :]
        mask[:, 1:] |= dh
        mask[:, :-1] |= dh
        mask[1:, :] |= dv
        mask[:-1, :] |= dv
        return mask


def rasterize_partition(encode_fn, bounds=(-4.0, 4.0), resolution=512, chunk=65536):
    """Label every grid node of a square box by its emitted index.

    ``encode_fn`` maps an (n, 2) array to an integer index per row and must
    be a pure function.
    """
    lo, hi = bounds
    xs = np.linspace(lo, hi, resolution)
    ys = np.linspace(lo, hi, resolution)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    if pts.shape[1] != 2:
        raise ValueError("rasterize_partition only supports 2-d domains")
    labels = np.empty(pts.shape[0], dtype=np.int64)
    for start in range(0, pts.shape[0], chunk):
        labels[start:start + chunk] = encode_fn(pts[start:start + chunk])
    return PartitionRaster(xs=xs, ys=ys, labels=labels.reshape(resolution, resolution),
                           extent=(lo, hi, lo, hi))


def neighbor_stats(raster):
    """Mean number of distinct neighboring cells over interior cells.

    A cell is every connected set of nodes sharing a label; interior cells
    are those that never touch the raster border. Square-lattice Voronoi
    partitions score 4, hexagonal ones score 6.
    """
    lab = raster.labels
    pairs = set()
    h = np.nonzero(lab[:, 1:] != lab[:, :-1])
    for a, b in zip(lab[h[0], h[1]], lab[h[0], h[1] + 1]):
        pairs.add((int(a), int(b)))
    v = np.nonzero(lab[1:, :] != lab[:-1, :])
    for a, b in zip(lab[v[0], v[1]], lab[v[0] + 1, v[1]]):
        pairs.add((int(a), int(b)))
    border = set(np.unique(np.concatenate([lab[0], lab[-1], lab[:, 0], lab[:, -1]])).tolist())
    interior = set(np.unique(lab).tolist()) - border
    if not interior:
        return float("nan")
    neighbors = {c: set() for c in interior}
    for a, b in pairs:
        if a in neighbors:
            neighbors[a].add(b)
        if b in neighbors:
            neighbors[b].add(a)
    return float(np.mean([len(s) for s in neighbors.values()]))


def decision_boundary_1d(encode_fn, lo, hi, n=4096):
    """Label switch points of a 1-d encoder rule along [lo, hi].

    Returns the midpoints between adjacent grid nodes whose labels differ.
    """
    xs = np.linspace(lo, hi, n)
    labels = np.asarray(encode_fn(xs[:, None]))
    switch = np.nonzero(labels[1:] != labels[:-1])[0]
    return 0.5 * (xs[switch] + xs[switch + 1])


# ---------------------------------------------------------------------------
# exports


def write_pgm(raster, path):
    """16-bit binary PGM of the label grid (row 0 at the top = max y)."""
    lab = raster.labels
    if lab.max() > 65535:
        raise ValueError("too many labels for 16-bit PGM")
    with open(path, "wb") as f:
        f.write(f"P5\n{lab.shape[1]} {lab.shape[0]}\n65535\n".encode("ascii"))
        f.write(np.flipud(lab).astype(">u2").tobytes())


def _merge_runs(positions):
    """Collapse sorted integer positions into (start, stop) runs."""
    runs = []
    for p in positions:
        if runs and p == runs[-1][1]:
            runs[-1][1] = p + 1
        else:
            runs.append([p, p + 1])
    return runs


def partition_svg(raster, path, centers=None, size=640):
    """Write boundary polylines (and optional codeword dots) as an SVG."""
    lo, hi = raster.extent[0], raster.extent[1]
    span = hi - lo
    sx = raster.xs
    sy = raster.ys

    def to_px(x, y):
        return ((x - lo) / span * size, (hi - y) / span * size)

    lines = []
    lab = raster.labels
    # vertical boundary edges between horizontally adjacent nodes
    for j in range(lab.shape[1] - 1):
        rows = np.nonzero(lab[:, j] != lab[:, j + 1])[0]
        xm = 0.5 * (sx[j] + sx[j + 1])
        step = sy[1] - sy[0]
        for r0, r1 in _merge_runs(rows.tolist()):
            x0, y0 = to_px(xm, sy[r0] - 0.5 * step)
            x1, y1 = to_px(xm, sy[r1 - 1] + 0.5 * step)
            lines.append((x0, y0, x1, y1))
    # horizontal boundary edges between vertically adjacent nodes
    for i in range(lab.shape[0] - 1):
        cols = np.nonzero(lab[i, :] != lab[i + 1, :])[0]
        ym = 0.5 * (sy[i] + sy[i + 1])
        step = sx[1] - sx[0]
        for c0, c1 in _merge_runs(cols.tolist()):
            x0, y0 = to_px(sx[c0] - 0.5 * step, ym)
            x1, y1 = to_px(sx[c1 - 1] + 0.5 * step, ym)
            lines.append((x0, y0, x1, y1))

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
             f'viewBox="0 0 {size} {size}">',
             f'<rect width="{size}" height="{size}" fill="white"/>',
             '<g stroke="#1f77b4" stroke-width="1" stroke-linecap="square">']
    for x0, y0, x1, y1 in lines:
        parts.append(f'<line x1="{x0:.2f}" y1="{y0:.2f}" x2="{x1:.2f}" y2="{y1:.2f}"/>')
    parts.append("</g>")
    if centers is not None:
        parts.append('<g fill="#ff7f0e">')
        for cx, cy in np.asarray(centers):
            if lo <= cx <= hi and lo <= cy <= hi:
                px, py = to_px(cx, cy)
                parts.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="2.5"/>')
        parts.append("</g>")
    parts.append("</svg>")
    with open(path, "w", encoding="ascii") as f:
        f.write("\n".join(parts))
