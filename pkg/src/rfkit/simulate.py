"""Ground-truth STRFs, noise stimuli, response generators, and the benchmark
harness.

Simulated rates follow the generative conventions of the benchmark protocol:
LG adds Gaussian noise to the linear drive, LNP draws Poisson counts from
Delta * R * exp(drive + intercept), LNLN from
Delta * R * softplus(sum_k exp(drive_k) + intercept). An intercept of None
means "calibrate to the target mean rate" (closed form for exp, bisection
for the softplus output); an explicit intercept is honored as given.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import design as design_mod
from . import estimators, glm, subunits as subunits_mod
from .diagnostics import normalized_mse
from .errors import DataError, NumericalError
from .rng import Rng
from .splines import tensor_basis, expand
from .tensor import Tensor


@dataclass
class GroundTruth:
    kind: str
    w: Tensor                  # (k, t, x, y) for dog_pair, else filter tensor
    params: dict

    @property
    def n_subunits(self):
        return self.w.arr.shape[0] if self.kind == "dog_pair" else 1

    @property
    def filter_shape(self):
        return self.w.arr.shape[1:] if self.kind == "dog_pair" else self.w.arr.shape


@dataclass
class SimConfig:
    delta_t: float = 0.033
    intercept: float = None    # None -> calibrate to target_rate_hz
    rate_scale: float = 10.0   # R
    sigma: float = 1.0         # LG noise sd
    target_rate_hz: float = 21.0
    seed: int = 0


def _gamma_bump(tau, center, width):
    # smooth unimodal bump; gamma-like rise and decay
    z = np.maximum(tau, 0.0) / max(center, 1e-9)
    p = max(center / width, 1.0) * 2.0
    return z ** p * np.exp(p * (1.0 - z))


def biphasic_kernel(n_lags, peak=None, trough=None, mix=0.55):
    """Biphasic temporal kernel on lag index (0 = most recent frame is the
    LAST entry; entry 0 is the oldest lag)."""
    if peak is None:
        peak = max(1.0, n_lags / 6.0)
    if trough is None:
        trough = min(n_lags - 1.0, peak * 2.2)
    tau = (n_lags - 1.0) - np.arange(n_lags)           # time before present
    k = _gamma_bump(tau, peak, peak) - mix * _gamma_bump(tau, trough, trough)
    return k


def _gauss1d(n, center, sigma):
    x = np.arange(n)
    return np.exp(-((x - center) ** 2) / (2.0 * sigma ** 2))


def _gauss2d(nx, ny, cx, cy, sx, sy):
    return np.outer(_gauss1d(nx, cx, sx), _gauss1d(ny, cy, sy))


def make_ground_truth(kind, dims=None):
    if kind == "rank2_2d":
        nt, nx = dims or (30, 40)
        if nt < 4 or nx < 4:
            raise DataError("rank2_2d needs at least 4 frames and 4 pixels")
        k1 = biphasic_kernel(nt, peak=nt / 7.0)
        k2 = -biphasic_kernel(nt, peak=nt / 3.5, mix=0.4)
        g1 = _gauss1d(nx, 0.38 * nx, nx / 9.0)
        g2 = _gauss1d(nx, 0.62 * nx, nx / 7.0)
        w = np.outer(k1, g1) + 0.8 * np.outer(k2, g2)
        params = {"dims": [nt, nx]}
        labels = ["time", "x"]
    elif kind == "dog_pair":
        nt, nx, ny = dims or (5, 20, 20)
        if ny < 4:
            raise DataError("dog_pair needs at least 4 pixels in y")
        k = biphasic_kernel(nt, peak=max(1.0, nt / 4.0))
        # the pair must stay nearly non-overlapping (surrounds ~3 sigma
        # apart), otherwise spikes cannot be attributed to one subunit and
        # every clustering method collapses to the same mixture
        cx, cy = 0.5 * (nx - 1), 0.26 * (ny - 1)
        dog = (_gauss2d(nx, ny, cx, cy, nx / 12.0, ny / 12.0)
               - 0.45 * _gauss2d(nx, ny, cx, cy, nx / 6.0, ny / 6.0))
        w1 = k[:, None, None] * dog[None, :, :]
        w2 = -w1[:, :, ::-1]
        w = np.stack([w1, w2])
        params = {"dims": [nt, nx, ny], "centers": [[cx, cy], [cx, ny - 1 - cy]]}
        labels = None
    elif kind == "gauss3d":
        nt, nx, ny = dims or (25, 25, 25)
        tau = (nt - 1.0) - np.arange(nt)
        # mild positive lobe, sharp negative dip just before lag zero
        k = 0.9 * np.exp(-((tau - nt / 4.0) ** 2) / (2.0 * (nt / 8.0) ** 2)) \
            - 1.6 * np.exp(-((tau - 1.0) ** 2) / (2.0 * 0.8 ** 2))
        g = _gauss2d(nx, ny, (nx - 1) / 2.0, (ny - 1) / 2.0, nx / 8.0, ny / 8.0)
        w = k[:, None, None] * g[None, :, :]
        params = {"dims": [nt, nx, ny], "center": [(nx - 1) / 2.0, (ny - 1) / 2.0]}
        labels = ["time", "x", "y"]
    else:
        raise DataError(f"unknown ground truth kind {kind!r}")
    if kind == "dog_pair":
        # each subunit is a filter in its own right; per-subunit unit norm
        # keeps the per-subunit drive variance at 1 like the single-filter
        # kinds (recovery is scored per matched subunit anyway)
        for j in range(w.shape[0]):
            w[j] = w[j] / np.linalg.norm(w[j])
    else:
        w = w / np.linalg.norm(w)
    return GroundTruth(kind=kind, w=Tensor(w, labels=labels), params=params)


def gen_stimulus(kind, n_frames, spatial_dims, rng):
    n_frames = int(n_frames)
    if n_frames < 1:
        raise DataError("n_frames must be >= 1")
    shape = (n_frames,) + tuple(int(s) for s in spatial_dims)
    gen = rng.gen if isinstance(rng, Rng) else rng
    if kind == "white":
        arr = gen.standard_normal(shape)
    elif kind == "binary":
        arr = gen.integers(0, 2, size=shape).astype(np.float64) * 2.0 - 1.0
    elif kind == "pink":
        white = gen.standard_normal(shape)
        F = np.fft.rfft(white, axis=0)
        k = np.arange(F.shape[0], dtype=np.float64)
        scale = np.zeros_like(k)
        scale[1:] = 1.0 / np.sqrt(k[1:])            # power ~ 1/f
        sh = (len(k),) + (1,) * len(spatial_dims)
        arr = np.fft.irfft(F * scale.reshape(sh), n=n_frames, axis=0)
        sd = arr.std(axis=0, keepdims=True)
        sd[sd == 0] = 1.0
        arr = arr / sd
    else:
        raise DataError(f"unknown stimulus kind {kind!r}")
    labels = ["time", "x", "y"][: 1 + len(spatial_dims)]
    return Tensor(arr, labels=labels)


def _drives(truth, stimulus):
    arr = truth.w.arr
    if truth.kind == "dog_pair":
        return np.stack([design_mod.drive(stimulus, arr[j])
                         for j in range(arr.shape[0])])
    return design_mod.drive(stimulus, arr)[None, :]


def calibrate_intercept(truth, stimulus, family, config):
    """Intercept giving the target mean rate for this truth and stimulus."""
    drives = _drives(truth, stimulus)
    target = config.target_rate_hz
    R = config.rate_scale
    if family == "lnp":
        return float(np.log(target / (R * np.mean(np.exp(drives[0])))))
    if family == "lnln":
        s = np.exp(drives).sum(axis=0)

        def gap(c):
            return R * float(np.mean(glm._softplus(s + c))) - target

        lo, hi = -60.0, 60.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if gap(mid) > 0:
                hi = mid
            else:
                lo = mid
        return 0.5 * (lo + hi)
    raise DataError(f"no intercept calibration for family {family!r}")


def gen_response(truth, stimulus, family, config, rng=None):
    """Simulated response; length matches the stimulus frame count."""
    rng = rng or Rng(config.seed, stream=1)
    gen = rng.gen if isinstance(rng, Rng) else rng
    drives = _drives(truth, stimulus)
    dt = config.delta_t
    if family == "lg":
        return drives[0] + config.sigma * gen.standard_normal(drives.shape[1])
    if family == "lnp":
        c = config.intercept
        if c is None:
            c = calibrate_intercept(truth, stimulus, "lnp", config)
        rate = config.rate_scale * np.exp(drives[0] + c)
    elif family == "lnln":
        c = config.intercept
        if c is None:
            c = calibrate_intercept(truth, stimulus, "lnln", config)
        rate = config.rate_scale * glm._softplus(np.exp(drives).sum(axis=0) + c)
    else:
        raise DataError(f"unknown family {family!r}")
    if float(np.mean(rate)) * dt > 100.0:
        raise NumericalError(
            "rate overflow: mean expected count per bin exceeds 100; "
            "use a smaller intercept")
    return gen.poisson(rate * dt).astype(np.float64)


# ------------------------------------------------------------- benchmark

def _fit_l1_grid(spec, Ztr, ytr, Zva, yva, alphas, seed, max_iters=1500):
    best_alpha, results, _ = glm.gridsearch_l1(
        (Ztr, ytr, Zva, yva), spec, alphas,
        glm.FitOptions(seed=seed, max_iters=max_iters), projected=True)
    return results[best_alpha]


def _benchmark_methods(ctx):
    """Per-method estimators; each returns the estimated filter tensor (or a
    (d, k) subunit matrix for the clustering/LNLN family)."""
    truth = ctx["truth"]
    fshape = truth.filter_shape
    n_lags = fshape[0]
    basis = ctx["basis"]
    tr = ctx["train_slice"]
    frames = ctx["frames"]
    ytr = ctx["y"][tr]
    seed = ctx["fit_seed"]
    alphas_spl = ctx.get("alphas_spline", [0.5, 1.0, 1.5])
    alphas_raw = ctx.get("alphas_raw", list(range(0, 11)))
    max_iters = ctx.get("max_iters", 1500)

    def need_X():
        if ctx.get("_X") is None:
            ctx["_X"] = design_mod.build_design(frames[tr], n_lags).X
        return ctx["_X"]

    def need_Z():
        if ctx.get("_Z") is None:
            ctx["_Z"] = design_mod.spline_design(frames, basis)
        return ctx["_Z"]

    def zsplit():
        Z = need_Z()
        return Z[tr], Z[ctx["val_slice"]]

    def m_sta():
        return estimators.sta_frames(frames[tr], ytr, n_lags)

    def m_wsta():
        return wsta_reshaped(need_X())

    def wsta_reshaped(X):
        return estimators.wsta(X, ytr).reshape(fshape)

    def m_spl_wsta():
        Ztr_, _ = zsplit()
        b = estimators._lstsq(Ztr_, ytr)
        return expand(basis, b).arr

    def m_spl_l1():
        Ztr_, Zva_ = zsplit()
        spec = glm.ModelSpec("lg", delta_t=ctx["delta_t"])
        res = _fit_l1_grid(spec, Ztr_, ytr, Zva_, ctx["y"][ctx["val_slice"]],
                           alphas_spl, seed, max_iters)
        return expand(basis, res.coeffs[0]).arr

    def m_lnp(spline):
        if spline:
            Ztr_, Zva_ = zsplit()
            alphas = alphas_spl
        else:
            X = need_X()
            Ztr_ = X
            Zva_ = design_mod.build_design(frames[: ctx["val_slice"].stop],
                                           n_lags).X[ctx["val_slice"]]
            alphas = alphas_raw
        spec = glm.ModelSpec("lnp", f="exp", delta_t=ctx["delta_t"])
        res = _fit_l1_grid(spec, Ztr_, ytr, Zva_, ctx["y"][ctx["val_slice"]],
                           alphas, seed, max_iters)
        if spline:
            return expand(basis, res.coeffs[0]).arr
        return res.coeffs[0].reshape(fshape)

    def m_map(prior_kind):
        X = need_X()
        _, state = estimators.evidence_optimize(X, ytr, prior_kind, dims=fshape)
        return state.mu.reshape(fshape)

    def m_cluster(method, spline):
        V = subunits_mod.ste(need_X(), ytr)
        S = basis.full if spline else None
        k = truth.n_subunits
        if method == "kmeans":
            res = subunits_mod.kmeans_subunits(V, k, S=S, seed=seed)
        else:
            res = subunits_mod.seminmf_subunits(V, k, S=S, seed=seed)
        return res.W

    def m_lnln(spline):
        k = truth.n_subunits
        spec = glm.ModelSpec("lnln", k=k, f="exp", g="softplus",
                             delta_t=ctx["delta_t"],
                             rate_scale=ctx.get("rate_scale", 1.0))
        if spline:
            Ztr_, Zva_ = zsplit()
        else:
            X = need_X()
            Ztr_ = X
            Zva_ = design_mod.build_design(frames[: ctx["val_slice"].stop],
                                           n_lags).X[ctx["val_slice"]]
        opts = glm.FitOptions(seed=seed, max_iters=max_iters)
        res = glm.fit(spec, Ztr_, ytr, Zva_, ctx["y"][ctx["val_slice"]],
                      opts, projected=True)
        if spline:
            W = np.stack([expand(basis, res.coeffs[j]).arr.ravel()
                          for j in range(k)], axis=1)
        else:
            W = res.coeffs.T.copy()
        return W

    return {
        "sta": m_sta,
        "wsta": m_wsta,
        "spl_wsta": m_spl_wsta,
        "spl_l1": m_spl_l1,
        "lnp": lambda: m_lnp(False),
        "spl_lnp": lambda: m_lnp(True),
        "map_asd": lambda: m_map("asd"),
        "map_ald": lambda: m_map("ald"),
        "kmeans": lambda: m_cluster("kmeans", False),
        "spl_kmeans": lambda: m_cluster("kmeans", True),
        "seminmf": lambda: m_cluster("seminmf", False),
        "spl_seminmf": lambda: m_cluster("seminmf", True),
        "lnln": lambda: m_lnln(False),
        "spl_lnln": lambda: m_lnln(True),
    }


def _score(truth, est):
    if truth.kind == "dog_pair":
        W_true = np.stack([truth.w.arr[j].ravel()
                           for j in range(truth.w.arr.shape[0])], axis=1)
        est = np.asarray(est, dtype=np.float64)
        if est.ndim != 2:
            est = est.reshape(W_true.shape[0], -1)
        _, _, mses = subunits_mod.match_subunits(est, W_true)
        return float(np.mean(mses))
    return normalized_mse(est, truth.w.arr)


def run_benchmark(methods, truth, stimulus_kind, lengths, n_seeds=10,
                  length_unit="minutes", family="lg", dfs=None,
                  config=None, val_minutes=1.0, threads=None,
                  alphas_spline=None, alphas_raw=None, max_iters=1500):
    """Normalized-MSE table over (method, length, seed) cells.

    Every method in a cell sees the same simulated data; failures are
    recorded per cell (error string instead of a score), not fatal.
    """
    from concurrent.futures import ThreadPoolExecutor
    from . import backend

    config = config or SimConfig()
    fshape = truth.filter_shape
    d = int(np.prod(fshape))
    if dfs is None:
        raise DataError("run_benchmark needs per-dimension dfs for spline methods")
    basis = tensor_basis(list(zip(fshape, dfs)))
    n_val = int(round(val_minutes * 60.0 / config.delta_t))
    cells = [(li, si) for li in range(len(lengths)) for si in range(n_seeds)]

    def run_cell(cell):
        li, si = cell
        length = lengths[li]
        if length_unit == "minutes":
            n_train = int(round(length * 60.0 / config.delta_t))
        elif length_unit == "factor":
            n_train = int(round(length * d))
        else:
            raise DataError("length_unit must be 'minutes' or 'factor'")
        cell_idx = li * n_seeds + si
        rng = Rng(config.seed, stream=cell_idx + 1)
        frames = gen_stimulus(stimulus_kind, n_train + n_val, fshape[1:],
                              rng.substream(0)).arr
        y = gen_response(truth, frames, family, config, rng=rng.substream(1))
        ctx = {
            "truth": truth, "frames": frames, "y": y, "basis": basis,
            "train_slice": slice(0, n_train),
            "val_slice": slice(n_train, n_train + n_val),
            "delta_t": config.delta_t, "fit_seed": config.seed + 7919 * cell_idx,
            "rate_scale": config.rate_scale, "max_iters": max_iters,
        }
        if alphas_spline is not None:
            ctx["alphas_spline"] = alphas_spline
        if alphas_raw is not None:
            ctx["alphas_raw"] = alphas_raw
        impl = _benchmark_methods(ctx)
        out = []
        for name in methods:
            if name not in impl:
                raise DataError(f"unknown benchmark method {name!r}")
            t0 = time.perf_counter()
            try:
                est = impl[name]()
                mse = _score(truth, est)
                err = ""
            except (DataError, NumericalError) as exc:
                mse = float("nan")
                err = str(exc)
            out.append({"method": name, "length": length, "seed": si,
                        "mse": mse, "seconds": time.perf_counter() - t0,
                        "error": err})
        return cell_idx, out

    threads = threads if threads is not None else backend.n_threads()
    results = {}
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for idx, rows in pool.map(run_cell, cells):
                results[idx] = rows
    else:
        for cell in cells:
            idx, rows = run_cell(cell)
            results[idx] = rows
    table = []
    for idx in sorted(results):
        table.extend(results[idx])
    return table
