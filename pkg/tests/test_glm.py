"""Costs, gradients, and the proximal fitting loop."""

import numpy as np
import pytest

from rfkit import design, glm
from rfkit.errors import DataError, NumericalError
from rfkit.rng import Rng
from rfkit.splines import tensor_basis


def fd_grad(fun, x, h=1e-6):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        out.flat[i] = (fun(x + e) - fun(x - e)) / (2 * h)
    return out


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


def lnp_data(seed=7, n=240, d=8, m=None, f="exp"):
    g = Rng(seed).gen
    X = g.standard_normal((n, d))
    S = None
    if m is not None:
        S = g.standard_normal((d, m))
    cols = d if m is None else m
    b = 0.3 * g.standard_normal(cols)
    c = 0.4
    fn, _ = glm.NONLIN[f]
    Z = X if S is None else X @ S
    lam = fn(Z @ b + c)
    y = g.poisson(np.maximum(lam, 0.0) * 0.033).astype(np.float64)
    return X, S, b, c, y


class TestNonlinearities:
    def test_registry_keys(self):
        assert set(glm.NONLIN) == {"exp", "softplus", "identity"}

    def test_softplus_matches_naive(self):
        u = np.linspace(-20, 20, 101)
        sp = glm.NONLIN["softplus"][0]
        assert np.allclose(sp(u), np.log1p(np.exp(u)), rtol=1e-12)

    def test_softplus_extremes(self):
        sp, sg = glm.NONLIN["softplus"]
        u = np.array([-800.0, 800.0])
        v = sp(u)
        assert np.all(np.isfinite(v))
        assert v[0] == 0.0
        assert v[1] == 800.0
        s = sg(u)
        assert s[0] == 0.0 and s[1] == 1.0

    def test_sigmoid_matches_naive(self):
        u = np.linspace(-30, 30, 101)
        sg = glm.NONLIN["softplus"][1]
        assert np.allclose(sg(u), 1.0 / (1.0 + np.exp(-u)), rtol=1e-12)

    def test_unknown_name_rejected(self):
        with pytest.raises(DataError, match="nonlinearity"):
            glm.cost_lnp(np.ones(3), 0.0, np.eye(3), np.ones(3), f="huh")


class TestCosts:
    def test_lg_loop_oracle(self):
        g = Rng(1).gen
        X = g.standard_normal((40, 6))
        b = g.standard_normal(6)
        y = g.standard_normal(40)
        alpha = 0.7
        acc = 0.0
        for t in range(40):
            acc += (X[t] @ b - y[t]) ** 2
        want = acc / 40 + alpha * np.abs(b).sum()
        assert np.isclose(glm.cost_lg(b, X, y, alpha=alpha), want, rtol=1e-12)

    @pytest.mark.parametrize("f", ["exp", "softplus"])
    def test_lnp_loop_oracle(self, f):
        X, _, b, c, y = lnp_data(f=f)
        fn = glm.NONLIN[f][0]
        dt, alpha = 0.033, 0.2
        acc = 0.0
        for t in range(y.size):
            lam = max(fn(np.array([X[t] @ b + c]))[0], 1e-12)
            acc += -y[t] * np.log(lam) + dt * lam
        want = acc + alpha * np.abs(b).sum()
        got = glm.cost_lnp(b, c, X, y, alpha=alpha, delta_t=dt, f=f)
        assert np.isclose(got, want, rtol=1e-10)

    def test_lnln_loop_oracle(self):
        g = Rng(2).gen
        n, d, k = 60, 7, 3
        X = g.standard_normal((n, d))
        B = 0.3 * g.standard_normal((k, d))
        c, dt, R, alpha = -0.2, 0.05, 4.0, 0.1
        y = g.poisson(2.0, size=n).astype(np.float64)
        fn = glm.NONLIN["exp"][0]
        gn = glm.NONLIN["softplus"][0]
        acc = 0.0
        for t in range(n):
            z = c + sum(fn(np.array([X[t] @ B[j]]))[0] for j in range(k))
            lam = max(R * gn(np.array([z]))[0], 1e-12)
            acc += -y[t] * np.log(lam) + dt * lam
        want = acc + alpha * np.abs(B).sum()
        got = glm.cost_lnln(B, c, X, y, alpha=alpha, delta_t=dt,
                            f="exp", g="softplus", rate_scale=R)
        assert np.isclose(got, want, rtol=1e-10)

    def test_spline_projection_equivalence(self):
        X, S, b, c, y = lnp_data(m=5)
        with_s = glm.cost_lnp(b, c, X, y, S=S)
        without = glm.cost_lnp(b, c, X @ S, y)
        assert np.isclose(with_s, without, rtol=1e-12)

    def test_lnln_reduces_to_lnp(self):
        # k=1 with identity output and the rate scale off is the same model
        X, _, b, c, y = lnp_data()
        v1 = glm.cost_lnln(b[None, :], c, X, y, f="identity", g="identity",
                           rate_scale=1.0)
        v2 = glm.cost_lnp(b, c, X, y, f="identity")
        assert np.isclose(v1, v2, rtol=1e-12)
        v3 = glm.cost_lnln(b[None, :], 0.0, X, y, f="exp", g="identity")
        v4 = glm.cost_lnp(b, 0.0, X, y, f="exp")
        assert np.isclose(v3, v4, rtol=1e-12)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nonfinite_rate_raises(self):
        X = np.full((5, 2), 400.0)
        with pytest.raises(NumericalError, match="non-finite"):
            glm.cost_lnp(np.array([10.0, 10.0]), 0.0, X, np.ones(5))


class TestGradients:
    def test_lg_finite_difference(self):
        g = Rng(3).gen
        X = g.standard_normal((50, 6))
        y = g.standard_normal(50)
        b = g.standard_normal(6)
        got = glm.grad_lg(b, X, y)
        want = fd_grad(lambda v: glm.cost_lg(v, X, y), b)
        assert rel_err(got, want) < 1e-6

    def test_lg_closed_form_at_zero(self):
        g = Rng(4).gen
        X = g.standard_normal((30, 5))
        y = g.standard_normal(30)
        got = glm.grad_lg(np.zeros(5), X, y)
        assert np.allclose(got, -2.0 / 30 * (X.T @ y), rtol=1e-12)

    @pytest.mark.parametrize("f", ["exp", "softplus"])
    def test_lnp_finite_difference(self, f):
        X, S, b, c, y = lnp_data(m=5, f=f)
        gb, gc = glm.grad_lnp(b, c, X, y, S=S, f=f)
        want_b = fd_grad(lambda v: glm.cost_lnp(v, c, X, y, S=S, f=f), b)
        want_c = fd_grad(lambda v: glm.cost_lnp(b, v[0], X, y, S=S, f=f),
                         np.array([c]))[0]
        assert rel_err(gb, want_b) < 1e-5
        assert abs(gc - want_c) / max(abs(want_c), 1e-8) < 1e-5

    def test_lnln_finite_difference(self):
        g = Rng(5).gen
        n, d, k = 80, 6, 2
        X = g.standard_normal((n, d))
        B = 0.3 * g.standard_normal((k, d))
        c = 0.2
        y = g.poisson(1.5, size=n).astype(np.float64)
        kw = dict(f="exp", g="softplus", rate_scale=2.0)
        gB, gc = glm.grad_lnln(B, c, X, y, **kw)
        want_B = fd_grad(
            lambda v: glm.cost_lnln(v.reshape(k, d), c, X, y, **kw), B.ravel()
        ).reshape(k, d)
        want_c = fd_grad(
            lambda v: glm.cost_lnln(B, v[0], X, y, **kw), np.array([c]))[0]
        assert rel_err(gB, want_B) < 1e-5
        assert abs(gc - want_c) / max(abs(want_c), 1e-8) < 1e-5

    def test_zero_at_perfect_prediction(self):
        # y = delta * lambda makes the Poisson score vanish identically
        X, _, b, c, _ = lnp_data()
        lam = np.exp(X @ b + c)
        y = 0.033 * lam
        gb, gc = glm.grad_lnp(b, c, X, y, delta_t=0.033)
        scale = np.linalg.norm(X.T @ (0.033 * lam))
        assert np.linalg.norm(gb) < 1e-10 * scale
        assert abs(gc) < 1e-10 * scale

    def test_dispatcher(self):
        g = Rng(6).gen
        X = g.standard_normal((20, 4))
        y = g.standard_normal(20)
        b = g.standard_normal(4)
        assert np.allclose(glm.grad("lg", b, X, y), glm.grad_lg(b, X, y))
        with pytest.raises(DataError, match="kind"):
            glm.grad("huh", b, X, y)


class TestModelSpec:
    def test_unknown_family(self):
        with pytest.raises(DataError, match="family"):
            glm.ModelSpec(family="glm")

    def test_single_filter_families(self):
        with pytest.raises(DataError, match="one filter"):
            glm.ModelSpec(family="lnp", k=2)
        glm.ModelSpec(family="lnln", k=3)

    def test_lg_forces_identity(self):
        spec = glm.ModelSpec(family="lg", f="exp", g="softplus")
        assert spec.f == "identity" and spec.g == "identity"

    def test_k_positive(self):
        with pytest.raises(DataError, match="k"):
            glm.ModelSpec(family="lnln", k=0)


def lg_problem(seed=3, n=500, d=12, sd=0.3):
    g = Rng(seed).gen
    X = g.standard_normal((n, d))
    w = np.exp(-0.5 * ((np.arange(d) - 5) / 2.0) ** 2)
    w /= np.linalg.norm(w)
    y = X @ w + sd * g.standard_normal(n)
    Xv = g.standard_normal((n // 2, d))
    yv = Xv @ w + sd * g.standard_normal(n // 2)
    return X, y, Xv, yv, w


class TestFit:
    def test_lg_approaches_least_squares(self):
        X, y, Xv, yv, _ = lg_problem()
        res = glm.fit(glm.ModelSpec(family="lg"), X, y, Xv, yv)
        ls = np.linalg.lstsq(X, y, rcond=None)[0]
        assert np.mean((X @ res.b - y) ** 2) < 1.05 * np.mean((X @ ls - y) ** 2)
        assert np.corrcoef(res.b, ls)[0, 1] > 0.99

    def test_deterministic(self):
        X, y, Xv, yv, _ = lg_problem()
        spec = glm.ModelSpec(family="lg")
        opts = glm.FitOptions(l1_weight=0.01, seed=4)
        r1 = glm.fit(spec, X, y, Xv, yv, opts)
        r2 = glm.fit(spec, X, y, Xv, yv, opts)
        assert np.array_equal(r1.coeffs, r2.coeffs)
        assert r1.history == r2.history
        assert r1.best_iter == r2.best_iter

    def test_seed_changes_init(self):
        X, y, Xv, yv, _ = lg_problem()
        spec = glm.ModelSpec(family="lg")
        r1 = glm.fit(spec, X, y, Xv, yv, glm.FitOptions(seed=0, max_iters=5))
        r2 = glm.fit(spec, X, y, Xv, yv, glm.FitOptions(seed=1, max_iters=5))
        assert not np.array_equal(r1.coeffs, r2.coeffs)

    def test_best_iter_is_argmin(self):
        X, y, Xv, yv, _ = lg_problem()
        res = glm.fit(glm.ModelSpec(family="lg"), X, y, Xv, yv)
        vc = res.history["val_cost"]
        assert res.best_iter == int(np.argmin(vc))
        assert res.stopped_by in ("max_iters", "train_plateau", "val_increase")

    def test_history_shape(self):
        X, y, Xv, yv, _ = lg_problem()
        res = glm.fit(glm.ModelSpec(family="lg"), X, y, Xv, yv,
                      glm.FitOptions(max_iters=40))
        h = res.history
        assert set(h) == {"train_cost", "val_cost", "train_corr", "val_corr"}
        lens = {len(v) for v in h.values()}
        assert len(lens) == 1 and lens.pop() <= 40

    def test_history_matches_returned_params(self):
        # train entries carry the penalty, validation entries do not
        X, y, Xv, yv, _ = lg_problem()
        alpha = 0.05
        res = glm.fit(glm.ModelSpec(family="lg"), X, y, Xv, yv,
                      glm.FitOptions(l1_weight=alpha))
        i = res.best_iter
        assert np.isclose(res.history["val_cost"][i],
                          glm.cost_lg(res.b, Xv, yv), rtol=1e-12)
        assert np.isclose(res.history["train_cost"][i],
                          glm.cost_lg(res.b, X, y, alpha=alpha), rtol=1e-12)

    def test_lnp_history_matches_returned_params(self):
        g = Rng(8).gen
        d = 10
        stim = g.standard_normal(1500)
        w = np.exp(-0.5 * ((np.arange(d) - 4) / 2.0) ** 2)
        w /= np.linalg.norm(w)
        X = design.build_design(stim, d).X
        y = g.poisson(np.exp(X @ w) * 0.033).astype(np.float64)
        spec = glm.ModelSpec(family="lnp", f="exp")
        res = glm.fit(spec, X[:1200], y[:1200], X[1200:], y[1200:])
        want = glm.cost_lnp(res.b, res.intercept, X[1200:], y[1200:],
                            delta_t=spec.delta_t, f="exp")
        assert np.isclose(res.history["val_cost"][res.best_iter], want,
                          rtol=1e-12)

    def test_lnp_recovers_filter(self):
        g = Rng(7).gen
        d = 15
        stim = g.standard_normal(3000)
        w = np.exp(-0.5 * ((np.arange(d) - 5) / 2.5) ** 2) \
            * np.cos((np.arange(d) - 5) / 2.0)
        w /= np.linalg.norm(w)
        X = design.build_design(stim, d).X
        y = g.poisson(np.exp(X @ w + 0.5) * 0.033).astype(np.float64)
        res = glm.fit(glm.ModelSpec(family="lnp", f="exp"),
                      X[:2400], y[:2400], X[2400:], y[2400:])
        assert np.corrcoef(res.b, w)[0, 1] > 0.9

    def test_projected_design_equivalence(self):
        g = Rng(9).gen
        nt, nx = 12, 10
        basis = tensor_basis([(nt, 6), (nx, 4)])
        stim = g.standard_normal((500, nx))
        y = g.standard_normal(500)
        X = design.build_design(stim, nt).X
        Z = X @ basis.full
        spec = glm.ModelSpec(family="lg", basis=basis)
        r1 = glm.fit(spec, X[:400], y[:400], X[400:], y[400:])
        r2 = glm.fit(spec, Z[:400], y[:400], Z[400:], y[400:], projected=True)
        assert np.array_equal(r1.coeffs, r2.coeffs)
        assert r1.history == r2.history

    def test_l1_produces_exact_zeros(self):
        g = Rng(9).gen
        w = np.zeros(20)
        w[[2, 8, 15]] = [1.0, -0.8, 0.6]
        X = g.standard_normal((600, 20))
        y = X @ w + 0.1 * g.standard_normal(600)
        Xv = g.standard_normal((200, 20))
        yv = Xv @ w + 0.1 * g.standard_normal(200)
        spec = glm.ModelSpec(family="lg")
        r0 = glm.fit(spec, X, y, Xv, yv, glm.FitOptions(l1_weight=0.0))
        r1 = glm.fit(spec, X, y, Xv, yv, glm.FitOptions(l1_weight=0.05))
        assert int((r0.b == 0).sum()) < int((r1.b == 0).sum())
        assert int((r1.b == 0).sum()) >= 5
        assert np.all(r1.b[[2, 8, 15]] != 0)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_names_iteration(self):
        g = Rng(7).gen
        d = 15
        stim = g.standard_normal(1000)
        X = design.build_design(stim, d).X
        y = g.poisson(1.0, size=1000).astype(np.float64)
        with pytest.raises(NumericalError, match="iteration"):
            glm.fit(glm.ModelSpec(family="lnp", f="exp"),
                    X[:800], y[:800], X[800:], y[800:],
                    glm.FitOptions(lr=800.0, max_iters=20))

    def test_empty_validation_rejected(self):
        X, y, _, _, _ = lg_problem()
        with pytest.raises(DataError, match="validation"):
            glm.fit(glm.ModelSpec(family="lg"), X, y, X[:0], y[:0])

    def test_row_mismatch_rejected(self):
        X, y, Xv, yv, _ = lg_problem()
        with pytest.raises(DataError, match="rows"):
            glm.fit(glm.ModelSpec(family="lg"), X, y[:-3], Xv, yv)


class TestGridsearchDf:
    def setup_method(self):
        g = Rng(11).gen
        self.nt, self.nx = 15, 12
        basis = tensor_basis([(self.nt, 7), (self.nx, 5)])
        coef = g.standard_normal(basis.full.shape[1])
        w = (basis.full @ coef).reshape(self.nt, self.nx)
        self.w = w / np.linalg.norm(w)
        self.stim = g.standard_normal((900, self.nx))
        self.y = design.drive(self.stim, self.w) \
            + 0.3 * g.standard_normal(900)
        self.split = design.split(900, 700, 200, 0, 1)

    def test_recovers_generative_dfs(self):
        best, table = glm.gridsearch_df(self.stim, self.y, self.split,
                                        self.nt, [[3, 7], [3, 5]])
        assert best == (7, 5)
        assert [row[0] for row in table] == \
            [(3, 3), (3, 5), (7, 3), (7, 5)]
        scores = dict(table)
        assert scores[(7, 5)] > scores[(3, 3)]
        assert scores[best] == max(s for _, s in table)

    def test_threads_do_not_change_result(self):
        _, t1 = glm.gridsearch_df(self.stim, self.y, self.split,
                                  self.nt, [[3, 7], [3, 5]], threads=1)
        _, t2 = glm.gridsearch_df(self.stim, self.y, self.split,
                                  self.nt, [[3, 7], [3, 5]], threads=2)
        assert t1 == t2

    def test_grid_must_cover_dimensions(self):
        with pytest.raises(DataError, match="per filter dimension"):
            glm.gridsearch_df(self.stim, self.y, self.split, self.nt, [[5]])

    def test_empty_grid(self):
        with pytest.raises(DataError, match="empty"):
            glm.gridsearch_df(self.stim, self.y, self.split, self.nt,
                              [[], [4]])


class TestGridsearchL1:
    def setup_method(self):
        g = Rng(5).gen
        n, d = 600, 20
        self.X = g.standard_normal((n, d))
        w = g.standard_normal(d)
        w /= np.linalg.norm(w)
        self.y = self.X @ w + 0.3 * g.standard_normal(n)
        self.Xv = g.standard_normal((200, d))
        self.yv = self.Xv @ w + 0.3 * g.standard_normal(200)
        self.data = (self.X, self.y, self.Xv, self.yv)

    def test_unsorted_alphas_rejected(self):
        with pytest.raises(DataError, match="ascending"):
            glm.gridsearch_l1(self.data, glm.ModelSpec(family="lg"),
                              [0.1, 0.0])

    def test_stops_when_performance_drops(self):
        # a dense truth punishes any serious shrinkage, so the sweep should
        # bail out after the second alpha instead of visiting all four
        best, results, perfs = glm.gridsearch_l1(
            self.data, glm.ModelSpec(family="lg"), [0.0, 2.0, 4.0, 8.0])
        assert best == 0.0
        assert list(perfs) == [0.0, 2.0]
        assert perfs[2.0] < perfs[0.0]
        assert set(results) == set(perfs)
        assert results[2.0].l1_weight == 2.0

    def test_tie_keeps_smaller_alpha(self):
        # an alpha below float resolution fits bitwise identically
        best, _, perfs = glm.gridsearch_l1(
            self.data, glm.ModelSpec(family="lg"), [0.0, 1e-300])
        assert perfs[0.0] == perfs[1e-300]
        assert best == 0.0
