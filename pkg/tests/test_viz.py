import numpy as np
import pytest

from deepcrl import envs, viz
from deepcrl.config import TrainConfig
from deepcrl.trainer import Agent
from deepcrl.viz import (SchemaError, emit_heatmap, emit_line_plot, emit_plot,
                         jacobi_eigh, pca_project, q_grid,
                         residual_norm_profile)


def tiny_agent(env="point_reach", depth=4, seed=0):
    cfg = TrainConfig(env=env, actor_depth=depth, critic_depth=depth, width=8,
                      repr_dim=8, batch_size=16, num_envs=4).validate()
    return Agent(cfg, envs.make_env(env), seed_base=seed)


class TestJacobi:
    def test_matches_lapack_on_random_symmetric(self):
        rng = np.random.default_rng(0)
        for d in (2, 5, 16):
            M = rng.normal(size=(d, d))
            S = (M + M.T) / 2
            vals, vecs = jacobi_eigh(S)
            ref = np.sort(np.linalg.eigvalsh(S))[::-1]
            assert np.allclose(vals, ref, atol=1e-10)
            # columns are eigenvectors: S v = lambda v
            assert np.allclose(S @ vecs, vecs * vals, atol=1e-9)

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            jacobi_eigh(np.array([[1.0, 2.0], [0.0, 1.0]]))


class TestPCA:
    def test_three_points_against_eigen_oracle(self):
        # fixed points in R^3; oracle = numpy eigh of the same covariance
        X = np.array([[1.0, 0.0, 2.0], [0.0, 1.0, 0.0], [2.0, 2.0, 1.0]])
        Xc = X - X.mean(axis=0)
        cov = Xc.T @ Xc / (len(X) - 1)
        ref_vals, ref_vecs = np.linalg.eigh(cov)
        ref_vals = ref_vals[::-1]
        coords, fractions = pca_project(X, k=3)
        assert np.allclose(fractions, np.maximum(ref_vals, 0) / ref_vals.sum(),
                           atol=1e-8)
        # projected coordinates reproduce the centered data's geometry
        assert np.allclose(coords @ coords.T, Xc @ Xc.T, atol=1e-8)

    def test_rotation_invariance(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(40, 6)) * np.array([3, 2, 1, 0.5, 0.2, 0.1])
        base = viz.explained_variance_spectrum(X)
        M = rng.normal(size=(6, 6))
        Q, _ = np.linalg.qr(M)
        rotated = viz.explained_variance_spectrum(X @ Q)
        assert np.allclose(base, rotated, atol=1e-10)

    def test_variance_fractions_sum_to_one(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(30, 8))
        assert abs(viz.explained_variance_spectrum(X).sum() - 1.0) < 1e-8

    def test_collinear_points(self):
        t = np.linspace(-1, 1, 11)[:, None]
        X = t * np.array([1.0, 2.0])
        _, fractions = pca_project(X, k=2)
        assert np.allclose(fractions, [1.0, 0.0], atol=1e-12)

    def test_isotropic_cloud(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(20_000, 2))
        _, fractions = pca_project(X, k=2)
        assert np.allclose(fractions, [0.5, 0.5], atol=0.02)

    def test_sign_convention(self):
        X = np.array([[1.0, 0.0, 2.0], [0.0, 1.0, 0.0], [2.0, 2.0, 1.0]])
        Xc = X - X.mean(axis=0)
        cov = Xc.T @ Xc / (len(X) - 1)
        _, vecs = jacobi_eigh(cov)
        for j in range(3):
            col = vecs[:, j].copy()
            if col[np.argmax(np.abs(col))] < 0:
                col = -col
            # pca_project applies exactly this fix internally
            coords_pos, _ = pca_project(X, k=3)
            assert np.allclose(np.abs(coords_pos[:, j]), np.abs(Xc @ col),
                               atol=1e-8)

    def test_too_few_points_rejected(self):
        with pytest.raises(ValueError):
            pca_project(np.ones((1, 4)))


class TestQGrid:
    def test_wall_cells_nan_and_free_cells_finite(self):
        agent = tiny_agent(env="point_u_maze")
        spec = agent.env_spec
        rows = q_grid(agent, spec, np.array([1.5, 3.5]), grid_resolution=5)
        assert len(rows) == 25
        by_pos = {(round(x, 2), round(y, 2)): e for x, y, e in rows}
        assert np.isnan(by_pos[(0.5, 0.5)])      # border wall
        assert np.isfinite(by_pos[(1.5, 1.5)])   # corridor

    def test_resolution_one(self):
        agent = tiny_agent()
        rows = q_grid(agent, agent.env_spec, np.array([4.0, 4.0]), 1)
        assert len(rows) == 1

    def test_pure_function_of_inputs(self):
        agent = tiny_agent()
        a = q_grid(agent, agent.env_spec, np.array([3.0, 3.0]), 4)
        b = q_grid(agent, agent.env_spec, np.array([3.0, 3.0]), 4)
        assert a == b

    def test_non_point_env_rejected(self):
        agent = tiny_agent(env="arm_reach")
        with pytest.raises(envs.ConfigError):
            q_grid(agent, agent.env_spec, np.zeros(2), 4)


class TestResidualNorms:
    def test_row_structure(self):
        agent = tiny_agent(depth=8)
        rng = np.random.default_rng(0)
        s, g = envs.reset_batch(agent.env_spec, 6, rng)
        a = rng.uniform(-1, 1, (6, agent.env_spec.action_dim))
        rows = residual_norm_profile(agent, s, a, g)
        # depth 8 -> 2 blocks per network, 3 networks
        assert len(rows) == 6
        assert {r[0] for r in rows} == {"actor", "critic_sa", "critic_g"}
        assert all(r[2] >= 0 for r in rows)

    def test_zeroed_block_reports_zero_norm(self):
        agent = tiny_agent(depth=8)
        store = agent.critic.sa_encoder.params
        for u in range(4):
            store[f"block1.u{u}.ln_g"].value[...] = 0.0
            store[f"block1.u{u}.ln_b"].value[...] = 0.0
        rng = np.random.default_rng(1)
        s, g = envs.reset_batch(agent.env_spec, 5, rng)
        a = rng.uniform(-1, 1, (5, agent.env_spec.action_dim))
        rows = residual_norm_profile(agent, s, a, g)
        sa_rows = {r[1]: r[2] for r in rows if r[0] == "critic_sa"}
        assert sa_rows[1] == 0.0
        assert sa_rows[0] > 0.0

    def test_deterministic(self):
        agent = tiny_agent()
        rng = np.random.default_rng(2)
        s, g = envs.reset_batch(agent.env_spec, 4, rng)
        a = np.zeros((4, agent.env_spec.action_dim))
        assert residual_norm_profile(agent, s, a, g) == \
            residual_norm_profile(agent, s, a, g)


class TestSVG:
    def test_two_point_line(self):
        svg = emit_line_plot(["t", "v"], [["0", "1"], ["1", "3"]], "t", "v")
        assert svg.count("<polyline") == 1
        pts = svg.split('points="')[1].split('"')[0].split()
        assert len(pts) == 2
        assert svg.startswith("<svg") and svg.endswith("</svg>")

    def test_nan_breaks_polyline(self):
        rows = [["0", "1"], ["1", "nan"], ["2", "2"], ["3", "3"]]
        svg = emit_line_plot(["t", "v"], rows, "t", "v")
        assert svg.count("<polyline") == 2

    def test_group_legend(self):
        rows = [["0", "1", "a"], ["1", "2", "a"], ["0", "3", "b"], ["1", "1", "b"]]
        svg = emit_line_plot(["t", "v", "g"], rows, "t", "v", group="g")
        assert svg.count("<polyline") == 2
        assert ">a</text>" in svg and ">b</text>" in svg

    def test_heatmap_rect_count(self):
        rows = [[str(x), str(y), str(x + y)] for x in range(3) for y in range(3)]
        svg = emit_heatmap(["x", "y", "v"], rows, "x", "y", "v")
        assert svg.count("<rect") == 10  # 9 cells + axes frame

    def test_heatmap_nan_grey(self):
        rows = [["0", "0", "nan"], ["1", "0", "1.0"]]
        svg = emit_heatmap(["x", "y", "v"], rows, "x", "y", "v")
        assert 'fill="rgb(160,160,160)"' in svg

    def test_empty_csv_axes_only(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        svg = emit_plot(str(path), "line", {"x": "a", "y": "b"})
        assert svg.startswith("<svg") and svg.endswith("</svg>")
        assert "<polyline" not in svg

    def test_missing_column_schema_error(self):
        with pytest.raises(SchemaError, match="missing required column"):
            emit_line_plot(["t", "v"], [["0", "1"]], "t", "w")

    def test_unknown_kind(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(SchemaError):
            emit_plot(str(path), "scatter", {"x": "a", "y": "b"})

    def test_csv_roundtrip(self, tmp_path):
        path = tmp_path / "out.csv"
        viz.write_csv(str(path), ["a", "b"], [[1, 2.5], [3, 4.0]])
        header, rows = viz.read_csv(str(path))
        assert header == ["a", "b"]
        assert rows == [["1", "2.5"], ["3", "4.0"]]
        assert path.read_bytes().endswith(b"\n") and b"\r" not in path.read_bytes()
