"""Experiment recipes and the run driver.

A run owns one output directory and writes::

    manifest.json      config, seeds, derived geometry and mode sets
    record.csv         per-epoch measurements (columns fixed per experiment)
    prediction.csv     final prediction on the evaluation points
    spectrum.csv       1D experiments only
    checkpoints/       ckpt-<epoch>.spca at the configured cadence
    final.spca         state after the last epoch

Every random draw comes from :func:`make_rng` streams keyed by the run seed,
so a manifest is enough to rebuild every artifact bit for bit.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import os
import shutil

import numpy as np

from .. import tensor as T
from ..attention_net import AttnMask, CrossAttnNet, DenseNet, NetConfig, RFFNet, init_net
from ..errors import ContractError, NumericalError, SpectraError
from ..feature_bank import make_rng
from ..optimize import Adam, AfeSchedule, StepSchedule, TrainingRecord, train_step
from ..pde_solvers import (FIXED, OPTIMAL, Ball, Box, MixedSolution, PdeProblem,
                           build_pb_domain, mixed_loss, pinn_loss, ritz_loss)
from ..spectral import (Spectrum, appendix_loss, dft_real, dominant_modes, freq_error, gradient_ratio,
                        hfen, mode_projection, periodic_grid, psnr, rel_l2, toy_mode_dynamics)
from ..targets import HEATMAP_MODES, check_source, get_target
from .checkpoint import Checkpoint, atomic_write, load_checkpoint, save_checkpoint
from .config import ExperimentConfig, parse_config, serialize_config
from .images import check_budget, downsample, encode_ppm, load_image, pixel_centers

log = logging.getLogger(__name__)

ARTIFACTS = ("manifest.json", "record.csv", "prediction.csv", "spectrum.csv", "kpost.csv",
             "reconstruction.ppm", "final.spca")

_PDE = ["epoch", "loss", "lr", "alpha", "rel_l2"]
RECORD_COLUMNS = {
    "regress": ["epoch", "loss", "lr", "rel_l2"],
    "image": ["epoch", "loss", "lr", "rel_l2", "psnr", "hfen"],
    "afe": ["epoch", "stage", "loss", "lr", "eta", "rel_l2", "baseline_loss", "baseline_rel_l2"],
    "heatmap": ["epoch", "loss", "lr", "rel_l2"] + [f"dF_{k}" for k in HEATMAP_MODES],
    "poisson1d": _PDE,
    "poisson2d": _PDE,
    "pb3d": _PDE,
    "appendix": ["epoch", "c1", "c2", "c1_exact", "c2_exact"],
}


# ---------------------------------------------------------------- helpers

def predict(model, x, chunk: int = 8192) -> np.ndarray:
    """Forward pass in chunks, off the tape; returns (B, d_out) or (B,)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    parts = [np.asarray(model(x[i:i + chunk]).data) for i in range(0, x.shape[0], chunk)]
    return np.concatenate(parts) if parts else np.zeros((0,))


def net_config(cfg: ExperimentConfig, d_in: int, d_out: int = 1) -> NetConfig:
    return NetConfig(d_in=d_in, d_out=d_out, m_base=cfg.m_base, K=cfg.K, sigma=cfg.sigma,
                     beta0=cfg.beta0, learn_beta=cfg.learn_beta,
                     mean_shift=None if cfg.mean_shift is None else (cfg.mean_shift,) * d_in,
                     d_q=cfg.d_q, n_heads=cfg.n_heads, n_layers=cfg.n_layers)


def build_model(cfg: ExperimentConfig, d_in: int, d_out: int = 1, prefix: str = ""):
    """The configured variant; ``width > 0`` fixes the RFF-NN hidden width."""
    nc = net_config(cfg, d_in, d_out)
    if cfg.model == "rff-nn" and cfg.width:
        return RFFNet(nc, cfg.seed, width=cfg.width, prefix=prefix)
    return init_net(nc, cfg.seed, cfg.model, prefix=prefix)


def _mse(pred, target) -> T.Tensor:
    return T.mean(T.square(T.sub(pred, target)))


INTEGER_COLUMNS = ("epoch", "stage")


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(v) for v in r])
    return buf.getvalue()


def record_csv(record: TrainingRecord) -> str:
    def value(col, v):
        return int(v) if col in INTEGER_COLUMNS and v is not None else v
    return csv_text(record.columns, ([value(c, r[c]) for c in record.columns] for r in record.rows))


class _Branch:
    """Parameters with their Adam state, saved under a name prefix."""

    def __init__(self, params: dict, cfg: ExperimentConfig):
        self.params = params
        self.adam = Adam(weight_decay=cfg.weight_decay)

    def save(self, prefix: str, out: dict) -> None:
        for name, p in self.params.items():
            out[f"{prefix}param/{name}"] = p.data
        for name in self.params:
            if name in self.adam.m:
                out[f"{prefix}adam.m/{name}"] = self.adam.m[name]
                out[f"{prefix}adam.v/{name}"] = self.adam.v[name]
        out[f"{prefix}adam.step"] = np.array([float(self.adam.step_count)])

    def load(self, prefix: str, tensors: dict) -> None:
        for name, p in self.params.items():
            key = f"{prefix}param/{name}"
            if key not in tensors or tensors[key].shape != p.data.shape:
                raise ContractError(f"checkpoint does not match the model: {key}")
            p.data[...] = tensors[key]
        self.adam.reset()
        for name in self.params:
            if f"{prefix}adam.m/{name}" in tensors:
                self.adam.m[name] = tensors[f"{prefix}adam.m/{name}"].copy()
                self.adam.v[name] = tensors[f"{prefix}adam.v/{name}"].copy()
        self.adam.step_count = int(tensors[f"{prefix}adam.step"][0])


# ---------------------------------------------------------------- sessions

class Session:
    """One experiment: owns models, data and RNG streams; trains one epoch at a time."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.columns = RECORD_COLUMNS[cfg.experiment]
        self.schedule = StepSchedule(cfg.lr, cfg.lr_step, cfg.lr_gamma)
        self.rng = make_rng(cfg.seed, "batch")
        self.branches: dict[str, _Branch] = {}

    @property
    def total_epochs(self) -> int:
        return self.cfg.epochs

    def epoch(self, e: int) -> dict:
        raise NotImplementedError

    def metrics(self, e: int) -> dict:
        return {}

    def manifest(self) -> dict:
        return {}

    def meta(self) -> dict:
        return {}

    def restore_meta(self, meta: dict) -> None:
        pass

    def outputs(self) -> dict[str, bytes]:
        return {}

    def _step(self, branch: str, loss_fn, e: int) -> tuple[float, float]:
        rate = self.schedule.lr_at(e - 1)
        b = self.branches[branch]
        return train_step(loss_fn, b.params, b.adam, rate, self.cfg.clip, epoch=e), rate

    def state(self) -> tuple[dict, dict]:
        tensors = {}
        for name, b in self.branches.items():
            b.save(f"{name}/", tensors)
        return tensors, self.rng.bit_generator.state

    def restore(self, tensors: dict, rng_state: dict, meta: dict) -> None:
        self.restore_meta(meta)
        for name, b in self.branches.items():
            b.load(f"{name}/", tensors)
        self.rng.bit_generator.state = rng_state


class RegressSession(Session):
    """Mini-batch regression of f1, f2 or f3 on a closed uniform grid."""

    def __init__(self, cfg):
        super().__init__(cfg)
        self.target = get_target(cfg.target)
        side = np.linspace(-1.0, 1.0, cfg.grid)
        yy, xx = np.meshgrid(side, side, indexing="ij")
        self.x = np.stack([xx.ravel(), yy.ravel()], axis=1)
        self.y = self.target(self.x).reshape(-1, 1)
        self.net = build_model(cfg, 2)
        self.branches["model"] = _Branch(self.net.parameters(), cfg)

    def epoch(self, e):
        idx = self.rng.integers(0, self.x.shape[0], self.cfg.batch)
        xb, yb = self.x[idx], self.y[idx]
        loss, rate = self._step("model", lambda: _mse(self.net(xb), yb), e)
        return {"loss": loss, "lr": rate}

    def metrics(self, e):
        return {"rel_l2": rel_l2(predict(self.net, self.x), self.y)}

    def manifest(self):
        return {"parameters": self.net.n_params(), "grid_points": int(self.x.shape[0])}

    def outputs(self):
        pred = predict(self.net, self.x)[:, 0]
        rows = zip(self.x[:, 0], self.x[:, 1], pred, self.y[:, 0])
        return {"prediction.csv": csv_text(["x", "y", "prediction", "exact"], rows).encode()}


class ImageSession(Session):
    """Full-batch coordinate-to-RGB regression on a downsampled PPM image."""

    def __init__(self, cfg, base_dir: str = "."):
        super().__init__(cfg)
        if not cfg.image:
            raise ContractError("image experiment needs `image = <path to .ppm>`")
        path = cfg.image if os.path.isabs(cfg.image) else os.path.join(base_dir, cfg.image)
        self.image = downsample(load_image(path), cfg.downsample)
        check_budget(self.image, cfg.max_pixels)
        self.h, self.w = self.image.shape[:2]
        self.x = pixel_centers(self.h, self.w)
        self.y = self.image.reshape(-1, 3)
        self.net = build_model(cfg, 2, 3)
        self.branches["model"] = _Branch(self.net.parameters(), cfg)

    def epoch(self, e):
        loss, rate = self._step("model", lambda: _mse(self.net(self.x), self.y), e)
        return {"loss": loss, "lr": rate}

    def _recon(self):
        return predict(self.net, self.x).reshape(self.h, self.w, 3)

    def metrics(self, e):
        r = self._recon()
        return {"rel_l2": rel_l2(r, self.image), "psnr": psnr(r, self.image),
                "hfen": hfen(r, self.image)}

    def manifest(self):
        return {"parameters": self.net.n_params(), "height": self.h, "width": self.w}

    def outputs(self):
        r = self._recon()
        rows = ((i, j, *r[i, j]) for i in range(self.h) for j in range(self.w))
        return {"prediction.csv": csv_text(["row", "col", "r", "g", "b"], rows).encode(),
                "reconstruction.ppm": encode_ppm(r)}


class AfeSession(Session):
    """Stage 1 trains one RFF-CA; stage 2 trains the AFE net and a baseline copy in lockstep."""

    def __init__(self, cfg):
        super().__init__(cfg)
        if cfg.model == "rff-nn":
            raise ContractError("adaptive frequency enhancement needs a cross-attention model")
        self.target = get_target("afe")
        self.x_train = periodic_grid(cfg.n_train).reshape(-1, 1)
        self.y_train = self.target(self.x_train).reshape(-1, 1)
        self.x_test = periodic_grid(cfg.n_test).reshape(-1, 1)
        self.y_test = self.target(self.x_test)
        self.net = build_model(cfg, 1)
        self.baseline = None
        self.modes: list[int] | None = None
        self.spectrum = None
        self.mask_schedule = AfeSchedule(cfg.eta_start, cfg.hold_frac, max(cfg.e2, 1))
        self.branches["afe"] = _Branch(self.net.parameters(), cfg)

    @property
    def total_epochs(self):
        return self.cfg.e1 + self.cfg.e2

    def _eta(self, e) -> float:
        eta = self.mask_schedule.eta(e - self.cfg.e1) if e > self.cfg.e1 else self.cfg.eta_start
        return eta + 0.0  # no negative zero in the record

    def _extract_modes(self) -> None:
        values = predict(self.net, periodic_grid(self.cfg.n_fft).reshape(-1, 1))[:, 0]
        self.spectrum = dft_real(values)
        self._enter_stage2(dominant_modes(self.spectrum, self.cfg.lam), fresh=True)

    def _enter_stage2(self, modes, fresh: bool) -> None:
        """Clone the stage-1 net as the baseline, then give the AFE net its posterior tokens."""
        self.modes = list(modes)
        self.baseline = build_model(self.cfg, 1, prefix="baseline.")
        base_branch = _Branch(self.baseline.parameters(), self.cfg)
        if fresh:
            src = self.branches["afe"]
            for name, p in self.net.parameters().items():
                self.baseline.params["baseline." + name].data[...] = p.data
                if name in src.adam.m:
                    base_branch.adam.m["baseline." + name] = src.adam.m[name].copy()
                    base_branch.adam.v["baseline." + name] = src.adam.v[name].copy()
            base_branch.adam.step_count = src.adam.step_count
        self.branches["baseline"] = base_branch
        if self.modes:
            self.net.add_posterior(self.modes, self.cfg.seed)

    def epoch(self, e):
        if e == self.cfg.e1 + 1 and self.modes is None:
            self._extract_modes()
        x, y = self.x_train, self.y_train
        if self.modes is None:
            loss, rate = self._step("afe", lambda: _mse(self.net(x), y), e)
            return {"stage": 1, "loss": loss, "lr": rate, "eta": None}
        mask = AttnMask(self._eta(e))
        loss, rate = self._step("afe", lambda: _mse(self.net(x, mask), y), e)
        base_loss, _ = self._step("baseline", lambda: _mse(self.baseline(x), y), e)
        return {"stage": 2, "loss": loss, "lr": rate, "eta": mask.eta, "baseline_loss": base_loss}

    def metrics(self, e):
        mask = AttnMask(self._eta(e)) if self.modes is not None else None
        out = {"rel_l2": rel_l2(predict(lambda x: self.net(x, mask), self.x_test)[:, 0], self.y_test)}
        if self.baseline is not None:
            out["baseline_rel_l2"] = rel_l2(predict(self.baseline, self.x_test)[:, 0], self.y_test)
        return out

    def meta(self):
        meta = {"modes": self.modes}
        if self.spectrum is not None:
            meta["spectrum"] = [[c.real, c.imag] for c in self.spectrum.coefficients]
        return meta

    def restore_meta(self, meta):
        if meta.get("modes") is not None:
            self._enter_stage2(meta["modes"], fresh=False)
            coeffs = np.array([complex(a, b) for a, b in meta["spectrum"]])
            self.spectrum = Spectrum(coeffs, self.cfg.n_fft, 1.0)

    def manifest(self):
        return {"posterior_modes": self.modes, "parameters": self.net.n_params(),
                "n_fft": self.cfg.n_fft, "lam": self.cfg.lam}

    def outputs(self):
        files = {}
        final_mask = AttnMask(self._eta(self.total_epochs)) if self.modes is not None else None
        pred = predict(lambda x: self.net(x, final_mask), self.x_test)[:, 0]
        base = predict(self.baseline, self.x_test)[:, 0] if self.baseline is not None else pred
        rows = zip(self.x_test[:, 0], pred, base, self.y_test)
        files["prediction.csv"] = csv_text(["x", "afe", "baseline", "exact"], rows).encode()
        if self.spectrum is not None:
            norm = self.spectrum.normalized()
            rows = ((k, mag, norm[k], ph) for k, mag, ph in self.spectrum.csv_rows())
            files["spectrum.csv"] = csv_text(["k", "magnitude", "normalized", "phase"], rows).encode()
            files["kpost.csv"] = csv_text(["k"], ([k] for k in self.modes)).encode()
        return files


def _spectrum_csv(values) -> bytes:
    """DFT of a prediction on a closed grid, dropping the duplicated right endpoint."""
    spec = dft_real(np.asarray(values)[:-1], length=2.0)
    return csv_text(["k", "magnitude", "phase"], spec.csv_rows()).encode()


class HeatmapSession(Session):
    """Frequency-wise training behaviour on sin(pi x) + sin(5 pi x) + sin(20 pi x)."""

    def __init__(self, cfg):
        super().__init__(cfg)
        self.target = get_target("heatmap")
        if cfg.loss != "regression":
            self.source_error = check_source(self.target)
        self.problem = PdeProblem(Box(1), self.target.source_values, _zero, gamma=cfg.penalty,
                                  n_interior=cfg.n_interior, n_boundary=1, h=cfg.fd_h)
        self.x_eval = np.linspace(-1.0, 1.0, cfg.grid).reshape(-1, 1)
        self.y_eval = self.target(self.x_eval)
        self.net = build_model(cfg, 1)
        self.branches["model"] = _Branch(self.net.parameters(), cfg)

    def epoch(self, e):
        xr, xb = self.problem.sample(self.rng)
        if self.cfg.loss == "regression":
            yr = self.target(xr)
            fn = lambda: _mse(self.net.scalar(xr), yr)
        elif self.cfg.loss == "pinn":
            fn = lambda: pinn_loss(self.problem, self.net.scalar, xr, xb)
        else:
            fn = lambda: ritz_loss(self.problem, self.net.scalar, xr, xb)
        loss, rate = self._step("model", fn, e)
        return {"loss": loss, "lr": rate}

    def _pred(self):
        return predict(self.net, self.x_eval)[:, 0]

    def metrics(self, e):
        pred = self._pred()
        errors = freq_error(mode_projection(pred, HEATMAP_MODES), np.ones(len(HEATMAP_MODES)))
        out = {"rel_l2": rel_l2(pred, self.y_eval)}
        out.update({f"dF_{k}": float(d) for k, d in zip(HEATMAP_MODES, errors)})
        return out

    def manifest(self):
        return {"parameters": self.net.n_params(), "modes": list(HEATMAP_MODES),
                "source_check": getattr(self, "source_error", None)}

    def outputs(self):
        pred = self._pred()
        rows = zip(self.x_eval[:, 0], pred, self.y_eval)
        return {"prediction.csv": csv_text(["x", "prediction", "exact"], rows).encode(),
                "spectrum.csv": _spectrum_csv(pred)}


def _zero(x):
    return np.zeros(np.atleast_2d(x).shape[0])


class MixedPdeSession(Session):
    """u_h + alpha u_l on the 1D/2D Poisson or the Poisson-Boltzmann problem."""

    def __init__(self, cfg):
        super().__init__(cfg)
        strategy, value = cfg.alpha_strategy()
        if cfg.loss == "ritz" and strategy == OPTIMAL:
            raise ContractError("alpha = optimal needs loss = pinn")
        if cfg.loss == "regression":
            raise ContractError(f"{cfg.experiment} trains with loss = pinn or ritz")
        exp = cfg.experiment
        self.geometry = None
        if exp == "poisson1d":
            self.target = get_target("poisson1d", nu=cfg.nu)
            domain, kappa, boundary = Box(1), None, self.target
            self.source_error = check_source(self.target)
            self.x_eval = np.linspace(-1.0, 1.0, cfg.grid).reshape(-1, 1)
        elif exp == "poisson2d":
            self.target = get_target("poisson2d", mu=cfg.mu)
            domain, kappa, boundary = Box(2), None, self.target
            self.source_error = check_source(self.target)
            side = np.linspace(-1.0, 1.0, cfg.grid)
            yy, xx = np.meshgrid(side, side, indexing="ij")
            self.x_eval = np.stack([xx.ravel(), yy.ravel()], axis=1)
        else:
            self.target = get_target("pb3d")
            self.geometry = build_pb_domain(cfg.seed)
            domain, kappa, boundary = Ball(3), self.geometry.kappa, _zero
            self.source_error = check_source(self.target, kappa=self.geometry.kappa)
            self.x_eval = Ball(3).sample_interior(cfg.grid, make_rng(cfg.seed, "test-points"))
        source = (lambda x: self.target.source_values(x, kappa)) if kappa else self.target.source_values
        self.problem = PdeProblem(domain, source, boundary, kappa=kappa, gamma=cfg.penalty,
                                  n_interior=cfg.n_interior, n_boundary=cfg.n_boundary, h=cfg.fd_h)
        self.y_eval = self.target(self.x_eval)
        d = domain.dim
        u_h = build_model(cfg, d, prefix="high.")
        u_l = DenseNet(d, cfg.low_width, cfg.low_depth, seed=cfg.seed, prefix="low.")
        if strategy == FIXED:
            self.mixed = MixedSolution.fixed(u_h, u_l, value)
        else:
            self.mixed = MixedSolution(u_h, u_l, strategy)
        self.branches["model"] = _Branch(self.mixed.parameters(), cfg)

    def epoch(self, e):
        xr, xb = self.problem.sample(self.rng)
        loss, rate = self._step("model", lambda: mixed_loss(self.problem, self.mixed, xr, xb,
                                                            self.cfg.loss), e)
        return {"loss": loss, "lr": rate, "alpha": self.mixed.alpha_value}

    def _pred(self):
        parts = [self.mixed.components(self.x_eval[i:i + 8192])
                 for i in range(0, self.x_eval.shape[0], 8192)]
        return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])

    def metrics(self, e):
        uh, aul = self._pred()
        return {"rel_l2": rel_l2(uh + aul, self.y_eval)}

    def state(self):
        tensors, rng = super().state()
        tensors["alpha"] = self.mixed.alpha.data
        return tensors, rng

    def restore(self, tensors, rng_state, meta):
        super().restore(tensors, rng_state, meta)
        self.mixed.alpha.data[...] = tensors["alpha"]

    def manifest(self):
        out = {"parameters": self.mixed.u_h.n_params() + self.mixed.u_l.n_params(),
               "alpha_strategy": self.mixed.strategy, "source_check": self.source_error,
               "evaluation_points": int(self.x_eval.shape[0])}
        if self.geometry is not None:
            out["geometry"] = self.geometry.to_dict()
        return out

    def outputs(self):
        uh, aul = self._pred()
        names = ["x", "y", "z"][:self.x_eval.shape[1]]
        rows = (list(p) + [a + b, a, b, t] for p, a, b, t in zip(self.x_eval, uh, aul, self.y_eval))
        files = {"prediction.csv": csv_text(names + ["prediction", "u_h", "alpha_u_l", "exact"],
                                            rows).encode()}
        if self.x_eval.shape[1] == 1:
            files["spectrum.csv"] = _spectrum_csv(uh + aul)
        return files


class AppendixSession(Session):
    """Decoupled gradient-descent dynamics of two mode coefficients."""

    def __init__(self, cfg):
        super().__init__(cfg)
        self.dyn = toy_mode_dynamics(cfg.mode_k, cfg.mode_c, cfg.order, cfg.euler_eta, cfg.steps)
        c1, c2 = T.Tensor([0.0], "c1", True), T.Tensor([0.0], "c2", True)
        with T.Tape() as tape:
            loss = appendix_loss(c1, c2, cfg.mode_k, cfg.mode_c, cfg.order)
        self.grads = tape.backward(loss)

    @property
    def total_epochs(self):
        return self.cfg.steps

    def _row(self, e):
        d = self.dyn
        return {"c1": d.c1[e], "c2": d.c2[e], "c1_exact": d.c1_exact[e], "c2_exact": d.c2_exact[e]}

    def epoch(self, e):
        return self._row(e)

    def metrics(self, e):
        return self._row(e) if e == 0 else {}

    def manifest(self):
        g1, g2 = float(self.grads["c1"][0]), float(self.grads["c2"][0])
        return {"gradient_ratio": gradient_ratio(self.cfg.mode_k, self.cfg.mode_c, self.cfg.order),
                "initial_gradients": [g1, g2],
                "tape_ratio": abs(g2) / abs(g1),
                "initial_slope_ratio": self.dyn.initial_slope_ratio()}


def make_session(cfg: ExperimentConfig, base_dir: str = ".") -> Session:
    kinds = {"regress": RegressSession, "afe": AfeSession, "heatmap": HeatmapSession,
             "poisson1d": MixedPdeSession, "poisson2d": MixedPdeSession, "pb3d": MixedPdeSession,
             "appendix": AppendixSession}
    if cfg.experiment == "image":
        return ImageSession(cfg, base_dir)
    return kinds[cfg.experiment](cfg)


# ---------------------------------------------------------------- driver

def default_out_dir(cfg: ExperimentConfig) -> str:
    if cfg.out:
        return cfg.out
    root = os.environ.get("SPECTRA_CA_OUT", "runs")
    return os.path.join(root, f"{cfg.experiment}-seed{cfg.seed}")


def _prepare_dir(out: str, force: bool) -> None:
    existing = [a for a in ARTIFACTS + ("checkpoints",) if os.path.exists(os.path.join(out, a))]
    if existing and not force:
        raise ContractError(f"{out} already holds run artifacts ({', '.join(existing)}); "
                            "use --force to overwrite")
    for name in existing:
        path = os.path.join(out, name)
        shutil.rmtree(path) if os.path.isdir(path) else os.remove(path)
    os.makedirs(os.path.join(out, "checkpoints"), exist_ok=True)


def _checkpoint(session: Session, record: TrainingRecord, e: int) -> Checkpoint:
    tensors, rng_state = session.state()
    for col, values in record.to_arrays().items():
        tensors[f"record/{col}"] = values
    meta = {"experiment": session.cfg.experiment, "columns": record.columns, **session.meta()}
    return Checkpoint(e, serialize_config(session.cfg), rng_state, tensors, meta)


def _manifest(cfg: ExperimentConfig, session: Session, epochs: int) -> bytes:
    body = {"config": cfg.to_dict(), "seed": cfg.seed, "epochs": epochs,
            "columns": session.columns, "rng": "PCG64 via SeedSequence(seed, spawn_key=purpose)",
            **session.manifest()}
    return (json.dumps(body, indent=2, sort_keys=True) + "\n").encode()


def run(cfg: ExperimentConfig, out: str | None = None, *, force: bool = False,
        resume: str | None = None, base_dir: str = ".") -> TrainingRecord:
    """Run one experiment into ``out`` and return its record.

    With ``resume`` the run continues from that checkpoint, which must have
    been written for an equal config; the result is bit-identical to an
    uninterrupted run.
    """
    out = out or default_out_dir(cfg)
    ck = None
    if resume is not None:
        ck = load_checkpoint(resume)
        if parse_config(ck.config_text) != cfg:
            raise ContractError(f"checkpoint {resume} was written for a different config")
    _prepare_dir(out, force)
    session = make_session(cfg, base_dir)
    total = session.total_epochs
    record = TrainingRecord(list(session.columns))
    if ck is not None:
        session.restore(ck.tensors, ck.rng_state, ck.meta)
        record = TrainingRecord.from_arrays(session.columns,
                                            {c: ck.tensors[f"record/{c}"] for c in session.columns})
        start = ck.epoch
    else:
        record.append({"epoch": 0, **session.metrics(0)})
        start = 0
    log.info("%s: epochs %d..%d into %s", cfg.experiment, start + 1, total, out)
    try:
        for e in range(start + 1, total + 1):
            row = {"epoch": e, **session.epoch(e)}
            if e % cfg.record_every == 0 or e == total:
                metrics = session.metrics(e)
                bad = [k for k, v in metrics.items() if v is not None and np.isnan(v)]
                if bad:
                    raise NumericalError(f"metric {bad[0]} became NaN at epoch {e}")
                row.update(metrics)
            record.append(row)
            if cfg.checkpoint_every and e % cfg.checkpoint_every == 0:
                save_checkpoint(os.path.join(out, "checkpoints", f"ckpt-{e:06d}.spca"),
                                _checkpoint(session, record, e))
    except SpectraError:
        atomic_write(os.path.join(out, "record.csv"), record_csv(record).encode())
        raise
    atomic_write(os.path.join(out, "record.csv"), record_csv(record).encode())
    for name, data in session.outputs().items():
        atomic_write(os.path.join(out, name), data)
    save_checkpoint(os.path.join(out, "final.spca"), _checkpoint(session, record, total))
    atomic_write(os.path.join(out, "manifest.json"), _manifest(cfg, session, total))
    return record
