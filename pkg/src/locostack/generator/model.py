"""Conditional diffusion motion generator.

The denoiser predicts the clean window (x0-prediction) from a noised
window, the conditioning (heading, height scan, two past frames), and a
timestep embedding. Diffusion runs in per-coordinate normalized feature
space; geometric losses (velocity, joint consistency via fk, terrain
penetration) are evaluated on the denormalized prediction so their
units stay physical. Sampling supports any step count down to 1 on an
alpha-bar-strided sub-schedule.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from ..autodiff import Adam, Tensor, concat, maximum
from ..diffkin import t_fk, t_penetration, t_quat_normalize
from ..errors import NumericFailure, ValidationError
from ..skeleton import Skeleton, default_humanoid
from ..terrain import HeightField, ScanPattern
from .net import TEMB_DIM, DenoiserNet, timestep_embedding
from .schedule import NoiseSchedule, forward_noise, sub_schedule
from .window import Anchor, Condition, WindowSample, decanonicalize

MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class GeneratorConfig:
    horizon: int = 25
    hidden: tuple[int, ...] = (512, 512, 512)
    diffusion_steps: int = 50
    beta_start: float = 1e-4
    beta_end: float = 0.2
    lambda_vel: float = 1.0
    lambda_joint: float = 1.0
    lambda_pen: float = 1.0
    sigma_scan: float = 0.05
    sigma_state: float = 0.02
    lr: float = 1e-3
    batch_size: int = 32
    train_steps: int = 3000
    holdout_frac: float = 0.1
    window_stride: int = 2
    scan: ScanPattern = field(default_factory=ScanPattern)

    def schedule(self) -> NoiseSchedule:
        return NoiseSchedule.linear(self.diffusion_steps, self.beta_start, self.beta_end)


@dataclass
class Denoiser:
    cfg: GeneratorConfig
    skel: Skeleton
    net: DenoiserNet
    schedule: NoiseSchedule
    feat_mean: np.ndarray  # (F,)
    feat_std: np.ndarray   # (F,)
    scan_mean: float
    scan_std: float

    @property
    def feature_dim(self) -> int:
        return self.skel.feature_dim

    @property
    def horizon(self) -> int:
        return self.cfg.horizon

    def normalize(self, feats: np.ndarray) -> np.ndarray:
        return (feats - self.feat_mean) / self.feat_std

    def denormalize(self, feats_n: np.ndarray) -> np.ndarray:
        return feats_n * self.feat_std + self.feat_mean

    def _cond_vector(self, cond: Condition) -> np.ndarray:
        scan_n = (cond.scan - self.scan_mean) / self.scan_std
        past_n = self.normalize(cond.past).reshape(-1)
        return np.concatenate([cond.heading, scan_n, past_n])

    def _input_np(self, x_t_n: np.ndarray, t, cond_vec: np.ndarray) -> np.ndarray:
        flat = x_t_n.reshape(*x_t_n.shape[:-2], -1)
        temb = timestep_embedding(t)
        return np.concatenate([flat, temb, cond_vec], axis=-1)

    def denoise(self, x_t_n: np.ndarray, t, cond: Condition) -> np.ndarray:
        """Predicted clean window (normalized space), shape like x_t_n."""
        x_t_n = np.asarray(x_t_n, dtype=np.float64)
        h, f = self.horizon, self.feature_dim
        if x_t_n.shape[-2:] != (h, f):
            raise ValidationError(f"window must have shape (..., {h}, {f})")
        self.schedule.abar(t)  # range check
        out = self.net.forward_np(self._input_np(x_t_n, t, self._cond_vector(cond)))
        return out.reshape(x_t_n.shape)

    # ---- sampling -----------------------------------------------------------------

    def sample(self, cond: Condition, steps: int, rng: np.random.Generator,
               anchor: Anchor | None = None) -> np.ndarray:
        """Generate a window with `steps` denoising steps; returns raw
        features (H, F) in the world frame of the anchor."""
        taus = sub_schedule(self.schedule, steps)
        return self._run_sampler(cond, taus, rng, anchor)

    def sample_reference(self, cond: Condition, rng: np.random.Generator,
                         anchor: Anchor | None = None) -> np.ndarray:
        """Plain full-schedule sampler (T steps); the oracle the strided
        sampler is checked against."""
        return self._run_sampler(cond, list(range(self.schedule.T, 0, -1)), rng, anchor)

    def _run_sampler(self, cond: Condition, taus: list[int], rng: np.random.Generator,
                     anchor: Anchor | None) -> np.ndarray:
        h, f = self.horizon, self.feature_dim
        abar = self.schedule.alpha_bars
        x = rng.standard_normal((h, f))
        x0n = x
        for i, t in enumerate(taus):
            x0n = self.denoise(x, t, cond)
            if i + 1 < len(taus):
                tn = taus[i + 1]
                eps = rng.standard_normal((h, f))
                x = np.sqrt(abar[tn - 1]) * x0n + np.sqrt(1.0 - abar[tn - 1]) * eps
        out = self.denormalize(x0n)
        if anchor is None:
            return out
        return decanonicalize(out, anchor, self.skel.joint_count, self.skel.body_count)

    def param_hash(self) -> str:
        return self.net.param_hash()


def make_denoiser(cfg: GeneratorConfig, skel: Skeleton, rng: np.random.Generator,
                  feat_mean=None, feat_std=None, scan_mean=0.0, scan_std=1.0) -> Denoiser:
    f = skel.feature_dim
    in_dim = cfg.horizon * f + TEMB_DIM + 2 + cfg.scan.size + 2 * f
    net = DenoiserNet(in_dim, cfg.horizon * f, cfg.hidden, rng)
    return Denoiser(
        cfg=cfg, skel=skel, net=net, schedule=cfg.schedule(),
        feat_mean=np.zeros(f) if feat_mean is None else np.asarray(feat_mean, dtype=np.float64),
        feat_std=np.ones(f) if feat_std is None else np.asarray(feat_std, dtype=np.float64),
        scan_mean=float(scan_mean), scan_std=float(scan_std),
    )


# ---- training loss ---------------------------------------------------------------


def _batch_arrays(samples: list[WindowSample]) -> dict:
    return {
        "x0": np.stack([s.window for s in samples]),
        "heading": np.stack([s.cond.heading for s in samples]),
        "scan": np.stack([s.cond.scan for s in samples]),
        "past": np.stack([s.cond.past for s in samples]),
        "anchor": np.stack([s.anchor.as_array() for s in samples]),
        "fields": [s.field for s in samples],
    }


def training_loss(den: Denoiser, samples: list[WindowSample],
                  rng: np.random.Generator) -> tuple[float, dict[str, float]]:
    """Total loss over a batch; leaves parameter gradients on den.net.params.

    Timesteps and noise are drawn from rng (one per sample)."""
    if not samples:
        raise ValidationError("training batch must be non-empty")
    arrs = _batch_arrays(samples)
    loss_t, parts = _training_loss_t(den, arrs, rng)
    val = float(loss_t.data)
    if not np.isfinite(val):
        raise NumericFailure("training loss is non-finite", step=0)
    for p in den.net.params:
        p.grad = None
    loss_t.backward()
    return val, parts


def _training_loss_t(den: Denoiser, arrs: dict, rng: np.random.Generator):
    cfg = den.cfg
    skel = den.skel
    n, h, f = arrs["x0"].shape
    j, b = skel.joint_count, skel.body_count
    x0 = arrs["x0"]
    x0_n = den.normalize(x0)
    t = rng.integers(1, den.schedule.T + 1, size=n)
    eps = rng.standard_normal((n, h, f))
    abar = den.schedule.abar(t)[:, None, None]
    x_t_n = np.sqrt(abar) * x0_n + np.sqrt(1.0 - abar) * eps

    scan_n = (arrs["scan"] - den.scan_mean) / den.scan_std
    past_n = den.normalize(arrs["past"]).reshape(n, -1)
    net_in = np.concatenate([
        x_t_n.reshape(n, -1), timestep_embedding(t), arrs["heading"], scan_n, past_n,
    ], axis=-1)
    out = den.net.forward_t(Tensor(net_in))           # (n, h*f)
    x0_hat_n = out.reshape(n, h, f)
    x0_hat = x0_hat_n * Tensor(den.feat_std) + Tensor(den.feat_mean)

    diff = x0_hat - Tensor(x0)
    l_rec = (diff * diff).mean()

    d_hat = x0_hat[:, 1:, :] - x0_hat[:, :-1, :]
    d_ref = x0[:, 1:, :] - x0[:, :-1, :]
    dv = d_hat - Tensor(d_ref)
    l_vel = (dv * dv).mean()

    root = x0_hat[:, :, 0:3]
    rquat = t_quat_normalize(x0_hat[:, :, 3:7])
    joints = x0_hat[:, :, 7:7 + j]
    body_fk = t_fk(skel, root, rquat, joints)          # (n, h, b, 3)
    body_slots = x0_hat[:, :, 7 + j:].reshape(n, h, b, 3)
    dj = body_fk - body_slots
    l_joint = (dj * dj).mean()

    l_pen = _penetration_loss_t(den, body_slots, arrs)

    total = (l_rec + cfg.lambda_vel * l_vel + cfg.lambda_joint * l_joint
             + cfg.lambda_pen * l_pen)
    parts = {"rec": float(l_rec.data), "vel": float(l_vel.data),
             "joint": float(l_joint.data), "pen": float(l_pen.data)}
    return total, parts


def _penetration_loss_t(den: Denoiser, body_slots, arrs: dict):
    """Mean squared penetration of predicted body points against each
    sample's terrain (canonical points mapped back to world first)."""
    n, h, b, _ = body_slots.shape
    anchor = arrs["anchor"]
    c = np.cos(anchor[:, 2])[:, None, None]
    s = np.sin(anchor[:, 2])[:, None, None]
    x_c = body_slots[..., 0]
    y_c = body_slots[..., 1]
    z_c = body_slots[..., 2]
    x_w = x_c * c - y_c * s + anchor[:, 0][:, None, None]
    y_w = x_c * s + y_c * c + anchor[:, 1][:, None, None]
    z_w = z_c + anchor[:, 3][:, None, None]

    groups: dict[int, list[int]] = {}
    for i, fld in enumerate(arrs["fields"]):
        groups.setdefault(id(fld), []).append(i)
    total = None
    for ids in groups.values():
        fld = arrs["fields"][ids[0]]
        idx = np.asarray(ids)
        pts = concat([x_w[idx].reshape(-1, 1), y_w[idx].reshape(-1, 1),
                      z_w[idx].reshape(-1, 1)], axis=1)
        pen = t_penetration(fld, pts)
        contrib = (pen * pen).sum()
        total = contrib if total is None else total + contrib
    return total * (1.0 / float(n * h * b))


# ---- training loop ----------------------------------------------------------------


@dataclass
class TrainCurve:
    steps: list[int]
    loss: list[float]
    parts: list[dict[str, float]]
    holdout_steps: list[int]
    holdout_rec: list[float]


def compute_stats(samples: list[WindowSample]) -> tuple[np.ndarray, np.ndarray, float, float]:
    frames = np.concatenate([s.window.reshape(-1, s.window.shape[-1]) for s in samples])
    mean = frames.mean(axis=0)
    std = frames.std(axis=0)
    std = np.where(std < 1e-4, 1.0, std)
    scans = np.concatenate([s.cond.scan for s in samples])
    s_std = float(scans.std())
    return mean, std, float(scans.mean()), s_std if s_std > 1e-4 else 1.0


def holdout_reconstruction(den: Denoiser, samples: list[WindowSample],
                           eval_seed: int = 12345) -> float:
    """Reconstruction-only loss on held-out windows with frozen noise."""
    rng = np.random.default_rng(eval_seed)
    arrs = _batch_arrays(samples)
    n, h, f = arrs["x0"].shape
    x0_n = den.normalize(arrs["x0"])
    t = rng.integers(1, den.schedule.T + 1, size=n)
    eps = rng.standard_normal((n, h, f))
    abar = den.schedule.abar(t)[:, None, None]
    x_t_n = np.sqrt(abar) * x0_n + np.sqrt(1.0 - abar) * eps
    scan_n = (arrs["scan"] - den.scan_mean) / den.scan_std
    past_n = den.normalize(arrs["past"]).reshape(n, -1)
    net_in = np.concatenate([x_t_n.reshape(n, -1), timestep_embedding(t),
                             arrs["heading"], scan_n, past_n], axis=-1)
    x0_hat = den.denormalize(den.net.forward_np(net_in).reshape(n, h, f))
    return float(np.mean((x0_hat - arrs["x0"]) ** 2))


def train(samples: list[WindowSample], cfg: GeneratorConfig, rng: np.random.Generator,
          skel: Skeleton | None = None,
          steps: int | None = None) -> tuple[Denoiser, TrainCurve]:
    """Minibatch optimization of the denoiser on extracted window samples.

    Deterministic given the rng seed; conditioning noise (sigma_scan,
    sigma_state) is injected per drawn sample."""
    if not samples:
        raise ValidationError("training needs a non-empty window set")
    skel = skel or default_humanoid()
    steps = cfg.train_steps if steps is None else steps
    order = rng.permutation(len(samples))
    n_hold = max(int(len(samples) * cfg.holdout_frac), 1)
    hold = [samples[i] for i in order[:n_hold]]
    tr = [samples[i] for i in order[n_hold:]] or hold

    mean, std, s_mean, s_std = compute_stats(tr)
    den = make_denoiser(cfg, skel, rng, mean, std, s_mean, s_std)
    opt = Adam(den.net.params, lr=cfg.lr)
    curve = TrainCurve([], [], [], [], [])
    curve.holdout_steps.append(0)
    curve.holdout_rec.append(holdout_reconstruction(den, hold))
    for step in range(steps):
        idx = rng.integers(0, len(tr), size=min(cfg.batch_size, len(tr)))
        batch = [_perturbed(tr[i], cfg, rng) for i in idx]
        arrs = _batch_arrays(batch)
        loss_t, parts = _training_loss_t(den, arrs, rng)
        val = float(loss_t.data)
        if not np.isfinite(val):
            raise NumericFailure("training loss diverged", step=step)
        opt.zero_grad()
        loss_t.backward()
        opt.step()
        curve.steps.append(step)
        curve.loss.append(val)
        curve.parts.append(parts)
        if (step + 1) % 100 == 0:
            curve.holdout_steps.append(step + 1)
            curve.holdout_rec.append(holdout_reconstruction(den, hold))
    if steps == 0:
        return den, curve
    curve.holdout_steps.append(steps)
    curve.holdout_rec.append(holdout_reconstruction(den, hold))
    return den, curve


def _perturbed(s: WindowSample, cfg: GeneratorConfig, rng: np.random.Generator) -> WindowSample:
    scan = s.cond.scan + cfg.sigma_scan * rng.standard_normal(s.cond.scan.shape)
    past = s.cond.past + cfg.sigma_state * rng.standard_normal(s.cond.past.shape)
    return WindowSample(window=s.window,
                        cond=Condition(heading=s.cond.heading, scan=scan, past=past),
                        anchor=s.anchor, field=s.field)


# ---- model files -------------------------------------------------------------------


def save_model(path, den: Denoiser) -> None:
    cfg = den.cfg
    header = {
        "format_version": MODEL_FORMAT_VERSION,
        "horizon": cfg.horizon,
        "hidden": list(cfg.hidden),
        "diffusion_steps": cfg.diffusion_steps,
        "betas": den.schedule.betas.tolist(),
        "feature_dim": den.feature_dim,
        "scan": {"rows": cfg.scan.rows, "cols": cfg.scan.cols,
                 "spacing": cfg.scan.spacing, "forward_center": cfg.scan.forward_center},
        "lambdas": [cfg.lambda_vel, cfg.lambda_joint, cfg.lambda_pen],
        "sigmas": [cfg.sigma_scan, cfg.sigma_state],
        "normalization": {
            "feat_mean": den.feat_mean.tolist(),
            "feat_std": den.feat_std.tolist(),
            "scan_mean": den.scan_mean,
            "scan_std": den.scan_std,
        },
        "skeleton_hash": den.skel.hash(),
        "param_count": den.net.param_count,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(den.net.param_vector().astype("<f8").tobytes())


def load_model(path, skel: Skeleton | None = None) -> Denoiser:
    skel = skel or default_humanoid()
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        if header.get("format_version") != MODEL_FORMAT_VERSION:
            raise ValidationError(f"{path}: unsupported model format_version")
        if header["skeleton_hash"] != skel.hash():
            raise ValidationError(f"{path}: model built for a different skeleton")
        blob = fh.read(header["param_count"] * 8)
    params = np.frombuffer(blob, dtype="<f8").copy()
    scan = header["scan"]
    betas = np.asarray(header["betas"])
    cfg = GeneratorConfig(
        horizon=header["horizon"], hidden=tuple(header["hidden"]),
        diffusion_steps=header["diffusion_steps"],
        beta_start=float(betas[0]), beta_end=float(betas[-1]),
        lambda_vel=header["lambdas"][0], lambda_joint=header["lambdas"][1],
        lambda_pen=header["lambdas"][2],
        sigma_scan=header["sigmas"][0], sigma_state=header["sigmas"][1],
        scan=ScanPattern(rows=scan["rows"], cols=scan["cols"], spacing=scan["spacing"],
                         forward_center=scan["forward_center"]),
    )
    norm = header["normalization"]
    den = make_denoiser(cfg, skel, np.random.default_rng(0),
                        norm["feat_mean"], norm["feat_std"],
                        norm["scan_mean"], norm["scan_std"])
    den = replace(den, schedule=NoiseSchedule(betas))
    den.net.load_param_vector(params)
    return den
