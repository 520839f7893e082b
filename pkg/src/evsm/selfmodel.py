"""The egocentric visual self-model and its siblings.

Four predictor kinds share one implementation:

* ``vision``      — per-frame conv encoder -> recurrent aggregator over the
                    5 frames of the previous step, fused with an encoded
                    candidate action; predicts the 6-dim state delta.
* ``action_only`` — the action branch alone (open-loop baseline).
* ``imu``         — the previous step's delta (noisy, normalized) replaces
                    the image branch.
* ``vo``          — visual odometry: 7 frames spanning the current step, no
                    action input; measures (not predicts) the current delta.

Targets are normalized per dimension by training-split statistics; models
carry those statistics and refuse to predict without them.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .dataio import Dataset, NormStats, compute_stats
from .nn import Adam, Conv2d, Dense, GRUCell, PlateauScheduler
from .nn import load_checkpoint, save_checkpoint
from .rng import Stream

MODEL_KINDS = ("vision", "action_only", "imu", "vo")
IMU_NOISE_SIGMA = 0.02  # per normalized dimension

_CONV_CHANNELS = (8, 16, 32, 32)
_FRAME_FEATURES = 64
_ACTION_FEATURES = 32
_FUSION_WIDTHS = (64, 64, 32, 16, 6)


class ModelError(RuntimeError):
    pass


class VisualEncoder:
    """4 conv layers (8,16,32,32 channels, 3x3, stride 2) -> dense to 64."""

    def __init__(self, stream: Stream):
        self.convs = []
        c_in = 1
        for i, c_out in enumerate(_CONV_CHANNELS):
            self.convs.append(Conv2d(f"visual.conv{i}", c_in, c_out, 3, 2, 1,
                                     stream, activation=True))
            c_in = c_out
        flat = _CONV_CHANNELS[-1] * 2 * 2
        self.fc = Dense("visual.fc", flat, _FRAME_FEATURES, stream, activation=False)
        self._shape = None

    def params(self):
        out = []
        for c in self.convs:
            out.extend(c.params())
        out.extend(self.fc.params())
        return out

    def forward(self, frames: np.ndarray, exact: bool = False) -> np.ndarray:
        """frames (N, 32, 32) float in [0,1] -> (N, 64)."""
        x = frames[:, :, :, None]  # NHWC, one channel
        for conv in self.convs:
            x = conv.forward(x, exact)
        self._shape = x.shape
        return self.fc.forward(x.reshape(x.shape[0], -1), exact)

    def backward(self, dfeat: np.ndarray) -> None:
        dx = self.fc.backward(dfeat).reshape(self._shape)
        for conv in reversed(self.convs):
            dx = conv.backward(dx)


class SelfModel:
    """One of the four predictor kinds; see module docstring."""

    def __init__(self, kind: str, seed: int = 0, stats: NormStats | None = None):
        if kind not in MODEL_KINDS:
            raise ModelError(f"unknown model kind {kind!r}")
        self.kind = kind
        self.seed = seed
        self.stats = stats
        self.n_frames = 7 if kind == "vo" else 5
        stream = Stream(seed).substream(f"model.{kind}")

        self.visual = None
        self.gru = None
        self.action_enc = []
        self.imu_enc = []
        fusion_in = 0
        if kind in ("vision", "vo"):
            self.visual = VisualEncoder(stream)
            self.gru = GRUCell("aggregator", _FRAME_FEATURES, _FRAME_FEATURES, stream)
            fusion_in += _FRAME_FEATURES
        if kind != "vo":
            widths = (12, _ACTION_FEATURES, _ACTION_FEATURES, _ACTION_FEATURES)
            for i in range(3):
                self.action_enc.append(Dense(f"action.fc{i}", widths[i], widths[i + 1],
                                             stream, activation=True))
            fusion_in += _ACTION_FEATURES
        if kind == "imu":
            widths = (6, _ACTION_FEATURES, _ACTION_FEATURES, _ACTION_FEATURES)
            for i in range(3):
                self.imu_enc.append(Dense(f"imu.fc{i}", widths[i], widths[i + 1],
                                          stream, activation=True))
            fusion_in += _ACTION_FEATURES

        self.fusion = []
        w_in = fusion_in
        for i, w_out in enumerate(_FUSION_WIDTHS):
            last = i == len(_FUSION_WIDTHS) - 1
            self.fusion.append(Dense(f"fusion.fc{i}", w_in, w_out, stream,
                                     activation=not last))
            w_in = w_out
        self._split = None

    # -- parameter plumbing -------------------------------------------------

    def visual_params(self):
        out = []
        if self.visual is not None:
            out.extend(self.visual.params())
        if self.gru is not None:
            out.extend(self.gru.params())
        return out

    def params(self):
        out = self.visual_params()
        for layer in self.action_enc + self.imu_enc + self.fusion:
            out.extend(layer.params())
        return out

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()

    def state_dict(self) -> dict:
        return {p.name: p.value.copy() for p in self.params()}

    def load_state(self, tensors: dict) -> None:
        for p in self.params():
            if p.name not in tensors:
                raise ModelError(f"checkpoint is missing tensor {p.name}")
            arr = np.asarray(tensors[p.name], dtype=p.value.dtype)
            if arr.shape != p.value.shape:
                raise ModelError(f"shape mismatch for {p.name}")
            p.value = arr.copy()

    def visual_checksum(self) -> str:
        h = hashlib.sha256()
        for p in self.visual_params():
            h.update(p.value.tobytes())
        return h.hexdigest()

    # -- forward / backward -------------------------------------------------

    def forward(self, frames: np.ndarray | None, action: np.ndarray | None,
                imu: np.ndarray | None = None, exact: bool = False) -> np.ndarray:
        """Normalized inputs -> normalized prediction (B, 6).

        frames: (B, n_frames, 32, 32) float in [0,1]; action: (B, 12);
        imu: (B, 6) normalized previous delta (imu kind only).
        """
        feats = []
        if self.visual is not None:
            B, T = frames.shape[0], frames.shape[1]
            if T != self.n_frames:
                raise ModelError(f"{self.kind} expects {self.n_frames} frames, got {T}")
            per_frame = self.visual.forward(
                frames.reshape(B * T, *frames.shape[2:]), exact)
            seq = per_frame.reshape(B, T, -1)
            self.gru.reset_sequence()
            h = np.zeros((B, _FRAME_FEATURES), dtype=per_frame.dtype)
            for t in range(T):  # oldest first
                h = self.gru.forward(seq[:, t], h, exact)
            feats.append(h)
        if self.action_enc:
            a = action
            for layer in self.action_enc:
                a = layer.forward(a, exact)
            feats.append(a)
        if self.imu_enc:
            m = imu
            for layer in self.imu_enc:
                m = layer.forward(m, exact)
            feats.append(m)
        x = np.concatenate(feats, axis=1) if len(feats) > 1 else feats[0]
        self._split = [f.shape[1] for f in feats]
        for layer in self.fusion:
            x = layer.forward(x, exact)
        return x

    def backward(self, dout: np.ndarray) -> None:
        dx = dout
        for layer in reversed(self.fusion):
            dx = layer.backward(dx)
        parts = np.split(dx, np.cumsum(self._split)[:-1], axis=1)
        i = 0
        if self.visual is not None:
            dh = parts[i]
            i += 1
            B = dh.shape[0]
            T = self.n_frames
            dfeat = np.empty((B, T, _FRAME_FEATURES), dtype=dh.dtype)
            for t in range(T - 1, -1, -1):
                dx_t, dh = self.gru.backward(dh)
                dfeat[:, t] = dx_t
            self.visual.backward(dfeat.reshape(B * T, _FRAME_FEATURES))
        if self.action_enc:
            da = parts[i]
            i += 1
            for layer in reversed(self.action_enc):
                da = layer.backward(da)
        if self.imu_enc:
            dm = parts[i]
            for layer in reversed(self.imu_enc):
                dm = layer.backward(dm)

    # -- prediction ---------------------------------------------------------

    def predict(self, frames: np.ndarray | None, actions: np.ndarray | None,
                imu: np.ndarray | None = None) -> np.ndarray:
        """Raw inputs -> denormalized state deltas (B, 6) float64.

        frames are uint8; the imu input is already normalized (it is a model
        input, not a label).  Uses the fixed-order kernels, so results do not
        depend on how callers batch their queries.
        """
        if self.stats is None:
            raise ModelError("model has no normalization statistics; cannot predict")
        f = None
        if self.visual is not None:
            f = np.ascontiguousarray(frames, dtype=np.float32) / np.float32(255.0)
        a = None if not self.action_enc else np.ascontiguousarray(actions, dtype=np.float32)
        m = None if not self.imu_enc else np.ascontiguousarray(imu, dtype=np.float32)
        out = self.forward(f, a, m, exact=True)
        return self.stats.denormalize(out.astype(np.float64))


# ---------------------------------------------------------------------------
# training


@dataclass
class Pairs:
    """Index view tying each (input frames, action) to its target record."""
    frame_idx: np.ndarray
    target_idx: np.ndarray

    def __len__(self):
        return len(self.target_idx)


def build_pairs(dataset: Dataset) -> Pairs:
    """Input = frames of step t-1, action of step t; label = delta of step t.
    The first step of each episode has no preceding frames and is skipped."""
    ok = np.nonzero(dataset.step > 0)[0]
    ok = ok[dataset.episode[ok] == dataset.episode[ok - 1]]
    return Pairs(frame_idx=ok - 1, target_idx=ok)


def vo_windows(dataset: Dataset, i_prev: np.ndarray, i_cur: np.ndarray) -> np.ndarray:
    """7-frame windows: last 2 frames of step t-1 + 5 frames of step t."""
    return np.concatenate([dataset.frames[i_prev][:, 3:5], dataset.frames[i_cur]], axis=1)


def model_inputs(model: SelfModel, dataset: Dataset, pairs: Pairs, sel: np.ndarray,
                 imu_noise: np.ndarray | None):
    """Assemble (frames u8, actions f32, imu f32) for selected pair rows."""
    ip, it = pairs.frame_idx[sel], pairs.target_idx[sel]
    frames = None
    if model.kind == "vision":
        frames = dataset.frames[ip]
    elif model.kind == "vo":
        frames = vo_windows(dataset, ip, it)
    actions = dataset.actions[it] if model.kind != "vo" else None
    imu = None
    if model.kind == "imu":
        prev = model.stats.normalize(dataset.deltas[ip].astype(np.float64))
        imu = (prev + imu_noise[sel]).astype(np.float32)
    return frames, actions, imu


@dataclass
class TrainResult:
    history: list = field(default_factory=list)  # (epoch, train, val, lr)
    best_val: float = np.inf
    best_epoch: int = -1


def _forward_loss(model, frames, actions, imu, y):
    out = model.forward(frames, actions, imu)
    err = out - y
    loss = float(np.mean(err.astype(np.float64) ** 2))
    return out, err, loss


def evaluate_mse(model: SelfModel, dataset: Dataset, pairs: Pairs | None = None,
                 batch: int = 512, imu_noise: np.ndarray | None = None) -> float:
    """Mean squared error in normalized units over all pairs."""
    if pairs is None:
        pairs = build_pairs(dataset)
    if imu_noise is None and model.kind == "imu":
        imu_noise = imu_noise_for(dataset, pairs, seed=0)
    total, count = 0.0, 0
    y_all = model.stats.normalize(
        dataset.deltas[pairs.target_idx].astype(np.float64)).astype(np.float32)
    for lo in range(0, len(pairs), batch):
        sel = np.arange(lo, min(lo + batch, len(pairs)))
        frames, actions, imu = model_inputs(model, dataset, pairs, sel, imu_noise)
        f = None if frames is None else frames.astype(np.float32) / np.float32(255.0)
        out = model.forward(f, actions, imu)
        err = (out - y_all[sel]).astype(np.float64)
        total += float((err**2).sum())
        count += err.size
    return total / count


def imu_noise_for(dataset: Dataset, pairs: Pairs, seed: int) -> np.ndarray:
    """Fixed per-pair gaussian corruption of the imu input feature."""
    stream = Stream(seed).substream("imu_noise")
    return stream.gaussian(len(pairs) * 6, IMU_NOISE_SIGMA).reshape(len(pairs), 6)


def train(model: SelfModel, train_set: Dataset, val_set: Dataset, *,
          epochs: int, batch: int = 32, seed: int = 0, lr: float = 1e-4,
          plateau_factor: float = 0.1, plateau_patience: int = 20,
          trainable=None, csv_path=None) -> TrainResult:
    """MSE training on normalized labels with Adam and plateau scheduling.

    Deterministic given (model init, data, seed).  The best-validation
    parameter snapshot is restored into the model before returning.
    """
    if model.stats is None:
        model.stats = compute_stats(train_set.deltas)
    pairs = build_pairs(train_set)
    val_pairs = build_pairs(val_set)
    params = list(trainable) if trainable is not None else model.params()
    opt = Adam(params, lr=lr)
    sched = PlateauScheduler(opt, factor=plateau_factor, patience=plateau_patience)
    root = Stream(seed).substream("train")

    y_all = model.stats.normalize(
        train_set.deltas[pairs.target_idx].astype(np.float64)).astype(np.float32)
    imu_noise = imu_noise_for(train_set, pairs, seed) if model.kind == "imu" else None
    val_noise = imu_noise_for(val_set, val_pairs, seed + 1) if model.kind == "imu" else None

    result = TrainResult()
    best_state = model.state_dict()
    rows = []
    for epoch in range(epochs):
        order = root.substream(("epoch", epoch)).shuffle(np.arange(len(pairs)))
        total, count = 0.0, 0
        for lo in range(0, len(order), batch):
            sel = order[lo:lo + batch]
            frames, actions, imu = model_inputs(model, train_set, pairs, sel, imu_noise)
            f = None if frames is None else frames.astype(np.float32) / np.float32(255.0)
            y = y_all[sel]
            model.zero_grad()
            out, err, loss = _forward_loss(model, f, actions, imu, y)
            model.backward((2.0 / err.size) * err)
            opt.step()
            total += loss * err.size
            count += err.size
        train_loss = total / count
        val_loss = evaluate_mse(model, val_set, val_pairs, imu_noise=val_noise)
        lr_now = sched.update(val_loss)
        rows.append((epoch, train_loss, val_loss, lr_now))
        if val_loss < result.best_val:
            result.best_val = val_loss
            result.best_epoch = epoch
            best_state = model.state_dict()
    model.load_state(best_state)
    result.history = rows
    if csv_path is not None:
        with open(csv_path, "w", encoding="ascii") as fh:
            fh.write("epoch,train_loss,val_loss,lr\n")
            for e, tr, va, lr_now in rows:
                fh.write(f"{e},{repr(tr)},{repr(va)},{repr(lr_now)}\n")
    return result


def transfer(pretrained: SelfModel, train_set: Dataset, val_set: Dataset, *,
             epochs: int, seed: int = 0, lr: float = 1e-4, batch: int = 32,
             csv_path=None) -> tuple:
    """Adapt a trained vision model to a new robot variant with the visual
    branch (conv encoder + recurrent aggregator) frozen; only the action
    encoder and fusion head update.  Label statistics are recomputed from the
    new variant's training split."""
    model = SelfModel(pretrained.kind, seed=pretrained.seed)
    model.load_state(pretrained.state_dict())
    model.stats = compute_stats(train_set.deltas)
    frozen = model.visual_checksum()
    trainable = [p for p in model.params()
                 if not (p.name.startswith("visual.") or p.name.startswith("aggregator."))]
    result = train(model, train_set, val_set, epochs=epochs, seed=seed, lr=lr,
                   batch=batch, trainable=trainable, csv_path=csv_path)
    if model.visual_checksum() != frozen:
        raise ModelError("visual encoder changed during transfer")
    return model, result


# ---------------------------------------------------------------------------
# checkpoints


def save_model(model: SelfModel, path) -> None:
    meta = {"kind": model.kind, "seed": str(model.seed)}
    if model.stats is not None:
        meta.update(model.stats.to_manifest())
    save_checkpoint(path, {p.name: p.value for p in model.params()}, meta)


def load_model(path) -> SelfModel:
    tensors, meta = load_checkpoint(path)
    stats = None
    if "norm_mean" in meta:
        stats = NormStats.from_manifest(meta)
    model = SelfModel(meta["kind"], seed=int(meta.get("seed", "0")), stats=stats)
    model.load_state(tensors)
    return model
