"""FUNS-N: graph recurrent forecaster for unobserved nodes.

Per sequence the static state ``S = psi(m || 1-m || L)`` is computed once.
Per step ``t``::

    Z  = MPNN_imp(X_t || H || S)               estimate at every node
    Xf = m * X_t + (1 - m) * Z                 keep observations, fill gaps
    F  = Xf || S
    R  = sigmoid(MPNN_r(F || H))
    U  = sigmoid(MPNN_u(F || H))
    C  = tanh(MPNN_c(F || R * H))
    H  = U * H + (1 - U) * C                   (dropout in training)
    P  = MPNN_out(H || F)                      (dropout in training)
    Y  = phi(P)

``Y`` at step ``t`` is the estimate of the state ``horizon`` steps later;
the horizon only enters through target alignment in the loss.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import tensor as tn
from .graph import apply_mask
from .mpnn import AttentionLayer, as_index, mpnn_forward
from .tensor import Tensor


def _linear_init(d_in, d_out, rng):
    lim = 1.0 / np.sqrt(d_in)
    return (
        Tensor(rng.uniform(-lim, lim, (d_in, d_out)), requires_grad=True),
        Tensor(np.zeros((1, d_out)), requires_grad=True),
    )


@dataclass
class FunsNet:
    d: int
    z: int
    h: int = 8
    s: Optional[int] = None
    dropout: float = 0.25
    seed: int = 0
    params: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.s is None:
            self.s = self.h
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        if not self.params:
            self.params = self._init_params(self.seed)

    def _init_params(self, seed):
        # one independent stream per block, so changing the label width only
        # changes the first static-encoder matrix
        streams = [np.random.default_rng(c) for c in np.random.SeedSequence(seed).spawn(8)]
        d, z, h, s = self.d, self.z, self.h, self.s
        p = {}
        p["static.W1"], p["static.b1"] = _linear_init(2 + z, h, streams[0])
        p["static.W2"], p["static.b2"] = _linear_init(h, s, streams[1])
        layers = {
            "impute": AttentionLayer.init(d + h + s, d, streams[2]),
            "gate_r": AttentionLayer.init(d + s + h, h, streams[3]),
            "gate_u": AttentionLayer.init(d + s + h, h, streams[4]),
            "gate_c": AttentionLayer.init(d + s + h, h, streams[5]),
            "out": AttentionLayer.init(h + d + s, h, streams[6]),
        }
        for lname, layer in layers.items():
            for k, v in layer.named_params().items():
                p[f"{lname}.{k}"] = v
        p["readout.W"], p["readout.b"] = _linear_init(h, d, streams[7])
        return p

    def layer(self, name: str) -> AttentionLayer:
        p = self.params
        return AttentionLayer(p[f"{name}.W_src"], p[f"{name}.W_dst"], p[f"{name}.a"], p[f"{name}.b"])

    def parameters(self) -> list:
        return list(self.params.values())

    # -- single steps -------------------------------------------------------

    def encode_static(self, m, L) -> Tensor:
        m = np.asarray(m, dtype=np.float64).reshape(-1, 1)
        L = np.asarray(L, dtype=np.float64)
        if L.shape[1] != self.z:
            raise tn.ShapeError(f"labels have width {L.shape[1]}, model expects {self.z}")
        inp = Tensor(np.hstack([m, 1.0 - m, L]))
        p = self.params
        hidden = tn.tanh(tn.add_row(tn.matmul(inp, p["static.W1"]), p["static.b1"]))
        return tn.add_row(tn.matmul(hidden, p["static.W2"]), p["static.b2"])

    def impute_step(self, X_t, H_prev: Tensor, S: Tensor, graph) -> Tensor:
        inp = tn.concat_many([tn.as_tensor(X_t), H_prev, S])
        return mpnn_forward(inp, graph, self.layer("impute"))

    @staticmethod
    def fill_gaps(X_t, Z_t: Tensor, m) -> Tensor:
        m = np.asarray(m, dtype=np.float64).reshape(-1, 1)
        X_t = np.asarray(X_t, dtype=np.float64)
        if X_t.shape != Z_t.shape:
            raise tn.ShapeError(f"fill_gaps: {X_t.shape} vs {Z_t.shape}")
        return tn.add(tn.mul_col(Z_t, Tensor(1.0 - m)), Tensor(m * X_t))

    def gru_step(self, F_t: Tensor, H_prev: Tensor, graph, training=False, rng=None, return_gates=False):
        FH = tn.concat(F_t, H_prev)
        R = tn.sigmoid(mpnn_forward(FH, graph, self.layer("gate_r")))
        U = tn.sigmoid(mpnn_forward(FH, graph, self.layer("gate_u")))
        C = tn.tanh(mpnn_forward(tn.concat(F_t, tn.mul(R, H_prev)), graph, self.layer("gate_c")))
        H = tn.add(tn.mul(U, H_prev), tn.mul(tn.one_minus(U), C))
        H = tn.dropout(H, self.dropout, rng, training)
        if return_gates:
            return H, R, U, C
        return H

    def predict_step(self, H_t: Tensor, F_t: Tensor, graph, training=False, rng=None) -> Tensor:
        P = mpnn_forward(tn.concat(H_t, F_t), graph, self.layer("out"))
        P = tn.dropout(P, self.dropout, rng, training)
        return tn.add_row(tn.matmul(P, self.params["readout.W"]), self.params["readout.b"])

    # -- sequences ----------------------------------------------------------

    def forward_sequence(self, X, m, graph, L, training=False, rng=None) -> list:
        """Run the recurrence over a ``(W, n, d)`` window.

        ``X`` is zero-filled at every node with ``m == 0`` before use, so
        values stored there never reach the model. Returns one ``(n, d)``
        tensor per step.
        """
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 3 or X.shape[0] == 0:
            raise ValueError(f"expected a nonempty (W, n, d) window, got shape {X.shape}")
        if training and self.dropout > 0 and rng is None:
            raise ValueError("training mode needs a random generator")
        idx = as_index(graph)
        n = X.shape[1]
        X = apply_mask(X, m)
        S = self.encode_static(m, L)
        H = Tensor(np.zeros((n, self.h)))
        out = []
        for t in range(X.shape[0]):
            Z = self.impute_step(X[t], H, S, idx)
            F = tn.concat(self.fill_gaps(X[t], Z, m), S)
            H = self.gru_step(F, H, idx, training, rng)
            out.append(self.predict_step(H, F, idx, training, rng))
        return out

    def predict(self, X, m, graph, L) -> np.ndarray:
        """Evaluation-mode predictions as a ``(W, n, d)`` array."""
        with tn.no_grad():
            steps = self.forward_sequence(X, m, graph, L, training=False)
        return np.stack([s.data for s in steps])

    # -- checkpoints --------------------------------------------------------

    def config(self) -> dict:
        return {"d": self.d, "z": self.z, "h": self.h, "s": self.s, "dropout": self.dropout, "seed": self.seed}

    def state_dict(self) -> dict:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict) -> None:
        for k, v in state.items():
            if self.params[k].shape != v.shape:
                raise tn.ShapeError(f"{k}: checkpoint shape {v.shape} != {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=np.float64)

    def save(self, path) -> None:
        """Write an ``.npz`` archive: one array per named parameter plus a
        ``__config__`` JSON string."""
        arrays = self.state_dict()
        arrays["__config__"] = np.array(json.dumps(self.config()))
        with open(Path(path), "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path) -> "FunsNet":
        with np.load(Path(path)) as f:
            cfg = json.loads(str(f["__config__"]))
            model = cls(**cfg)
            model.load_state_dict({k: f[k] for k in f.files if k != "__config__"})
        return model
