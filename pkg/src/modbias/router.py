"""Input-adaptive modality selection: a small attention classifier that
predicts, per sample, which of five modality combinations to use.

Each modality block is projected to a shared width, one self-attention pass
mixes the three modality tokens, the pooled result is compressed to half the
shared width through a tanh, and a linear head emits five class logits.
Backpropagation is written out by hand so gradients can be checked against
finite differences.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .ablation import ComboAnnotation
from .errors import DataError, TrainingDivergedError
from .learner import FeatureBlockLayout, softmax
from .modality import (
    A,
    COMBO_A,
    COMBO_T,
    COMBO_TA,
    COMBO_TV,
    COMBO_TVA,
    COMBO_V,
    COMBO_VA,
    ModalityCombo,
    T,
    V,
)


class RouteClass(enum.Enum):
    T = 0
    TV = 1
    TA = 2
    TVA = 3
    V = 4

    @property
    def display(self) -> str:
        return _ROUTE_DISPLAY[self]

    @property
    def combo(self) -> ModalityCombo:
        return _ROUTE_COMBO[self]


_ROUTE_DISPLAY = {
    RouteClass.T: "T",
    RouteClass.TV: "T+V",
    RouteClass.TA: "T+A",
    RouteClass.TVA: "T+V+A",
    RouteClass.V: "V",
}
_ROUTE_COMBO = {
    RouteClass.T: COMBO_T,
    RouteClass.TV: COMBO_TV,
    RouteClass.TA: COMBO_TA,
    RouteClass.TVA: COMBO_TVA,
    RouteClass.V: COMBO_V,
}
ROUTE_CLASSES = tuple(RouteClass)
N_ROUTES = len(ROUTE_CLASSES)

# Audio-only has no class of its own; map onto the smallest superset present.
_TARGET_MAP = {
    COMBO_T: RouteClass.T,
    COMBO_V: RouteClass.V,
    COMBO_A: RouteClass.TA,
    COMBO_TV: RouteClass.TV,
    COMBO_TA: RouteClass.TA,
    COMBO_VA: RouteClass.TVA,
    COMBO_TVA: RouteClass.TVA,
}


def route_target(combo: ModalityCombo) -> RouteClass:
    return _TARGET_MAP[combo]


def route_targets(annotations: Sequence[ComboAnnotation]) -> list[RouteClass]:
    return [route_target(a.combo) for a in annotations]


@dataclass(frozen=True)
class RouterConfig:
    width: int = 16
    learning_rate: float = 0.5
    max_epochs: int = 600
    patience: int = 100  # dev accuracy can sit at chance for a while before takeoff
    l2: float = 1e-4
    seed: int = 0
    init_scale: float = 0.2

    def __post_init__(self):
        if self.width < 2 or self.width % 2 != 0:
            raise DataError("shared width must be an even integer >= 2")
        if self.learning_rate <= 0:
            raise DataError("learning_rate must be positive")
        if self.max_epochs < 1 or self.patience < 1:
            raise DataError("max_epochs and patience must be positive")
        if self.l2 < 0:
            raise DataError("l2 must be non-negative")


_WEIGHT_KEYS = ("proj_t", "proj_v", "proj_a", "wq", "wk", "wv", "wc", "wo")
_BIAS_KEYS = ("bias_t", "bias_v", "bias_a", "bc", "bo")
PARAM_KEYS = _WEIGHT_KEYS + _BIAS_KEYS


def init_params(layout: FeatureBlockLayout, width: int, seed: int, scale: float = 0.1) -> dict:
    rng = np.random.default_rng(seed)
    half = width // 2
    shapes = {
        "proj_t": (width, layout.text_dim),
        "proj_v": (width, layout.video_dim),
        "proj_a": (width, layout.audio_dim),
        "wq": (width, width),
        "wk": (width, width),
        "wv": (width, width),
        "wc": (half, width),
        "wo": (N_ROUTES, half),
        "bias_t": (width,),
        "bias_v": (width,),
        "bias_a": (width,),
        "bc": (half,),
        "bo": (N_ROUTES,),
    }
    return {k: scale * rng.standard_normal(shapes[k]) for k in PARAM_KEYS}


@dataclass(frozen=True, eq=False)
class RouterModel:
    layout: FeatureBlockLayout
    width: int
    params: Mapping[str, np.ndarray]
    history: tuple[dict, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "params", dict(self.params))
        for k in PARAM_KEYS:
            if k not in self.params:
                raise DataError(f"router parameters missing {k!r}")
            if not np.isfinite(self.params[k]).all():
                raise DataError(f"router parameter {k!r} is not finite")


def _split_blocks(x: np.ndarray, layout: FeatureBlockLayout):
    return (
        x[..., layout.block_slice(T)],
        x[..., layout.block_slice(V)],
        x[..., layout.block_slice(A)],
    )


def _forward(params: Mapping[str, np.ndarray], layout: FeatureBlockLayout, x: np.ndarray):
    xt, xv, xa = _split_blocks(np.atleast_2d(x), layout)
    n = xt.shape[0]
    d = params["wq"].shape[0]
    h = np.empty((n, 3, d))
    h[:, 0] = xt @ params["proj_t"].T + params["bias_t"]
    h[:, 1] = xv @ params["proj_v"].T + params["bias_v"]
    h[:, 2] = xa @ params["proj_a"].T + params["bias_a"]
    q = h @ params["wq"].T
    k = h @ params["wk"].T
    v = h @ params["wv"].T
    scores = np.einsum("nid,njd->nij", q, k) / np.sqrt(d)
    attn = softmax(scores)
    mixed = np.einsum("nij,njd->nid", attn, v)
    pooled = mixed.mean(axis=1)
    zpre = pooled @ params["wc"].T + params["bc"]
    z = np.tanh(zpre)
    logits = z @ params["wo"].T + params["bo"]
    cache = dict(xt=xt, xv=xv, xa=xa, h=h, q=q, k=k, v=v, attn=attn, pooled=pooled, z=z, d=d)
    return logits, cache


def router_loss_and_grad(
    params: Mapping[str, np.ndarray],
    layout: FeatureBlockLayout,
    x: np.ndarray,
    y: np.ndarray,
    l2: float,
) -> tuple[float, dict[str, np.ndarray]]:
    logits, c = _forward(params, layout, x)
    n = logits.shape[0]
    probs = softmax(logits)
    logp = np.log(np.clip(probs[np.arange(n), y], 1e-300, None))
    loss = -logp.mean() + 0.5 * l2 * sum(
        float((params[k] ** 2).sum()) for k in _WEIGHT_KEYS
    )

    g = probs
    g[np.arange(n), y] -= 1.0
    g /= n
    grads: dict[str, np.ndarray] = {}
    grads["wo"] = g.T @ c["z"] + l2 * params["wo"]
    grads["bo"] = g.sum(axis=0)
    dz = g @ params["wo"]
    dzpre = dz * (1.0 - c["z"] ** 2)
    grads["wc"] = dzpre.T @ c["pooled"] + l2 * params["wc"]
    grads["bc"] = dzpre.sum(axis=0)
    dpooled = dzpre @ params["wc"]
    dmixed = np.repeat(dpooled[:, None, :], 3, axis=1) / 3.0
    dattn = np.einsum("nid,njd->nij", dmixed, c["v"])
    dv = np.einsum("nij,nid->njd", c["attn"], dmixed)
    dscores = c["attn"] * (dattn - (dattn * c["attn"]).sum(axis=-1, keepdims=True))
    dscores /= np.sqrt(c["d"])
    dq = np.einsum("nij,njd->nid", dscores, c["k"])
    dk = np.einsum("nij,nid->njd", dscores, c["q"])
    grads["wq"] = np.einsum("nid,nie->de", dq, c["h"]) + l2 * params["wq"]
    grads["wk"] = np.einsum("nid,nie->de", dk, c["h"]) + l2 * params["wk"]
    grads["wv"] = np.einsum("nid,nie->de", dv, c["h"]) + l2 * params["wv"]
    dh = dq @ params["wq"] + dk @ params["wk"] + dv @ params["wv"]
    for token, key, bkey, xblock in (
        (0, "proj_t", "bias_t", c["xt"]),
        (1, "proj_v", "bias_v", c["xv"]),
        (2, "proj_a", "bias_a", c["xa"]),
    ):
        grads[key] = dh[:, token, :].T @ xblock + l2 * params[key]
        grads[bkey] = dh[:, token, :].sum(axis=0)
    return float(loss), grads


def train_router(
    train_x: np.ndarray,
    train_y: np.ndarray,
    dev_x: np.ndarray | None,
    dev_y: np.ndarray | None,
    layout: FeatureBlockLayout,
    config: RouterConfig,
) -> RouterModel:
    """Full-batch gradient descent with best-dev-accuracy early stopping."""
    if train_x.shape[0] < 1:
        raise DataError("need at least one training sample")
    params = init_params(layout, config.width, config.seed, config.init_scale)
    have_dev = dev_x is not None and dev_x.shape[0] > 0
    best = {k: v.copy() for k, v in params.items()}
    best_acc = -1.0
    stale = 0
    history = []
    for epoch in range(1, config.max_epochs + 1):
        loss, grads = router_loss_and_grad(params, layout, train_x, train_y, config.l2)
        if not np.isfinite(loss):
            raise TrainingDivergedError(
                f"non-finite router loss at epoch {epoch}; learning_rate={config.learning_rate}"
            )
        params = {k: params[k] - config.learning_rate * grads[k] for k in PARAM_KEYS}
        if have_dev:
            logits, _ = _forward(params, layout, dev_x)
            dev_acc = float(np.mean(np.argmax(logits, axis=1) == dev_y))
            if dev_acc > best_acc:
                best_acc = dev_acc
                best = {k: v.copy() for k, v in params.items()}
                stale = 0
            else:
                stale += 1
            history.append({"epoch": epoch, "loss": loss, "dev_acc": dev_acc, "best_dev_acc": best_acc})
            if stale >= config.patience:
                break
        else:
            history.append({"epoch": epoch, "loss": loss})
    if not have_dev:
        best = params
    return RouterModel(layout=layout, width=config.width, params=best, history=tuple(history))


def route_proba(model: RouterModel, x: np.ndarray) -> np.ndarray:
    if x.shape[-1] != model.layout.total_dim:
        raise DataError(f"feature length {x.shape[-1]} != layout total {model.layout.total_dim}")
    logits, _ = _forward(model.params, model.layout, x)
    return softmax(logits)


def route(model: RouterModel, x: np.ndarray) -> tuple[RouteClass, np.ndarray]:
    """Predicted route class with its five scores; ties go to the lower class
    index in the order T, T+V, T+A, T+V+A, V."""
    scores = route_proba(model, x)[0] if x.ndim == 1 else route_proba(model, x)
    if scores.ndim != 1:
        raise DataError("route() expects a single feature vector")
    return ROUTE_CLASSES[int(np.argmax(scores))], scores


# ---------------------------------------------------------------------------
# Files.

def save_router(model: RouterModel, path: str | Path) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    obj = {
        "layout": model.layout.to_json(),
        "width": model.width,
        "classes": [rc.display for rc in ROUTE_CLASSES],
        "params": {k: np.asarray(model.params[k]).tolist() for k in PARAM_KEYS},
    }
    p.write_text(json.dumps(obj, ensure_ascii=False) + "\n", encoding="utf-8")


def load_router(path: str | Path) -> RouterModel:
    p = Path(path)
    if not p.exists():
        raise DataError(f"router file not found: {p}")
    obj = json.loads(p.read_text(encoding="utf-8"))
    params = {k: np.asarray(v, dtype=np.float64) for k, v in obj["params"].items()}
    return RouterModel(
        layout=FeatureBlockLayout.from_json(obj["layout"]),
        width=int(obj["width"]),
        params=params,
    )


def save_routes(
    ids: Sequence[str], classes: Sequence[RouteClass], scores: np.ndarray, path: str | Path
) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with p.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write("id\tclass\ts_T\ts_TV\ts_TA\ts_TVA\ts_V\n")
        for i, (sid, rc) in enumerate(zip(ids, classes)):
            row = "\t".join(repr(float(s)) for s in scores[i])
            fh.write(f"{sid}\t{rc.display}\t{row}\n")
