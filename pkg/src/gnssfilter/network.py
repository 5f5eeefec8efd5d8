"""Attention-MLP network predicting per-satellite noise variance and
innovation compensation.

Architecture: 4-head self-attention over the satellites of an epoch with a
residual connection, layer normalization, a 64-128-64 ReLU MLP applied per
satellite, and a 2-column output head.  Column 0 goes through softplus to
give a strictly positive measurement variance [m^2]; column 1 is the raw
innovation compensation [m].  Padded slots are excluded from the attention
softmax by a -1e30 score bias and produce outputs consumers must ignore.
"""

from dataclasses import dataclass
import hashlib
import math

import numpy as np

from . import tape
from .tape import Var, as_var

FEATURE_DIM = 8
N_HEADS = 4
HEAD_DIM = FEATURE_DIM // N_HEADS
HIDDEN = (64, 128, 64)
LN_EPS = 1e-5
MASK_SCORE = -1e30

# initial R diagonal ~ (5 m)^2 so the untrained filter stays sane
_INITIAL_R_BIAS = math.log(math.expm1(25.0))

PARAM_SHAPES = {
    "wq": (FEATURE_DIM, FEATURE_DIM),
    "wk": (FEATURE_DIM, FEATURE_DIM),
    "wv": (FEATURE_DIM, FEATURE_DIM),
    "wo": (FEATURE_DIM, FEATURE_DIM),
    "ln_gamma": (FEATURE_DIM,),
    "ln_beta": (FEATURE_DIM,),
    "w1": (FEATURE_DIM, 64),
    "b1": (64,),
    "w2": (64, 128),
    "b2": (128,),
    "w3": (128, 64),
    "b3": (64,),
    "w4": (64, 2),
    "b4": (2,),
}
PARAM_ORDER = tuple(PARAM_SHAPES)


@dataclass
class NetOutput:
    """Per-slot network outputs; masked slots carry no meaning."""

    r_diag: Var     # (B, N) positive variances [m^2]
    v_comp: Var     # (B, N) innovation compensations [m]
    mask: np.ndarray


def init_params(rng) -> dict:
    """Uniform fan-in initialization; gamma=1, beta=0; r-head bias set so the
    untrained network outputs ~25 m^2 variances."""
    params = {}
    for name, shape in PARAM_SHAPES.items():
        if name == "ln_gamma":
            params[name] = np.ones(shape)
        elif name == "ln_beta":
            params[name] = np.zeros(shape)
        elif name.startswith("b"):
            fan_in = PARAM_SHAPES["w" + name[1:]][0]
            bound = 1.0 / math.sqrt(fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape)
        else:
            bound = 1.0 / math.sqrt(shape[0])
            params[name] = rng.uniform(-bound, bound, size=shape)
    params["b4"] = np.array([_INITIAL_R_BIAS, 0.0])
    return params


def layer_norm(x, gamma, beta):
    """Per-row normalization over the feature axis: (x - mu)/(sigma + eps)."""
    x, gamma, beta = as_var(x), as_var(gamma), as_var(beta)
    mu = tape.reduce_mean(x, axis=-1, keepdims=True)
    centered = x - mu
    var = tape.reduce_mean(centered * centered, axis=-1, keepdims=True)
    sigma = tape.sqrt(var)
    return centered * tape.reciprocal(sigma + LN_EPS) * gamma + beta


def attention_forward(x, params, mask):
    """Masked multi-head self-attention with residual: out = x + MHA(x).

    ``x`` is (N, d) or (B, N, d); ``mask`` the matching (N,) or (B, N)
    validity flags.  Masked keys receive -1e30 scores so they get exactly
    zero attention weight.
    """
    x = as_var(x)
    squeeze = x.value.ndim == 2
    if squeeze:
        x = tape.reshape(x, (1,) + x.value.shape)
        mask = np.asarray(mask).reshape(1, -1)
    b, n, d = x.value.shape
    mask = np.asarray(mask, dtype=bool)

    def project(w):
        flat = tape.reshape(x, (b * n, d)) @ as_var(w)
        heads = tape.reshape(flat, (b, n, N_HEADS, HEAD_DIM))
        return tape.transpose(heads, (0, 2, 1, 3))        # (B, H, N, hd)

    q = project(params["wq"])
    k = project(params["wk"])
    v = project(params["wv"])
    scores = (q @ tape.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(HEAD_DIM))
    bias = np.where(mask, 0.0, MASK_SCORE)[:, None, None, :]   # mask keys
    weights = tape.softmax(scores + bias, axis=-1)
    context = tape.transpose(weights @ v, (0, 2, 1, 3))        # (B, N, H, hd)
    merged = tape.reshape(context, (b * n, d)) @ as_var(params["wo"])
    out = x + tape.reshape(merged, (b, n, d))
    if squeeze:
        out = tape.reshape(out, (n, d))
    return out


def forward(values, mask, params) -> NetOutput:
    """Full forward pass on a padded (B, N, 8) feature block."""
    x = attention_forward(values, params, mask)
    x = layer_norm(x, params["ln_gamma"], params["ln_beta"])
    b, n, d = x.value.shape
    h = tape.reshape(x, (b * n, d))
    h = tape.relu(h @ as_var(params["w1"]) + as_var(params["b1"]))
    h = tape.relu(h @ as_var(params["w2"]) + as_var(params["b2"]))
    h = tape.relu(h @ as_var(params["w3"]) + as_var(params["b3"]))
    out = h @ as_var(params["w4"]) + as_var(params["b4"])
    out = tape.reshape(out, (b, n, 2))
    r_diag = tape.softplus(out[..., 0])
    v_comp = out[..., 1]
    return NetOutput(r_diag=r_diag, v_comp=v_comp, mask=np.asarray(mask, dtype=bool))


def as_leaves(params: dict) -> dict:
    """Wrap parameter arrays as gradient-accumulating leaf Vars."""
    return {name: tape.leaf(arr) for name, arr in params.items()}


def grads_of(leaves: dict) -> dict:
    """Extract accumulated gradients (zeros where a parameter was unused)."""
    return {name: (v.grad if v.grad is not None else np.zeros_like(v.value))
            for name, v in leaves.items()}


# --- model file --------------------------------------------------------------

_MODEL_MAGIC = "gnssfilter-netparams"
_MODEL_VERSION = 1


def save_params(params: dict, path):
    """Text dump: shape headers, 17-significant-digit values, sha256 footer."""
    lines = [f"{_MODEL_MAGIC} v{_MODEL_VERSION}"]
    for name in PARAM_ORDER:
        arr = np.asarray(params[name], dtype=np.float64)
        if arr.shape != PARAM_SHAPES[name]:
            raise ValueError(f"{name} has shape {arr.shape}, "
                             f"expected {PARAM_SHAPES[name]}")
        lines.append(name + " " + " ".join(str(s) for s in arr.shape))
        lines.append(" ".join(format(x, ".17g") for x in arr.reshape(-1)))
    body = "\n".join(lines) + "\n"
    digest = hashlib.sha256(body.encode("ascii")).hexdigest()
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(body)
        fh.write(f"checksum {digest}\n")


def load_params(path) -> dict:
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith(_MODEL_MAGIC):
        raise ValueError(f"{path}: not a {_MODEL_MAGIC} file")
    if lines[0] != f"{_MODEL_MAGIC} v{_MODEL_VERSION}":
        raise ValueError(f"{path}: unsupported version line {lines[0]!r}")
    if not lines[-1].startswith("checksum "):
        raise ValueError(f"{path}: missing checksum footer")
    body = "\n".join(lines[:-1]) + "\n"
    digest = hashlib.sha256(body.encode("ascii")).hexdigest()
    if lines[-1].split()[1] != digest:
        raise ValueError(f"{path}: checksum mismatch")
    params = {}
    i = 1
    while i < len(lines) - 1:
        header = lines[i].split()
        name, shape = header[0], tuple(int(s) for s in header[1:])
        values = np.array([float(tok) for tok in lines[i + 1].split()])
        params[name] = values.reshape(shape)
        i += 2
    missing = set(PARAM_SHAPES) - set(params)
    if missing:
        raise ValueError(f"{path}: missing parameters {sorted(missing)}")
    for name, arr in params.items():
        if arr.shape != PARAM_SHAPES.get(name):
            raise ValueError(f"{path}: {name} has shape {arr.shape}")
    return params
