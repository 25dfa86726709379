"""Differentiable planners mapping (maze, goal) maps to per-state action logits.

All three forwards take stacked input maps ``(B, 1 + O, m, m)`` (maze
channel then ``O`` goal channels) and return logit maps of shape
``(B, O, A, m, m)``; :func:`state_logits` reads them out per state.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass
from typing import Dict

import numpy as np

from . import autodiff as ad
from .exceptions import ConfigError, DatasetFormatError
from .grid import Kernel, StateSpace

ARCHS = ("VIN", "GPPN", "HYPERVIN")
DEFAULT_HIDDEN = {"VIN": 600, "GPPN": 150, "HYPERVIN": 300}


@dataclass(frozen=True)
class PlannerConfig:
    arch: str = "GPPN"
    K: int = 20
    F: int = 3
    hidden: int = None
    kernel: Kernel = Kernel.NEWS

    def __post_init__(self):
        arch = str(self.arch).upper().replace("-", "").replace("_", "")
        if arch not in ARCHS:
            raise ConfigError(f"unknown planner {self.arch!r}; expected one of {ARCHS}")
        object.__setattr__(self, "arch", arch)
        object.__setattr__(self, "kernel", Kernel.parse(self.kernel))
        if self.hidden is None:
            object.__setattr__(self, "hidden", DEFAULT_HIDDEN[arch])
        if self.K < 1:
            raise ConfigError(f"K must be >= 1, got {self.K}")
        if self.F < 3 or self.F % 2 == 0:
            raise ConfigError(f"F must be odd and >= 3, got {self.F}")
        if arch == "HYPERVIN" and self.F != 3:
            raise ConfigError("Hyper-VIN uses 3x3 untied kernels; F must be 3")
        if self.hidden < 1:
            raise ConfigError(f"hidden must be positive, got {self.hidden}")

    @property
    def in_channels(self) -> int:
        return 1 + self.kernel.orientation_count

    @property
    def out_channels(self) -> int:
        return self.kernel.orientation_count * self.kernel.action_count


def param_shapes(cfg: PlannerConfig) -> Dict[str, tuple]:
    C, F, H = cfg.in_channels, cfg.F, cfg.hidden
    head = {"policy.weight": (cfg.out_channels, H, 1, 1), "policy.bias": (cfg.out_channels,)}
    if cfg.arch == "VIN":
        return {
            "reward.weight": (1, C, F, F),
            "reward.bias": (1,),
            "q.weight": (H, 2, F, F),
            **head,
        }
    if cfg.arch == "GPPN":
        return {
            "input.weight": (H, C, F, F),
            "input.bias": (H,),
            "hconv.weight": (1, H, F, F),
            "hconv.bias": (1,),
            "lstm.weight": (1 + H, 4 * H),
            "lstm.bias": (4 * H,),
            **head,
        }
    return {
        "reward.weight": (1, C, F, F),
        "reward.bias": (1,),
        "hyper1.weight": (H, C, F, F),
        "hyper1.bias": (H,),
        "hyper2.weight": (H * 2 * 9, H, F, F),
        "hyper2.bias": (H * 2 * 9,),
        **head,
    }


def _fan_in(name, shapes):
    owner = name.rsplit(".", 1)[0] + ".weight"
    shape = shapes[owner]
    if owner == "lstm.weight":
        return shape[0]
    return int(np.prod(shape[1:]))


def init_params(cfg: PlannerConfig, rng: np.random.Generator, dtype=np.float32) -> Dict[str, ad.Tensor]:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) everywhere; LSTM forget bias 1."""
    shapes = param_shapes(cfg)
    params = {}
    for name, shape in shapes.items():
        bound = 1.0 / np.sqrt(_fan_in(name, shapes))
        data = rng.uniform(-bound, bound, size=shape)
        if name == "lstm.bias":
            H = cfg.hidden
            data[H:2 * H] = 1.0
        params[name] = ad.Tensor(data.astype(dtype), requires_grad=True, name=name)
    return params


def zero_params(cfg: PlannerConfig, dtype=np.float64) -> Dict[str, ad.Tensor]:
    return {
        name: ad.Tensor(np.zeros(shape, dtype=dtype), requires_grad=True, name=name)
        for name, shape in param_shapes(cfg).items()
    }


def _policy_head(params, features, cfg):
    B, _, m, _ = features.shape
    logits = ad.conv2d(features, params["policy.weight"], params["policy.bias"])
    O, A = cfg.kernel.orientation_count, cfg.kernel.action_count
    return ad.reshape(logits, (B, O, A, m, m))


def _check_input(maps, cfg):
    maps = maps if isinstance(maps, ad.Tensor) else ad.Tensor(maps)
    if maps.ndim != 4 or maps.shape[1] != cfg.in_channels or maps.shape[2] != maps.shape[3]:
        raise ConfigError(
            f"expected input maps (B, {cfg.in_channels}, m, m) for {cfg.kernel.name}, got {maps.shape}"
        )
    return maps


def vin_forward(params, maps, cfg: PlannerConfig):
    """Reward conv, K rounds of conv over [reward; value] with channel max, 1x1 head on Q."""
    maps = _check_input(maps, cfg)
    B, _, m, _ = maps.shape
    reward = ad.conv2d(maps, params["reward.weight"], params["reward.bias"])
    value = ad.Tensor(np.zeros((B, 1, m, m), dtype=maps.dtype))
    for _ in range(cfg.K):
        q = ad.conv2d(ad.concat([reward, value], axis=1), params["q.weight"])
        value, _ = ad.channel_max(q)
    return _policy_head(params, q, cfg)


def gppn_forward(params, maps, cfg: PlannerConfig):
    """Input conv to h0; K rounds of (conv h -> 1 channel -> shared LSTM cell per position)."""
    maps = _check_input(maps, cfg)
    B, _, m, _ = maps.shape
    H = cfg.hidden
    N = B * m * m
    h_map = ad.conv2d(maps, params["input.weight"], params["input.bias"])
    h = ad.reshape(ad.transpose(h_map, (0, 2, 3, 1)), (N, H))
    c = ad.Tensor(np.zeros((N, H), dtype=maps.dtype))
    for _ in range(cfg.K):
        x = ad.conv2d(h_map, params["hconv.weight"], params["hconv.bias"])
        x = ad.reshape(x, (N, 1))
        h, c = ad.lstm_cell(x, h, c, params["lstm.weight"], params["lstm.bias"])
        h_map = ad.transpose(ad.reshape(h, (B, m, m, H)), (0, 3, 1, 2))
    return _policy_head(params, h_map, cfg)


def hypervin_weights(params, maps, cfg: PlannerConfig):
    """Per-position kernels ``(B, hidden, 2, 3, 3, m, m)`` from a two-layer conv net."""
    B, _, m, _ = maps.shape
    z = ad.tanh(ad.conv2d(maps, params["hyper1.weight"], params["hyper1.bias"]))
    w = ad.conv2d(z, params["hyper2.weight"], params["hyper2.bias"])
    return ad.reshape(w, (B, cfg.hidden, 2, 3, 3, m, m))


def hypervin_forward(params, maps, cfg: PlannerConfig):
    """VIN recurrence with untied, maze-predicted 3x3 kernels at every position."""
    maps = _check_input(maps, cfg)
    B, _, m, _ = maps.shape
    reward = ad.conv2d(maps, params["reward.weight"], params["reward.bias"])
    local_w = hypervin_weights(params, maps, cfg)
    value = ad.Tensor(np.zeros((B, 1, m, m), dtype=maps.dtype))
    for _ in range(cfg.K):
        q = ad.local_conv2d(ad.concat([reward, value], axis=1), local_w)
        value, _ = ad.channel_max(q)
    return _policy_head(params, q, cfg)


FORWARDS = {"VIN": vin_forward, "GPPN": gppn_forward, "HYPERVIN": hypervin_forward}


def forward(params, maps, cfg: PlannerConfig):
    return FORWARDS[cfg.arch](params, maps, cfg)


def state_logits(logit_map: np.ndarray, space: StateSpace) -> np.ndarray:
    """``(S, A)`` logits of one sample, rows in ``enumerate_states`` order."""
    st = space.states
    lm = logit_map.data if isinstance(logit_map, ad.Tensor) else np.asarray(logit_map)
    return lm[st[:, 2], :, st[:, 1], st[:, 0]]


# -- checkpoint container -----------------------------------------------------
#
#   magic "GPCK" | version u16 | header_len u32 | header JSON (utf-8)
#   n_tensors u32 | per tensor: name_len u16, name, ndim u8, dims u32 x ndim,
#   values little-endian float32/float64 (precision from the header)
#
# All integers little-endian. Header keys: arch, K, F, hidden, kernel,
# precision ("float32" | "float64").

CKPT_MAGIC = b"GPCK"
CKPT_VERSION = 1


def save_checkpoint(path_or_file, cfg: PlannerConfig, params, extra=None):
    precision = np.dtype(next(iter(params.values())).dtype).name
    header = {**asdict(cfg), "kernel": cfg.kernel.name, "precision": precision}
    if extra:
        header["extra"] = extra
    hbytes = json.dumps(header, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<HI", CKPT_VERSION, len(hbytes)))
    buf.write(hbytes)
    names = list(param_shapes(cfg))
    buf.write(struct.pack("<I", len(names)))
    le = np.dtype(precision).newbyteorder("<")
    for name in names:
        arr = np.asarray(params[name].data if isinstance(params[name], ad.Tensor) else params[name])
        nb = name.encode()
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.astype(le).tobytes())
    data = buf.getvalue()
    if hasattr(path_or_file, "write"):
        path_or_file.write(data)
    else:
        with open(path_or_file, "wb") as fh:
            fh.write(data)


def load_checkpoint(path_or_file):
    """Returns ``(cfg, params, header)``."""
    if hasattr(path_or_file, "read"):
        data = path_or_file.read()
    else:
        with open(path_or_file, "rb") as fh:
            data = fh.read()
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise DatasetFormatError(f"checkpoint truncated while reading {what}", pos)
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    if take(4, "magic") != CKPT_MAGIC:
        raise DatasetFormatError("not a checkpoint (bad magic)", 0)
    version, hlen = struct.unpack("<HI", take(6, "version"))
    if version != CKPT_VERSION:
        raise DatasetFormatError(f"unsupported checkpoint version {version}", 4)
    header = json.loads(take(hlen, "header").decode())
    cfg = PlannerConfig(arch=header["arch"], K=header["K"], F=header["F"],
                        hidden=header["hidden"], kernel=header["kernel"])
    dtype = np.dtype(header["precision"]).newbyteorder("<")
    (count,) = struct.unpack("<I", take(4, "tensor count"))
    params = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2, "name length"))
        name = take(nlen, "name").decode()
        (ndim,) = struct.unpack("<B", take(1, "ndim"))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim, "shape"))
        n = int(np.prod(shape)) if ndim else 1
        raw = take(n * dtype.itemsize, f"values of {name}")
        arr = np.frombuffer(raw, dtype=dtype).astype(dtype.newbyteorder("=")).reshape(shape)
        params[name] = ad.Tensor(arr, requires_grad=True, name=name)
    expected = param_shapes(cfg)
    for name, shape in expected.items():
        if name not in params or params[name].shape != tuple(shape):
            raise DatasetFormatError(f"checkpoint tensor {name} missing or mis-shaped")
    return cfg, params, header
