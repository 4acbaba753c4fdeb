"""Geometry-conditioned view transformer for panoramic ECG synthesis.

The network maps a handful of recorded leads (signals + electrode angles) to
the signal at an arbitrary query angle.  Pipeline: sinusoidal angle embedding
with learnable per-lead angular deviations -> strided 1-D conv encoder whose
output is FiLM-modulated by the query embedding -> an angular attention map
computed purely from angles -> L gated fusion blocks sharing that map -> a
conv/upsample reconstruction head back to the time domain.
"""

from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .rng import stream

__all__ = [
    "ModelConfig",
    "GeoVTModel",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointFormatError",
    "PCKP_MAGIC",
]

PCKP_MAGIC = b"PCKP"
PCKP_VERSION = 1


class CheckpointFormatError(ValueError):
    """Malformed or corrupted PCKP checkpoint."""


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    The encoder downsamples by the product of ``upsample_factors`` (stem
    stride = first factor, one strided residual block per remaining factor),
    so encoded length t' times that product always equals the input length.
    """

    channels: int = 64          # c: encoder/feature channels
    depth: int = 4              # L: gated fusion blocks
    d_embed: int = 64           # d: angle-embedding width
    d_attn: int = 64            # d': attention projection width
    n_freqs: int = 6            # K: sinusoid frequency count
    upsample_factors: tuple[int, ...] = (2, 2, 2)
    n_leads: int = 48           # catalog size for per-lead deviations
    se_ratio: int = 4
    use_attention: bool = True  # False: uniform 1/l fusion weights
    use_film: bool = True       # False: encoder ignores the query angle

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if min(self.upsample_factors, default=0) < 1 or len(self.upsample_factors) < 1:
            raise ValueError("upsample_factors must be a non-empty tuple of positive ints")
        if self.channels < self.se_ratio:
            raise ValueError("channels must be >= se_ratio")

    @property
    def downsample(self) -> int:
        return int(np.prod(self.upsample_factors))


_DEG = math.pi / 180.0


def _wrap_phi_array(phi: np.ndarray) -> np.ndarray:
    w = ((phi + 180.0) % 360.0) - 180.0
    w[w == -180.0] = 180.0
    return w


def _he(rng, shape, fan_in) -> np.ndarray:
    return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape).astype(np.float32)


def _xavier(rng, shape) -> np.ndarray:
    fan_in, fan_out = shape[0], shape[-1]
    return rng.normal(0.0, math.sqrt(2.0 / (fan_in + fan_out)), size=shape).astype(np.float32)


class GeoVTModel:
    """Parameter container plus the forward computation."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.training = False
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._init_params(seed)
        # constant column selectors for splitting (theta, phi) pairs
        self._sel_theta = Tensor(np.array([[1.0], [0.0]], dtype=np.float32))
        self._sel_phi = Tensor(np.array([[0.0], [1.0]], dtype=np.float32))

    # ------------------------------------------------------------------
    # parameters
    # ------------------------------------------------------------------

    def _init_params(self, seed: int) -> None:
        cfg = self.config
        c, d, dp, k4 = cfg.channels, cfg.d_embed, cfg.d_attn, 4 * cfg.n_freqs
        rng = stream(seed, "model-init")

        def p(name, arr):
            self.params[name] = Tensor(arr, requires_grad=True)

        p("dev", np.zeros((cfg.n_leads, 2), dtype=np.float32))
        p("emb.w", _xavier(rng, (k4, d)))
        p("emb.b", np.zeros(d, dtype=np.float32))
        p("fo0.w", _xavier(rng, (d, c)))
        p("fo0.b", np.zeros(c, dtype=np.float32))

        p("enc.stem.w", _he(rng, (c, 1, 7), 7))
        p("enc.stem.b", np.zeros(c, dtype=np.float32))
        for b in range(len(cfg.upsample_factors) - 1):
            p(f"enc.b{b}.c1.w", _he(rng, (c, c, 3), 3 * c))
            p(f"enc.b{b}.c1.b", np.zeros(c, dtype=np.float32))
            p(f"enc.b{b}.c2.w", _he(rng, (c, c, 3), 3 * c))
            p(f"enc.b{b}.c2.b", np.zeros(c, dtype=np.float32))
            p(f"enc.b{b}.sk.w", _he(rng, (c, c, 1), c))
            p(f"enc.b{b}.sk.b", np.zeros(c, dtype=np.float32))

        # FiLM starts as identity: gamma = 1 + 0, beta = 0
        p("film.g.w", np.zeros((d, c), dtype=np.float32))
        p("film.g.b", np.zeros(c, dtype=np.float32))
        p("film.b.w", np.zeros((d, c), dtype=np.float32))
        p("film.b.b", np.zeros(c, dtype=np.float32))

        p("gaa.wq", _xavier(rng, (d, dp)))
        p("gaa.wk", _xavier(rng, (d, dp)))

        cb = max(1, c // cfg.se_ratio)
        for i in range(cfg.depth):
            if i < cfg.depth - 1:  # the last block's lead features feed nothing
                eye = np.eye(c, dtype=np.float32)
                p(f"blk{i}.vlin.w", eye + rng.normal(0.0, 0.02, size=(c, c)).astype(np.float32))
                p(f"blk{i}.vlin.b", np.zeros(c, dtype=np.float32))
            p(f"blk{i}.se.w1", _xavier(rng, (c, cb)))
            p(f"blk{i}.se.b1", np.zeros(cb, dtype=np.float32))
            p(f"blk{i}.se.w2", _xavier(rng, (cb, c)))
            p(f"blk{i}.se.b2", np.zeros(c, dtype=np.float32))
            p(f"blk{i}.gate", np.zeros(c, dtype=np.float32))  # sigmoid(0) = 0.5

        for s in range(len(cfg.upsample_factors)):
            p(f"rec{s}.conv.w", _he(rng, (c, c, 3), 3 * c))
            p(f"rec{s}.conv.b", np.zeros(c, dtype=np.float32))
            p(f"rec{s}.ln.g", np.ones((c, 1), dtype=np.float32))
            p(f"rec{s}.ln.b", np.zeros((c, 1), dtype=np.float32))
            u = rng.normal(size=c).astype(np.float32)
            self.buffers[f"rec{s}.u"] = u / max(np.linalg.norm(u), 1e-12)
        p("head.w", _he(rng, (1, c, 1), c))
        p("head.b", np.zeros(1, dtype=np.float32))

    def train(self) -> "GeoVTModel":
        self.training = True
        return self

    def eval(self) -> "GeoVTModel":
        self.training = False
        return self

    def n_params(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def param_names(self, group: str = "all") -> list[str]:
        """Named subsets: all | deviations | angle_pathway."""
        if group == "all":
            return list(self.params)
        if group == "deviations":
            return ["dev"]
        if group == "angle_pathway":
            return ["dev", "emb.w", "emb.b"]
        raise KeyError(f"unknown parameter group {group!r}")

    # ------------------------------------------------------------------
    # components
    # ------------------------------------------------------------------

    def embed_angles(self, angles_deg: np.ndarray, lead_ids: Optional[np.ndarray] = None) -> Tensor:
        """(N, 2) degree angles -> (N, d) embeddings.

        Azimuths are wrapped before embedding so coterminal angles embed
        bit-identically; learnable deviations (degrees, indexed by lead id)
        are added inside the graph so gradients reach them.
        """
        a = np.asarray(angles_deg, dtype=np.float32).reshape(-1, 2).copy()
        a[:, 1] = _wrap_phi_array(a[:, 1])
        ang = Tensor(a)
        if lead_ids is not None:
            ids = np.asarray(lead_ids, dtype=np.int64).reshape(-1)
            if ids.shape[0] != a.shape[0]:
                raise ad.DimensionError(f"{ids.shape[0]} lead ids for {a.shape[0]} angles")
            ang = ang + ad.index_rows(self.params["dev"], ids)
        theta = ang @ self._sel_theta  # (N, 1)
        phi = ang @ self._sel_phi
        parts = []
        for k in range(self.config.n_freqs):
            s = float((2.0**k) * _DEG)
            parts += [ad.tsin(theta * s), ad.tcos(theta * s), ad.tsin(phi * s), ad.tcos(phi * s)]
        feats = ad.concat(parts, axis=-1)
        return feats @ self.params["emb.w"] + self.params["emb.b"]

    def encode_signals(self, x: Tensor) -> Tensor:
        """(N, 1, t) -> (N, c, t / downsample) strided residual conv stack."""
        cfg = self.config
        if x.data.shape[-1] % cfg.downsample != 0:
            raise ad.DimensionError(
                f"signal length {x.data.shape[-1]} not divisible by downsample factor {cfg.downsample}"
            )
        p = self.params
        h = ad.relu(ad.conv1d(x, p["enc.stem.w"], p["enc.stem.b"], stride=cfg.upsample_factors[0], padding=3))
        for b, f in enumerate(cfg.upsample_factors[1:]):
            r = ad.relu(ad.conv1d(h, p[f"enc.b{b}.c1.w"], p[f"enc.b{b}.c1.b"], stride=f, padding=1))
            r = ad.conv1d(r, p[f"enc.b{b}.c2.w"], p[f"enc.b{b}.c2.b"], stride=1, padding=1)
            sk = ad.conv1d(h, p[f"enc.b{b}.sk.w"], p[f"enc.b{b}.sk.b"], stride=f, padding=0)
            h = ad.relu(r + sk)
        return h

    def film(self, feats: Tensor, query_emb: Tensor) -> Tensor:
        """Affine modulation of (B, 1, l, c, t') features by (B, q, d) queries."""
        p = self.params
        bsz, q = query_emb.data.shape[0], query_emb.data.shape[1]
        c = self.config.channels
        gamma = 1.0 + (query_emb @ p["film.g.w"] + p["film.g.b"])
        beta = query_emb @ p["film.b.w"] + p["film.b.b"]
        gamma = gamma.reshape((bsz, q, 1, c, 1))
        beta = beta.reshape((bsz, q, 1, c, 1))
        return feats * gamma + beta

    def compute_gaa(self, query_emb: Tensor, key_emb: Tensor) -> Tensor:
        """Row-stochastic (B, q, l) fusion weights from angle embeddings only."""
        p = self.params
        qp = query_emb @ p["gaa.wq"]
        kp = key_emb @ p["gaa.wk"]
        axes = tuple(range(kp.data.ndim - 2)) + (kp.data.ndim - 1, kp.data.ndim - 2)
        scores = (qp @ kp.transpose(axes)) * (1.0 / math.sqrt(self.config.d_attn))
        return ad.softmax(scores, axis=-1)

    def fusion_block(self, i: int, f_o: Tensor, f_v: Tensor, gaa: Tensor) -> tuple[Tensor, Tensor]:
        """One gated fusion step; all blocks share the same attention map.

        f_o: (B, q, c, t') query state; f_v: (B, q|1, l, c, t') lead features.
        """
        p = self.params
        bsz, q, l = gaa.data.shape
        fused = (f_v * gaa.reshape((bsz, q, l, 1, 1))).sum(axis=2)  # (B, q, c, t')
        # squeeze-and-excite over channels of the fused map
        s = fused.mean(axis=-1)
        e = ad.sigmoid(ad.relu(s @ p[f"blk{i}.se.w1"] + p[f"blk{i}.se.b1"]) @ p[f"blk{i}.se.w2"] + p[f"blk{i}.se.b2"])
        ext = fused * e.reshape((bsz, q, self.config.channels, 1))
        gate = ad.sigmoid(p[f"blk{i}.gate"]).reshape((self.config.channels, 1))
        f_o_next = f_o * (1.0 - gate) + ext * gate
        if i < self.config.depth - 1:
            f_v = p[f"blk{i}.vlin.w"] @ f_v + p[f"blk{i}.vlin.b"].reshape((self.config.channels, 1))
        return f_o_next, f_v

    def reconstruct(self, f_o: Tensor) -> Tensor:
        """(B, q, c, t') -> (B, q, t) through upsample/conv/norm/GELU stages."""
        p = self.params
        bsz, q, c, tp = f_o.data.shape
        x = f_o.reshape((bsz * q, c, tp))
        n_iters = 1 if self.training else 0
        for s, f in enumerate(self.config.upsample_factors):
            x = ad.upsample_linear(x, f)
            w = ad.spectral_normalize(p[f"rec{s}.conv.w"], self.buffers[f"rec{s}.u"], n_iters=n_iters, update=self.training)
            x = ad.conv1d(x, w, p[f"rec{s}.conv.b"], stride=1, padding=1)
            x = ad.layer_norm(x, p[f"rec{s}.ln.g"], p[f"rec{s}.ln.b"])
            x = ad.gelu(x)
        y = ad.conv1d(x, p["head.w"], p["head.b"])
        return y.reshape((bsz, q, y.data.shape[-1]))

    # ------------------------------------------------------------------
    # full forward
    # ------------------------------------------------------------------

    def forward(
        self,
        signals: np.ndarray,
        rec_angles: np.ndarray,
        query_angles: np.ndarray,
        rec_lead_ids: Optional[np.ndarray] = None,
        query_lead_ids: Optional[np.ndarray] = None,
    ) -> Tensor:
        """Synthesize query-angle signals from recorded leads.

        signals (B, l, t); rec_angles (B, l, 2); query_angles (B, q, 2),
        degrees.  Lead ids (same leading shapes) select learnable deviations;
        omit them for angles outside the device catalog.  Returns (B, q, t).
        """
        cfg = self.config
        signals = np.asarray(signals, dtype=np.float32)
        if signals.ndim != 3:
            raise ad.DimensionError(f"signals must be (B, l, t), got {signals.shape}")
        bsz, l, t = signals.shape
        rec_angles = np.asarray(rec_angles, dtype=np.float32).reshape(bsz, l, 2)
        query_angles = np.asarray(query_angles, dtype=np.float32)
        if query_angles.ndim == 2:
            query_angles = np.broadcast_to(query_angles[None], (bsz,) + query_angles.shape)
        q = query_angles.shape[1]
        if l < 1 or q < 1:
            raise ad.DimensionError("need at least one recorded lead and one query")

        key_emb = self.embed_angles(rec_angles.reshape(-1, 2), rec_lead_ids).reshape((bsz, l, cfg.d_embed))
        qry_emb = self.embed_angles(np.ascontiguousarray(query_angles).reshape(-1, 2), query_lead_ids).reshape(
            (bsz, q, cfg.d_embed)
        )

        if cfg.use_attention:
            gaa = self.compute_gaa(qry_emb, key_emb)
        else:
            gaa = Tensor(np.full((bsz, q, l), 1.0 / l, dtype=np.float32))

        base = self.encode_signals(Tensor(signals.reshape(bsz * l, 1, t)))
        tp = base.data.shape[-1]
        f_v = base.reshape((bsz, 1, l, cfg.channels, tp))
        if cfg.use_film:
            f_v = self.film(f_v, qry_emb)

        f_o = (qry_emb @ self.params["fo0.w"] + self.params["fo0.b"]).reshape((bsz, q, cfg.channels, 1))
        f_o = f_o * Tensor(np.ones((1, 1, 1, tp), dtype=np.float32))
        for i in range(cfg.depth):
            f_o, f_v = self.fusion_block(i, f_o, f_v, gaa)
        return self.reconstruct(f_o)

    def gaa_map(self, rec_angles: np.ndarray, query_angles: np.ndarray, rec_lead_ids=None, query_lead_ids=None) -> np.ndarray:
        """Attention map as a plain array (no tape needed)."""
        ra = np.asarray(rec_angles, dtype=np.float32).reshape(1, -1, 2)
        qa = np.asarray(query_angles, dtype=np.float32).reshape(1, -1, 2)
        ke = self.embed_angles(ra.reshape(-1, 2), rec_lead_ids).reshape((1, ra.shape[1], self.config.d_embed))
        qe = self.embed_angles(qa.reshape(-1, 2), query_lead_ids).reshape((1, qa.shape[1], self.config.d_embed))
        return self.compute_gaa(qe, ke).data[0]


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def checkpoint_to_bytes(model: GeoVTModel) -> bytes:
    names = sorted(model.params)
    bufs = sorted(model.buffers)
    payload = b"".join(np.ascontiguousarray(model.params[n].data, dtype="<f4").tobytes() for n in names)
    payload += b"".join(np.ascontiguousarray(model.buffers[n], dtype="<f4").tobytes() for n in bufs)
    cfg = asdict(model.config)
    cfg["upsample_factors"] = list(cfg["upsample_factors"])
    header = {
        "config": cfg,
        "params": [{"name": n, "shape": list(model.params[n].data.shape)} for n in names],
        "buffers": [{"name": n, "shape": list(model.buffers[n].shape)} for n in bufs],
        "crc32": zlib.crc32(payload) & 0xFFFFFFFF,
    }
    hdr = json.dumps(header, sort_keys=True).encode("utf-8")
    return PCKP_MAGIC + struct.pack("<II", PCKP_VERSION, len(hdr)) + hdr + payload


def checkpoint_from_bytes(blob: bytes) -> GeoVTModel:
    if len(blob) < 12 or blob[:4] != PCKP_MAGIC:
        raise CheckpointFormatError("bad magic: not a PCKP checkpoint")
    version, hdr_len = struct.unpack("<II", blob[4:12])
    if version != PCKP_VERSION:
        raise CheckpointFormatError(f"unsupported PCKP version {version}")
    if len(blob) < 12 + hdr_len:
        raise CheckpointFormatError("truncated header")
    header = json.loads(blob[12 : 12 + hdr_len].decode("utf-8"))
    payload = blob[12 + hdr_len :]
    if (zlib.crc32(payload) & 0xFFFFFFFF) != header["crc32"]:
        raise CheckpointFormatError("checksum mismatch")
    cfg_d = dict(header["config"])
    cfg_d["upsample_factors"] = tuple(cfg_d["upsample_factors"])
    model = GeoVTModel(ModelConfig(**cfg_d), seed=0)
    off = 0
    for entry in header["params"]:
        n, shape = entry["name"], tuple(entry["shape"])
        if n not in model.params or model.params[n].data.shape != shape:
            raise CheckpointFormatError(f"unexpected parameter {n} with shape {shape}")
        size = int(np.prod(shape))
        model.params[n].data = np.frombuffer(payload, dtype="<f4", count=size, offset=off).reshape(shape).copy()
        off += size * 4
    for entry in header["buffers"]:
        n, shape = entry["name"], tuple(entry["shape"])
        if n not in model.buffers or model.buffers[n].shape != shape:
            raise CheckpointFormatError(f"unexpected buffer {n} with shape {shape}")
        size = int(np.prod(shape))
        model.buffers[n] = np.frombuffer(payload, dtype="<f4", count=size, offset=off).reshape(shape).copy()
        off += size * 4
    if off != len(payload):
        raise CheckpointFormatError(f"payload size mismatch: consumed {off} of {len(payload)} bytes")
    return model


def save_checkpoint(model: GeoVTModel, path: str | Path) -> Path:
    path = Path(path)
    path.write_bytes(checkpoint_to_bytes(model))
    return path


def load_checkpoint(path: str | Path) -> GeoVTModel:
    return checkpoint_from_bytes(Path(path).read_bytes())
