"""Model description, synthetic model construction, and weight files.

Synthetic models stand in for trained checkpoints: the ``concentrated``
recipe plants an attention-sink key, optional high-norm "fact" keys with
probe-token queries, and keeps every other cross-window score far enough
below the sink score that the excluded softmax terms vanish in float32.
The ``random`` recipe is the negative control: plain i.i.d. weights that
spread attention roughly uniformly.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from condensate.errors import (
    ConfigError,
    MalformedHeaderError,
    SequenceOverflowError,
    ShapeError,
    TensorShapeError,
    TruncatedTensorError,
)

MAGIC = b"CNDNSATE"
FORMAT_VERSION = 1

SINK_TOKEN = 0


@dataclass(frozen=True)
class ModelSpec:
    n_layers: int
    n_heads: int
    n_kv_heads: int
    head_dim: int
    vocab_size: int
    max_seq: int
    rope_enabled: bool = False
    rope_theta: float = 10000.0
    eos_token: int = -1  # negative: generation never stops on EOS
    model_dim: int = 0  # 0: defaults to n_heads * head_dim
    mlp_hidden: int = 0  # 0: defaults to 4 * model_dim
    norm_kind: str = "rmsnorm"  # or "layernorm"
    norm_eps: float = 1e-5

    def __post_init__(self):
        if self.n_layers < 1:
            raise ConfigError("n_layers must be >= 1")
        if self.n_kv_heads < 1 or self.n_heads % self.n_kv_heads:
            raise ConfigError("n_heads must be divisible by n_kv_heads")
        if self.rope_enabled and self.head_dim % 2:
            raise ConfigError("head_dim must be even when rope_enabled")
        if self.norm_kind not in ("rmsnorm", "layernorm"):
            raise ConfigError(f"unknown norm_kind '{self.norm_kind}'")
        if self.model_dim == 0:
            object.__setattr__(self, "model_dim", self.n_heads * self.head_dim)
        if self.mlp_hidden == 0:
            object.__setattr__(self, "mlp_hidden", 4 * self.model_dim)

    @property
    def gqa_ratio(self) -> int:
        return self.n_heads // self.n_kv_heads

    def kv_head_of(self, query_head: int) -> int:
        return query_head // self.gqa_ratio


@dataclass
class LayerWeights:
    w_q: np.ndarray  # (H*d, model_dim)
    w_k: np.ndarray  # (H_kv*d, model_dim)
    w_v: np.ndarray  # (H_kv*d, model_dim)
    w_o: np.ndarray  # (model_dim, H*d)
    mlp_in: np.ndarray  # (mlp_hidden, model_dim)
    mlp_out: np.ndarray  # (model_dim, mlp_hidden)
    norm1: np.ndarray  # (model_dim,)
    norm2: np.ndarray  # (model_dim,)
    b_q: np.ndarray | None = None
    b_k: np.ndarray | None = None
    b_v: np.ndarray | None = None
    b_o: np.ndarray | None = None
    b_mlp_in: np.ndarray | None = None
    b_mlp_out: np.ndarray | None = None
    norm1_bias: np.ndarray | None = None
    norm2_bias: np.ndarray | None = None


@dataclass
class Model:
    spec: ModelSpec
    embedding: np.ndarray  # (V, model_dim)
    layers: list[LayerWeights]
    final_norm: np.ndarray  # (model_dim,)
    lm_head: np.ndarray  # (V, model_dim)
    pos_embedding: np.ndarray | None = None  # (max_seq, model_dim), absolute
    final_norm_bias: np.ndarray | None = None


@dataclass(frozen=True)
class SynthRecipe:
    kind: str  # "random" | "concentrated"
    seed: int
    sink_strength: float = 40.0  # target scaled sink score
    needle_positions: tuple[int, ...] = ()
    needle_gain: float = 50.0  # target scaled probe->fact score
    length_coupling: float = 0.0  # >0: layer 0 senses 1/N and sharpens the sink

    def __post_init__(self):
        if self.kind not in ("random", "concentrated"):
            raise ConfigError(f"unknown recipe kind '{self.kind}'")
        if self.needle_gain < 0:
            raise ConfigError("needle_gain must be >= 0")


def fact_token(i: int) -> int:
    return 1 + i


def probe_token(n_facts: int, i: int) -> int:
    return 1 + n_facts + i


def filler_vocab_start(n_facts: int) -> int:
    return 1 + 2 * n_facts


# ---------------------------------------------------------------------------
# shape validation
# ---------------------------------------------------------------------------

_LAYER_SHAPES = {
    "w_q": lambda s: (s.n_heads * s.head_dim, s.model_dim),
    "w_k": lambda s: (s.n_kv_heads * s.head_dim, s.model_dim),
    "w_v": lambda s: (s.n_kv_heads * s.head_dim, s.model_dim),
    "w_o": lambda s: (s.model_dim, s.n_heads * s.head_dim),
    "mlp_in": lambda s: (s.mlp_hidden, s.model_dim),
    "mlp_out": lambda s: (s.model_dim, s.mlp_hidden),
    "norm1": lambda s: (s.model_dim,),
    "norm2": lambda s: (s.model_dim,),
}

_LAYER_BIAS_SHAPES = {
    "b_q": lambda s: (s.n_heads * s.head_dim,),
    "b_k": lambda s: (s.n_kv_heads * s.head_dim,),
    "b_v": lambda s: (s.n_kv_heads * s.head_dim,),
    "b_o": lambda s: (s.model_dim,),
    "b_mlp_in": lambda s: (s.mlp_hidden,),
    "b_mlp_out": lambda s: (s.model_dim,),
    "norm1_bias": lambda s: (s.model_dim,),
    "norm2_bias": lambda s: (s.model_dim,),
}


def validate_model(model: Model) -> None:
    s = model.spec
    if len(model.layers) != s.n_layers:
        raise ShapeError(f"expected {s.n_layers} layers, got {len(model.layers)}")
    if model.embedding.shape != (s.vocab_size, s.model_dim):
        raise ShapeError(f"embedding shape {model.embedding.shape}")
    if model.lm_head.shape != (s.vocab_size, s.model_dim):
        raise ShapeError(f"lm_head shape {model.lm_head.shape}")
    if model.final_norm.shape != (s.model_dim,):
        raise ShapeError(f"final_norm shape {model.final_norm.shape}")
    if model.pos_embedding is not None and model.pos_embedding.shape[1] != s.model_dim:
        raise ShapeError(f"pos_embedding shape {model.pos_embedding.shape}")
    for i, lw in enumerate(model.layers):
        for name, shape_fn in _LAYER_SHAPES.items():
            t = getattr(lw, name)
            if t.shape != shape_fn(s):
                raise ShapeError(
                    f"layers.{i}.{name}: shape {t.shape}, expected {shape_fn(s)}"
                )
        for name, shape_fn in _LAYER_BIAS_SHAPES.items():
            t = getattr(lw, name)
            if t is not None and t.shape != shape_fn(s):
                raise ShapeError(
                    f"layers.{i}.{name}: shape {t.shape}, expected {shape_fn(s)}"
                )


# ---------------------------------------------------------------------------
# synthetic models
# ---------------------------------------------------------------------------

_BASE_SCALE = 0.08
_WO_DAMP = 0.1
_MLP_DAMP = 0.05
_C_ONE = 1.0
_C_SINK = 4.0
_C_FACT = 4.0
_C_PROBE = 4.0
_C_PROBE_OTHER = 1.6  # probe tokens also light non-asked facts, weaker
_C_PAYLOAD = 2.0
_PAYLOAD_OUT_GAIN = 6.0
_MAX_PAIR_DRIFT = 0.45  # max radians of in-pair rotation across max_seq


def _u(rng: np.random.Generator, *shape) -> np.ndarray:
    return rng.uniform(-_BASE_SCALE, _BASE_SCALE, shape).astype(np.float32)


def _direction_coords(spec: ModelSpec, n_dirs: int) -> list[int]:
    """Head-space coordinates for structural score directions.

    With RoPE each direction owns one rotation pair (rotation never mixes
    pairs), taken from the slowest-frequency end so scores barely drift
    with distance. Without RoPE any distinct coordinates work.
    """
    d = spec.head_dim
    if not spec.rope_enabled:
        if n_dirs > d:
            raise ConfigError(f"head_dim {d} too small for {n_dirs} directions")
        return list(range(n_dirs))
    coords = []
    for p in range(d // 2 - 1, -1, -1):
        freq = spec.rope_theta ** (-(2.0 * p) / d)
        if freq * spec.max_seq <= _MAX_PAIR_DRIFT:
            coords.append(2 * p)
        else:
            break
    if len(coords) < n_dirs:
        raise ConfigError(
            f"only {len(coords)} slow rotation pairs available for {n_dirs} "
            f"score directions; raise rope_theta or head_dim"
        )
    return coords[:n_dirs]


def synth_model(spec: ModelSpec, recipe: SynthRecipe) -> Model:
    """Deterministic synthetic model from (spec, recipe)."""
    if spec.norm_kind != "rmsnorm":
        raise ConfigError("synthetic models use rmsnorm")
    rng = np.random.default_rng(recipe.seed)
    s = spec

    def layer() -> LayerWeights:
        return LayerWeights(
            w_q=_u(rng, s.n_heads * s.head_dim, s.model_dim),
            w_k=_u(rng, s.n_kv_heads * s.head_dim, s.model_dim),
            w_v=_u(rng, s.n_kv_heads * s.head_dim, s.model_dim),
            w_o=_u(rng, s.model_dim, s.n_heads * s.head_dim),
            mlp_in=_u(rng, s.mlp_hidden, s.model_dim),
            mlp_out=_u(rng, s.model_dim, s.mlp_hidden),
            norm1=np.ones(s.model_dim, dtype=np.float32),
            norm2=np.ones(s.model_dim, dtype=np.float32),
        )

    embedding = _u(rng, s.vocab_size, s.model_dim)
    layers = [layer() for _ in range(s.n_layers)]
    final_norm = np.ones(s.model_dim, dtype=np.float32)
    lm_head = _u(rng, s.vocab_size, s.model_dim)

    model = Model(
        spec=s,
        embedding=embedding,
        layers=layers,
        final_norm=final_norm,
        lm_head=lm_head,
    )
    if recipe.kind == "random":
        validate_model(model)
        return model

    _apply_concentration(model, recipe, rng)
    validate_model(model)
    return model


def _apply_concentration(
    model: Model, recipe: SynthRecipe, rng: np.random.Generator
) -> None:
    s = model.spec
    n_f = len(recipe.needle_positions)
    ch_one, ch_sink, ch_boost = 0, 1, 2
    ch_fact = 3
    ch_probe = 3 + n_f
    ch_payload = 3 + 2 * n_f
    if ch_payload + n_f >= s.model_dim:
        raise ConfigError(
            f"model_dim {s.model_dim} too small for {n_f} facts (needs "
            f">= {ch_payload + n_f + 1})"
        )
    if recipe.length_coupling > 0 and s.n_layers < 2:
        raise ConfigError("length coupling needs at least 2 layers")
    coords = _direction_coords(s, 1 + n_f)
    sink_coord, fact_coords = coords[0], coords[1:]

    emb = model.embedding
    emb[:, ch_one] = _C_ONE
    emb[:, ch_sink] = 0.0
    emb[:, ch_boost] = 0.0
    emb[SINK_TOKEN, ch_sink] = _C_SINK
    for f in range(n_f):
        t_fact = fact_token(f)
        t_probe = probe_token(n_f, f)
        emb[t_fact, ch_fact + f] = _C_FACT
        emb[t_fact, ch_payload + f] = _C_PAYLOAD
        emb[t_probe, ch_probe :ch_probe + n_f] = _C_PROBE_OTHER
        emb[t_probe, ch_probe + f] = _C_PROBE

    # layer-0 estimates of normalized channel magnitudes; deeper layers
    # only add damped noise so these hold to ~15%, absorbed by gap margins
    rt_dim = float(np.sqrt(s.model_dim))
    filler0 = filler_vocab_start(n_f)
    typ_norm = float(np.median(np.linalg.norm(emb[filler0:], axis=1)))
    h1 = _C_ONE * rt_dim / typ_norm
    rt_d = float(np.sqrt(s.head_dim))
    sink_emb_norm = float(np.linalg.norm(emb[SINK_TOKEN]))
    hs0 = _C_SINK * rt_dim / sink_emb_norm

    # the length sensor writes omega * hs0 into the sink's own boost
    # channel, inflating its norm; the sink key gain must be calibrated
    # against the post-sensor hidden state
    omega = 1.0 if recipe.length_coupling > 0 else 0.0
    boost_at_sink = omega * hs0
    hs = _C_SINK * rt_dim / float(np.hypot(sink_emb_norm, boost_at_sink))

    s_q = 1.0
    gamma = recipe.sink_strength * rt_d / (s_q * h1 * hs)
    # scaled sink score ~= sink_strength - length_coupling / n
    boost_normed_per_inv_n = omega * hs0 * rt_dim / typ_norm
    if recipe.length_coupling > 0:
        c_boost = (
            recipe.length_coupling
            * s_q
            * h1
            / (recipe.sink_strength * boost_normed_per_inv_n)
        )
    else:
        c_boost = 0.0

    d = s.head_dim
    start = 1 if recipe.length_coupling > 0 else 0
    for li in range(start, s.n_layers):
        lw = model.layers[li]
        lw.w_o *= _WO_DAMP
        lw.mlp_in *= _MLP_DAMP
        lw.mlp_out *= _MLP_DAMP
        for qh in range(s.n_heads):
            row = qh * d + sink_coord
            lw.w_q[row, ch_one] += np.float32(s_q)
            if c_boost > 0:
                lw.w_q[row, ch_boost] -= np.float32(c_boost)
        for kh in range(s.n_kv_heads):
            lw.w_k[kh * d + sink_coord, ch_sink] += np.float32(gamma)

        if n_f:
            hf = _C_FACT * rt_dim / float(np.linalg.norm(emb[fact_token(0)]))
            hp = _C_PROBE * rt_dim / float(np.linalg.norm(emb[probe_token(n_f, 0)]))
            delta = recipe.needle_gain * rt_d / (hp * hf)
            for f in range(n_f):
                for qh in range(s.n_heads):
                    lw.w_q[qh * d + fact_coords[f], ch_probe + f] += np.float32(1.0)
                for kh in range(s.n_kv_heads):
                    lw.w_k[kh * d + fact_coords[f], ch_fact + f] += np.float32(delta)

    # retrieval payload: last layer copies the attended token's payload
    # channels into the residual stream, where the tied lm_head reads them
    if n_f:
        last = model.layers[-1]
        for f in range(n_f):
            for kh in range(s.n_kv_heads):
                last.w_v[kh * d + f, ch_payload + f] += np.float32(1.0)
            for qh in range(s.n_heads):
                last.w_o[ch_payload + f, qh * d + f] += np.float32(
                    _PAYLOAD_OUT_GAIN / s.n_heads
                )

    # layer-0 length sensor: uniform attention reads the sink value with
    # weight exactly 1/N, writing a 1/N signal into the boost channel that
    # later layers subtract from the sink-query coefficient
    if recipe.length_coupling > 0:
        sensor = model.layers[0]
        sensor.w_q[:] = 0.0
        sensor.w_o *= _WO_DAMP
        sensor.mlp_in *= _MLP_DAMP
        sensor.mlp_out *= _MLP_DAMP
        slot = d - 1
        for kh in range(s.n_kv_heads):
            sensor.w_v[kh * d + slot, :] = 0.0
            sensor.w_v[kh * d + slot, ch_sink] = np.float32(1.0)
        sensor.w_o[ch_boost, :] = 0.0
        for qh in range(s.n_heads):
            sensor.w_o[ch_boost, qh * d + slot] = np.float32(omega / s.n_heads)

    model.lm_head = model.embedding.copy()


def make_filler_prompt(
    spec: ModelSpec, length: int, seed: int, n_facts: int = 0
) -> list[int]:
    """Sink token followed by deterministic filler ids (no special tokens)."""
    if length > spec.max_seq:
        raise SequenceOverflowError(f"prompt length {length} > max_seq {spec.max_seq}")
    lo = filler_vocab_start(n_facts)
    hi = spec.vocab_size - (1 if spec.eos_token >= 0 else 0)
    rng = np.random.default_rng(seed)
    body = rng.integers(lo, hi, size=length - 1).tolist()
    return [SINK_TOKEN] + [int(t) for t in body]


def plant_needle_prompt(
    spec: ModelSpec,
    facts: list[tuple[list[int], list[int]]],
    filler_len: int,
    question_index: int,
    seed: int = 0,
) -> tuple[list[int], list[int], list[int]]:
    """Build a retrieval prompt of exactly ``filler_len`` tokens.

    Facts (key token ids) are spread evenly through filler; the probe token
    of the questioned fact is appended as the final token. Returns
    (tokens, expected answer token ids, fact key positions).
    """
    n_f = len(facts)
    if filler_len > spec.max_seq:
        raise SequenceOverflowError(
            f"prompt length {filler_len} > max_seq {spec.max_seq}"
        )
    fact_len = sum(len(k) for k, _ in facts)
    n_question = 1 if n_f else 0
    if 1 + fact_len + n_question > filler_len:
        raise SequenceOverflowError("facts do not fit in the requested length")
    rng = np.random.default_rng(seed)
    lo = filler_vocab_start(n_f)
    hi = spec.vocab_size - (1 if spec.eos_token >= 0 else 0)

    tokens: list[int] = [SINK_TOKEN]
    positions: list[int] = []
    body_len = filler_len - 1 - n_question
    # even spacing of fact starts within the body
    starts = [
        1 + int(round((f + 1) * (body_len - fact_len) / (n_f + 1))) + sum(
            len(facts[g][0]) for g in range(f)
        )
        for f in range(n_f)
    ]
    cursor = 1
    for f, (key_ids, _value) in enumerate(facts):
        while cursor < starts[f]:
            tokens.append(int(rng.integers(lo, hi)))
            cursor += 1
        positions.append(cursor)
        tokens.extend(int(t) for t in key_ids)
        cursor += len(key_ids)
    while cursor < 1 + body_len:
        tokens.append(int(rng.integers(lo, hi)))
        cursor += 1
    expected: list[int] = []
    if n_f:
        tokens.append(probe_token(n_f, question_index))
        expected = [int(t) for t in facts[question_index][1]]
    if len(tokens) != filler_len:
        raise SequenceOverflowError("internal: prompt assembly length mismatch")
    if any(p2 <= p1 for p1, p2 in zip(positions, positions[1:])):
        raise SequenceOverflowError("internal: fact positions not increasing")
    return tokens, expected, positions


def needle_prompt_json(
    tokens: list[int], positions: list[int], answers: list[list[int]]
) -> str:
    return json.dumps(
        {
            "tokens": tokens,
            "needles": [
                {"pos": p, "answer": a} for p, a in zip(positions, answers)
            ],
        },
        sort_keys=True,
    )


# ---------------------------------------------------------------------------
# weight container
# ---------------------------------------------------------------------------


def _meta_dict(spec: ModelSpec) -> dict:
    return {
        "n_layers": spec.n_layers,
        "n_heads": spec.n_heads,
        "n_kv_heads": spec.n_kv_heads,
        "head_dim": spec.head_dim,
        "model_dim": spec.model_dim,
        "mlp_hidden": spec.mlp_hidden,
        "vocab_size": spec.vocab_size,
        "max_seq": spec.max_seq,
        "rope_enabled": spec.rope_enabled,
        "rope_theta": spec.rope_theta,
        "eos_token": spec.eos_token,
        "norm": spec.norm_kind,
        "norm_eps": spec.norm_eps,
    }


def _spec_from_meta(meta: dict) -> ModelSpec:
    try:
        return ModelSpec(
            n_layers=int(meta["n_layers"]),
            n_heads=int(meta["n_heads"]),
            n_kv_heads=int(meta["n_kv_heads"]),
            head_dim=int(meta["head_dim"]),
            vocab_size=int(meta["vocab_size"]),
            max_seq=int(meta["max_seq"]),
            rope_enabled=bool(meta["rope_enabled"]),
            rope_theta=float(meta["rope_theta"]),
            eos_token=int(meta["eos_token"]),
            model_dim=int(meta["model_dim"]),
            mlp_hidden=int(meta["mlp_hidden"]),
            norm_kind=str(meta["norm"]),
            norm_eps=float(meta["norm_eps"]),
        )
    except KeyError as exc:
        raise MalformedHeaderError(f"header meta missing field {exc}") from exc


def _named_tensors(model: Model):
    yield "embedding", model.embedding
    if model.pos_embedding is not None:
        yield "pos_embedding", model.pos_embedding
    for i, lw in enumerate(model.layers):
        for name in _LAYER_SHAPES:
            yield f"layers.{i}.{name}", getattr(lw, name)
        for name in _LAYER_BIAS_SHAPES:
            t = getattr(lw, name)
            if t is not None:
                yield f"layers.{i}.{name}", t
    yield "final_norm", model.final_norm
    if model.final_norm_bias is not None:
        yield "final_norm_bias", model.final_norm_bias
    yield "lm_head", model.lm_head


def save_weights(model: Model, path) -> None:
    """Write the container: magic, u32 version, u64 header length, JSON
    header with tensor descriptors, then raw little-endian f32 payloads."""
    validate_model(model)
    tensors = list(_named_tensors(model))
    desc = {}
    offset = 0
    for name, t in tensors:
        byte_len = int(t.size) * 4
        desc[name] = {
            "dtype": "f32",
            "shape": list(t.shape),
            "offset": offset,
            "byte_len": byte_len,
        }
        offset += byte_len
    header = json.dumps(
        {"meta": _meta_dict(model.spec), "tensors": desc}, sort_keys=True
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for _, t in tensors:
            fh.write(np.ascontiguousarray(t, dtype="<f4").tobytes())


def load_weights(path) -> Model:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MAGIC:
        raise MalformedHeaderError("malformed header: bad magic")
    if len(blob) < 20:
        raise MalformedHeaderError("malformed header: file too short")
    (version,) = struct.unpack_from("<I", blob, 8)
    if version != FORMAT_VERSION:
        raise MalformedHeaderError(f"malformed header: unsupported version {version}")
    (header_len,) = struct.unpack_from("<Q", blob, 12)
    header_end = 20 + header_len
    if header_end > len(blob):
        raise MalformedHeaderError("malformed header: header extends past file end")
    try:
        header = json.loads(blob[20:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedHeaderError(f"malformed header: {exc}") from exc
    if "meta" not in header or "tensors" not in header:
        raise MalformedHeaderError("malformed header: missing meta/tensors")
    spec = _spec_from_meta(header["meta"])
    payload = blob[header_end:]

    def read_tensor(name: str) -> np.ndarray:
        d = header["tensors"].get(name)
        if d is None:
            raise TensorShapeError(name, f"tensor '{name}' missing from header")
        if d.get("dtype") != "f32":
            raise TensorShapeError(name, f"tensor '{name}' has dtype {d.get('dtype')}")
        shape = tuple(int(v) for v in d["shape"])
        byte_len = int(d["byte_len"])
        if byte_len != int(np.prod(shape)) * 4:
            raise TensorShapeError(name, f"tensor '{name}' byte_len/shape mismatch")
        off = int(d["offset"])
        if off + byte_len > len(payload):
            raise TruncatedTensorError(name)
        arr = np.frombuffer(payload, dtype="<f4", count=byte_len // 4, offset=off)
        return np.ascontiguousarray(arr.reshape(shape))

    def maybe(name: str) -> np.ndarray | None:
        return read_tensor(name) if name in header["tensors"] else None

    layers = []
    for i in range(spec.n_layers):
        kwargs = {name: read_tensor(f"layers.{i}.{name}") for name in _LAYER_SHAPES}
        for name in _LAYER_BIAS_SHAPES:
            kwargs[name] = maybe(f"layers.{i}.{name}")
        layers.append(LayerWeights(**kwargs))
    model = Model(
        spec=spec,
        embedding=read_tensor("embedding"),
        layers=layers,
        final_norm=read_tensor("final_norm"),
        lm_head=read_tensor("lm_head"),
        pos_embedding=maybe("pos_embedding"),
        final_norm_bias=maybe("final_norm_bias"),
    )
    try:
        validate_model(model)
    except ShapeError as exc:
        raise TensorShapeError("model", str(exc)) from exc
    return model


def inspect_weight_header(path) -> dict:
    """Parse and sanity-check just the container header (convert-check)."""
    with open(path, "rb") as fh:
        head = fh.read(20)
        if head[:8] != MAGIC:
            raise MalformedHeaderError("malformed header: bad magic")
        (version,) = struct.unpack_from("<I", head, 8)
        if version != FORMAT_VERSION:
            raise MalformedHeaderError(
                f"malformed header: unsupported version {version}"
            )
        (header_len,) = struct.unpack_from("<Q", head, 12)
        raw = fh.read(header_len)
        if len(raw) != header_len:
            raise MalformedHeaderError("malformed header: header extends past file end")
        try:
            header = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise MalformedHeaderError(f"malformed header: {exc}") from exc
        fh.seek(0, 2)
        payload_len = fh.tell() - 20 - header_len
    spec = _spec_from_meta(header["meta"])
    for name, d in header["tensors"].items():
        if int(d["offset"]) + int(d["byte_len"]) > payload_len:
            raise TruncatedTensorError(name)
    return {
        "version": FORMAT_VERSION,
        "spec": _meta_dict(spec),
        "n_tensors": len(header["tensors"]),
        "payload_bytes": payload_len,
    }


def model_hash(model: Model) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(_meta_dict(model.spec), sort_keys=True).encode())
    for name, t in _named_tensors(model):
        h.update(name.encode())
        h.update(np.ascontiguousarray(t, dtype="<f4").tobytes())
    return h.hexdigest()
