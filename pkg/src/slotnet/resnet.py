"""ResNet-20 (CIFAR-10 geometry) under slot-packed ciphertext semantics.

One image channel lives in one ciphertext: pixel (r, c) sits in slot
r*32 + c of a 1024-slot sparse block.  Convolutions are packed
single-input/single-output: rotate once per filter tap, multiply by a
plaintext that folds the filter weight with the zero-padding border mask
and, for stride 2, the 0/1 output window, then accumulate.  Striding
therefore adds no rotations; downsampled layers simply keep a sparser
set of valid slots (stride 1 -> 2 -> 4 across the stages), and masked
taps also pin every non-valid lane to zero, so junk can never leak back
into valid positions.

The float path (:func:`infer_float`) is the exact plaintext reference;
inference reports carry an agreement flag against its argmax.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .approx import CompositeSign, MinimaxPoly, compose_sign, least_squares_poly
from .heslots import CipherVec, LevelUnderflowError, SimConfig, SlotEngine
from .polyeval import bsgs_eval, plan_for_poly

GRID = 32
BLOCK = GRID * GRID
DEFAULT_BOUND = 40.0
BN_EPS = 1e-5
CIFAR_MEANS = (0.4914, 0.4822, 0.4465)

EXP_PRESCALE = 64.0       # exp(x/4) = (exp(x/64))^16
EXP_SQUARINGS = 4
EXP_DEGREE = 12
INV_PRESCALE = 1e-4       # reciprocal evaluated on the (0, 2) window
INV_ITERATIONS = 27
N_CLASSES = 10


# ---------------------------------------------------------------------------
# graph


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str                 # conv | bn
    in_ch: int = 0
    out_ch: int = 0
    ksize: int = 0
    stride: int = 1


@dataclass(frozen=True)
class BlockSpec:
    name: str
    conv_a: LayerSpec
    bn_a: LayerSpec
    conv_b: LayerSpec
    bn_b: LayerSpec
    shortcut_conv: LayerSpec | None
    shortcut_bn: LayerSpec | None

    @property
    def stride(self) -> int:
        return self.conv_a.stride


@dataclass(frozen=True)
class NetworkGraph:
    stem_conv: LayerSpec
    stem_bn: LayerSpec
    blocks: tuple[BlockSpec, ...]

    def conv_layers(self):
        yield self.stem_conv
        for b in self.blocks:
            yield b.conv_a
            yield b.conv_b
            if b.shortcut_conv is not None:
                yield b.shortcut_conv

    def bn_layers(self):
        yield self.stem_bn
        for b in self.blocks:
            yield b.bn_a
            yield b.bn_b
            if b.shortcut_bn is not None:
                yield b.shortcut_bn


def resnet20() -> NetworkGraph:
    """Stem conv plus three stages of three residual blocks (16/32/64
    channels); the first block of stages 3 and 4 downsamples with a
    stride-2 main conv and a 1x1 stride-2 projection shortcut."""
    blocks = []
    widths = {2: 16, 3: 32, 4: 64}
    for stage in (2, 3, 4):
        for b in (1, 2, 3):
            w = widths[stage]
            cin = 16 if stage == 2 else (widths[stage - 1] if b == 1 else w)
            if b > 1:
                cin = w
            down = stage > 2 and b == 1
            stride = 2 if down else 1
            prefix = f"{stage}_{b}"
            sc = sbn = None
            if down:
                sc = LayerSpec(f"conv{stage}_1_s", "conv", cin, w, 1, 2)
                sbn = LayerSpec(f"bn{stage}_1_s", "bn", w, w)
            blocks.append(
                BlockSpec(
                    f"block{prefix}",
                    LayerSpec(f"conv{prefix}_1", "conv", cin, w, 3, stride),
                    LayerSpec(f"bn{prefix}_1", "bn", w, w),
                    LayerSpec(f"conv{prefix}_2", "conv", w, w, 3, 1),
                    LayerSpec(f"bn{prefix}_2", "bn", w, w),
                    sc,
                    sbn,
                )
            )
    return NetworkGraph(
        LayerSpec("conv1", "conv", 3, 16, 3, 1),
        LayerSpec("bn1", "bn", 16, 16),
        tuple(blocks),
    )


# ---------------------------------------------------------------------------
# weights


@dataclass
class WeightSet:
    """Filter tensors [out][in][k][k], folded batch-norm affines
    (per-channel scale/shift), and the 10x64 classifier."""

    conv: dict[str, np.ndarray]
    bn: dict[str, tuple[np.ndarray, np.ndarray]]
    fc_w: np.ndarray
    fc_b: np.ndarray

    def check_shapes(self, graph: NetworkGraph) -> None:
        for spec in graph.conv_layers():
            w = self.conv.get(spec.name)
            if w is None:
                raise ValueError(f"missing weights for {spec.name}")
            want = (spec.out_ch, spec.in_ch, spec.ksize, spec.ksize)
            if w.shape != want:
                raise ValueError(f"{spec.name}: shape {w.shape} != {want}")
        for spec in graph.bn_layers():
            if spec.name not in self.bn:
                raise ValueError(f"missing batch-norm parameters for {spec.name}")
        if self.fc_w.shape != (N_CLASSES, 64) or self.fc_b.shape != (N_CLASSES,):
            raise ValueError("classifier shapes must be (10, 64) and (10,)")


def fold_bn(gamma, beta, mean, var, eps: float = BN_EPS):
    """(gamma, beta, mean, var) -> slot-wise affine (scale, shift)."""
    gamma = np.asarray(gamma, dtype=float)
    var = np.asarray(var, dtype=float)
    if np.any(var <= 0):
        raise ValueError("batch-norm variance must be positive")
    scale = gamma / np.sqrt(var + eps)
    shift = np.asarray(beta, dtype=float) - scale * np.asarray(mean, dtype=float)
    return scale, shift


def random_weights(seed: int, bound: float = DEFAULT_BOUND,
                   calibration_images: int = 32) -> WeightSet:
    """He-initialized weights rescaled so float-path activations stay
    inside +-0.9*bound on a calibration batch.

    The per-layer factor is absorbed into the batch-norm affine (the
    classifier for the logits); residual joins with an identity branch
    are bisected so the post-add tensor respects the cap too.
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(77,)))
    graph = resnet20()
    conv, bn = {}, {}
    for spec in graph.conv_layers():
        fan = spec.in_ch * spec.ksize * spec.ksize
        conv[spec.name] = rng.normal(
            0.0, math.sqrt(2.0 / fan), (spec.out_ch, spec.in_ch, spec.ksize, spec.ksize)
        )
    for spec in graph.bn_layers():
        ch = spec.out_ch
        bn[spec.name] = fold_bn(
            rng.uniform(0.7, 1.3, ch), rng.normal(0.0, 0.2, ch),
            rng.normal(0.0, 0.2, ch), rng.uniform(0.5, 1.5, ch),
        )
    fc_w = rng.normal(0.0, math.sqrt(2.0 / 64), (N_CLASSES, 64))
    fc_b = rng.normal(0.0, 0.1, N_CLASSES)
    ws = WeightSet(conv, bn, fc_w, fc_b)
    imgs = rng.uniform(-0.5, 0.5, (calibration_images, 3, GRID, GRID))
    _calibrate(ws, graph, imgs, 0.75 * bound)
    return ws


def _scale_bn(ws: WeightSet, name: str, s: float) -> None:
    sc, sh = ws.bn[name]
    ws.bn[name] = (sc * s, sh * s)


def _calibrate(ws: WeightSet, graph: NetworkGraph, imgs: np.ndarray, cap: float) -> None:
    def cap_via_bn(name, pre):
        m = float(np.max(np.abs(pre)))
        if m == 0.0:
            return pre
        s = cap / m
        _scale_bn(ws, name, s)
        return pre * s

    x = np.stack([_float_conv(ws.conv[graph.stem_conv.name], im, 1) for im in imgs])
    x = _float_bn_batch(ws.bn[graph.stem_bn.name], x)
    x = np.maximum(cap_via_bn(graph.stem_bn.name, x), 0.0)
    for blk in graph.blocks:
        main = np.stack([_float_conv(ws.conv[blk.conv_a.name], im, blk.stride) for im in x])
        main = _float_bn_batch(ws.bn[blk.bn_a.name], main)
        main = np.maximum(cap_via_bn(blk.bn_a.name, main), 0.0)
        main = np.stack([_float_conv(ws.conv[blk.conv_b.name], im, 1) for im in main])
        main = _float_bn_batch(ws.bn[blk.bn_b.name], main)
        if blk.shortcut_conv is not None:
            sc = np.stack([_float_conv(ws.conv[blk.shortcut_conv.name], im, 2) for im in x])
            sc = _float_bn_batch(ws.bn[blk.shortcut_bn.name], sc)
            sc = cap_via_bn(blk.shortcut_bn.name, sc) * 0.5
            _scale_bn(ws, blk.shortcut_bn.name, 0.5)
        else:
            sc = x
        if float(np.max(np.abs(main + sc))) > cap:
            t_lo, t_hi = 0.0, 1.0
            for _ in range(40):
                t = (t_lo + t_hi) / 2
                if float(np.max(np.abs(t * main + sc))) > cap:
                    t_hi = t
                else:
                    t_lo = t
            _scale_bn(ws, blk.bn_b.name, t_lo)
            main = main * t_lo
        x = np.maximum(main + sc, 0.0)
    pooled = x.mean(axis=(2, 3))
    logits = pooled @ ws.fc_w.T + ws.fc_b
    m = float(np.max(np.abs(logits)))
    if m > 0.0:
        ws.fc_w = ws.fc_w * (cap / m)
        ws.fc_b = ws.fc_b * (cap / m)


# ---------------------------------------------------------------------------
# float reference oracle


def _float_conv(w: np.ndarray, x: np.ndarray, stride: int) -> np.ndarray:
    """Zero-padded direct convolution on a (C, H, W) tensor."""
    o, c, k, _ = w.shape
    _, hh, ww = x.shape
    pad = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    ho, wo = hh // stride, ww // stride
    out = np.zeros((o, ho, wo))
    for dy in range(k):
        for dx in range(k):
            patch = xp[:, dy : dy + hh : stride, dx : dx + ww : stride][:, :ho, :wo]
            out += np.einsum("oc,chw->ohw", w[:, :, dy, dx], patch)
    return out


def _float_bn_batch(affine, x):
    sc, sh = affine
    return x * sc[None, :, None, None] + sh[None, :, None, None]


def _float_bn(affine, x):
    sc, sh = affine
    return x * sc[:, None, None] + sh[:, None, None]


def infer_float(image, ws: WeightSet, graph: NetworkGraph | None = None) -> np.ndarray:
    """Exact plaintext forward pass; returns the 10 logits."""
    graph = graph or resnet20()
    x = _to_chw(image)
    x = _float_bn(ws.bn[graph.stem_bn.name], _float_conv(ws.conv[graph.stem_conv.name], x, 1))
    x = np.maximum(x, 0.0)
    for blk in graph.blocks:
        main = _float_bn(
            ws.bn[blk.bn_a.name], _float_conv(ws.conv[blk.conv_a.name], x, blk.stride)
        )
        main = np.maximum(main, 0.0)
        main = _float_bn(ws.bn[blk.bn_b.name], _float_conv(ws.conv[blk.conv_b.name], main, 1))
        if blk.shortcut_conv is not None:
            sc = _float_bn(
                ws.bn[blk.shortcut_bn.name],
                _float_conv(ws.conv[blk.shortcut_conv.name], x, 2),
            )
        else:
            sc = x
        x = np.maximum(main + sc, 0.0)
    pooled = x.mean(axis=(1, 2))
    return pooled @ ws.fc_w.T + ws.fc_b


def tempered_softmax(logits, temperature: float = 4.0) -> np.ndarray:
    z = np.asarray(logits, dtype=float) / temperature
    e = np.exp(z - z.max())
    return e / e.sum()


def _to_chw(image) -> np.ndarray:
    image = np.asarray(image, dtype=float)
    if image.shape == (GRID, GRID, 3):
        return np.moveaxis(image, -1, 0)
    if image.shape == (3, GRID, GRID):
        return image
    raise ValueError(f"image shape {image.shape} is not 32x32x3")


# ---------------------------------------------------------------------------
# packing and layout


def pack_image(engine: SlotEngine, image) -> list[CipherVec]:
    """One ciphertext per channel; slot r*32+c holds pixel (r, c)."""
    chw = _to_chw(image)
    if engine.config.sparse_block != BLOCK:
        raise ValueError(f"image packing needs a {BLOCK}-slot sparse block")
    return [engine.pack(chw[c].reshape(-1), tag=f"ch{c}") for c in range(chw.shape[0])]


def unpack(engine: SlotEngine, ct: CipherVec, layout_stride: int = 1) -> np.ndarray:
    """Valid-position matrix (side 32/layout_stride) of one channel."""
    side = GRID // layout_stride
    block = engine.unpack(ct).reshape(GRID, GRID)
    return block[::layout_stride, ::layout_stride][:side, :side]


def valid_mask(layout_stride: int) -> np.ndarray:
    m = np.zeros((GRID, GRID))
    m[::layout_stride, ::layout_stride] = 1.0
    return m.reshape(-1)


def _tap_mask(layout_stride: int, stride: int, dy: int, dx: int) -> np.ndarray:
    """1 exactly on valid output slots whose tap source lies inside the
    unpadded image; 0 elsewhere (this also zeroes every junk lane)."""
    s_in = layout_stride
    s_out = layout_stride * stride
    side_in = GRID // s_in
    m = np.zeros((GRID, GRID))
    for r_phys in range(0, GRID, s_out):
        for c_phys in range(0, GRID, s_out):
            r_log = r_phys // s_in
            c_log = c_phys // s_in
            if 0 <= r_log + dy < side_in and 0 <= c_log + dx < side_in:
                m[r_phys, c_phys] = 1.0
    return m.reshape(-1)


# ---------------------------------------------------------------------------
# cipher-path layers


def conv_siso(engine: SlotEngine, inputs: list[CipherVec], weights: np.ndarray,
              stride: int, layout_stride: int, threads: int = 1,
              label: str = "conv") -> list[CipherVec]:
    """Rotate/multiply/accumulate convolution.

    The k^2 tap rotations happen once per input channel and are shared by
    every output channel; each output channel accumulates its products at
    doubled scale and rescales once.
    """
    o_ch, i_ch, k, _ = weights.shape
    if len(inputs) != i_ch:
        raise ValueError(f"expected {i_ch} input ciphertexts, got {len(inputs)}")
    off = (k - 1) // 2
    taps = [(dy - off, dx - off) for dy in range(k) for dx in range(k)]
    masks = {t: _tap_mask(layout_stride, stride, *t) for t in taps}
    rotated = [
        {t: engine.rotate(ct, layout_stride * (t[0] * GRID + t[1])) for t in taps}
        for ct in inputs
    ]

    flat_cts = [rotated[i][t] for i in range(i_ch) for t in taps]

    def one_channel(eng: SlotEngine, o: int) -> CipherVec:
        plains = [
            weights[o, i, t[0] + off, t[1] + off] * masks[t]
            for i in range(i_ch)
            for t in taps
        ]
        return eng.mul_plain_sum(flat_cts, plains)

    return _per_channel(engine, o_ch, one_channel, threads, label)


def _per_channel(engine: SlotEngine, n: int, fn, threads: int, label: str):
    if threads <= 1:
        return [fn(engine, i) for i in range(n)]
    children = [engine.child(f"{label}/{i}") for i in range(n)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        out = list(pool.map(lambda pair: fn(pair[0], pair[1]), zip(children, range(n))))
    for ch in children:
        engine.merge_child(ch)
    return out


def batch_norm(engine: SlotEngine, x: CipherVec, scale: float, shift: float) -> CipherVec:
    """Folded affine: one plaintext multiply plus a free plaintext add."""
    return engine.add_plain(engine.mul_plain(x, float(scale)), float(shift))


@dataclass
class ReluEvaluator:
    """Composite-sign stages folded for in-place evaluation.

    Every stage's coefficients are pre-divided by its output band bound,
    so each boundary value sits in [-1, 1] and any boundary is
    refresh-safe; the final stage directly emits h = (1 + g)/2.  A call
    refreshes exactly twice: once at the first stage boundary short on
    levels (the middle refresh) and once after h (the end refresh), then
    relu(x) = x * h.
    """

    stages: list[MinimaxPoly]
    depths: list[int]
    entry_need: int

    @classmethod
    def from_composite(cls, comp: CompositeSign) -> "ReluEvaluator":
        n = len(comp.stages)
        folded: list[MinimaxPoly] = []
        for i, st in enumerate(comp.stages):
            q = st.normalized()
            if i + 1 < n:
                band = comp.stages[i + 1].hull[1]  # = 1 + (stage i error)
                q = q.scaled(1.0 / band)
            else:
                q = q.scaled(0.5)
                coeffs = q.coeffs.copy()
                coeffs[0] += 0.5
                q = MinimaxPoly(q.domain, q.degree, coeffs, q.achieved_error, "none")
            folded.append(q)
        depths = [plan_for_poly(q).depth for q in folded]
        return cls(folded, depths, 1 + depths[0])

    def __call__(self, engine: SlotEngine, x: CipherVec, bound: float) -> CipherVec:
        peak = float(np.max(np.abs(x.slots[: x.sparse_block])))
        if peak > bound:
            engine.warnings.append(f"relu-range: {x.tag} peak {peak:.4g} exceeds {bound:g}")
        if x.level < self.entry_need:
            raise LevelUnderflowError(
                f"relu on {x.tag}: level {x.level} below entry need {self.entry_need}",
                tag=x.tag,
                required=self.entry_need,
            )
        y = engine.mul_plain(x, 1.0 / bound)
        mid_done = False
        for st, need in zip(self.stages, self.depths):
            if y.level < need:
                if mid_done:
                    raise AssertionError("relu stage chain needs a third refresh")
                y = engine.bootstrap(y)
                mid_done = True
            y = bsgs_eval(engine, st, y)
        if not mid_done:  # oversized level budgets still refresh twice per call
            y = engine.bootstrap(y)
        h = engine.bootstrap(y)
        x_al, h_al = engine.align(x, h)
        return engine.mul(x_al, h_al)


def relu_layer(engine: SlotEngine, x: CipherVec, bound: float,
               evaluator: ReluEvaluator) -> CipherVec:
    """ReLU with two embedded refreshes; see :class:`ReluEvaluator`."""
    return evaluator(engine, x, bound)


def avg_pool(engine: SlotEngine, channels: list[CipherVec]) -> list[CipherVec]:
    """Mean of the 64 stride-4 valid positions, landing in slot 0, via
    log2 rotation accumulation and one 1/64 plaintext multiply."""
    out = []
    for ct in channels:
        acc = ct
        for step in (4, 8, 16):        # 8 valid columns, 4 slots apart
            acc = engine.add(acc, engine.rotate(acc, step))
        for step in (128, 256, 512):   # 8 valid rows, 4 rows apart
            acc = engine.add(acc, engine.rotate(acc, step))
        out.append(engine.mul_plain(acc, 1.0 / 64.0))
    return out


def fully_connected(engine: SlotEngine, channels: list[CipherVec],
                    fc_w: np.ndarray, fc_b: np.ndarray) -> CipherVec:
    """Ten plain-weighted sums over the 64 kept-separate ciphertexts;
    logit j lands in slot j (weight and slot-0 selector fold into one
    plaintext, so each logit costs one rotation at most)."""
    if len(channels) != fc_w.shape[1]:
        raise ValueError(f"expected {fc_w.shape[1]} pooled channels")
    e0 = np.zeros(BLOCK)
    e0[0] = 1.0
    logits = None
    for j in range(fc_w.shape[0]):
        acc = engine.mul_plain_sum(channels, [fc_w[j, ch] * e0 for ch in range(len(channels))])
        acc = engine.rotate(acc, -j)
        logits = acc if logits is None else engine.add(logits, acc)
    bias = np.zeros(BLOCK)
    bias[: len(fc_b)] = fc_b
    return engine.add_plain(logits, bias)


def _default_ensure(engine: SlotEngine, ledger: list | None = None, site: str = ""):
    """Greedy refresh guard: returns ct with at least ``need`` levels plus
    one spare, wrap-scaling by the value bound when it exceeds 1."""

    def ensure(ct: CipherVec, need: int, value_bound: float) -> CipherVec:
        if ct.level >= need + 1:
            return ct
        if value_bound > 1.0:
            ct = engine.mul_plain(ct, 1.0 / value_bound)
        ct = engine.bootstrap(ct)
        if value_bound > 1.0:
            ct = engine.mul_plain(ct, value_bound)
        if ledger is not None:
            ledger.append(site or "refresh")
        return ct

    return ensure


@dataclass
class SoftmaxEvaluator:
    """Tempered softmax: exp(x/4) per class via a degree-12 least-squares
    exponential at x/64 squared four times, masked full-block rotation
    sum, and the iterative reciprocal on the 1e-4-scaled sum."""

    exp_poly: MinimaxPoly

    @classmethod
    def build(cls) -> "SoftmaxEvaluator":
        return cls(least_squares_poly(np.exp, (-1.0, 1.0), EXP_DEGREE))

    def __call__(self, engine: SlotEngine, logits: CipherVec, bound: float,
                 ensure) -> CipherVec:
        peak = float(np.max(np.abs(logits.slots[:N_CLASSES])))
        if peak > bound:
            engine.warnings.append(f"softmax-range: peak logit {peak:.4g} exceeds {bound:g}")
        depth = plan_for_poly(self.exp_poly).depth
        x = ensure(logits, 1 + depth, bound)
        x = engine.mul_plain(x, 1.0 / EXP_PRESCALE)
        y = bsgs_eval(engine, self.exp_poly, x)
        vmax = math.exp(bound / EXP_PRESCALE)
        for _ in range(EXP_SQUARINGS):
            y = ensure(y, 1, vmax)
            y = engine.mul(y, y)
            vmax = vmax * vmax
        mask = np.zeros(BLOCK)
        mask[:N_CLASSES] = 1.0
        y = ensure(y, 1, vmax)
        e_masked = engine.mask(y, mask)
        s = e_masked
        step = 1
        while step < BLOCK:
            s = engine.add(s, engine.rotate(s, step))
            step *= 2
        s_bound = N_CLASSES * vmax
        s = ensure(s, 1, s_bound)
        a = engine.mul_plain(s, INV_PRESCALE)
        if s_bound * INV_PRESCALE >= 2.0:
            a_peak = float(a.slots[0])
            if not 0.0 < a_peak < 2.0:
                engine.warnings.append(
                    f"inverse-domain: scaled exponential sum {a_peak:.4g} outside (0, 2)"
                )
        inv_bound = 1.0 / (N_CLASSES * math.exp(-bound / 4.0) * INV_PRESCALE)
        inv = self._reciprocal(engine, a, ensure, inv_bound)
        inv = ensure(inv, 1, inv_bound)
        inv = engine.mul_plain(inv, INV_PRESCALE)
        e_al = ensure(e_masked, 1, vmax)
        e_al, inv_al = engine.align(e_al, inv)
        return engine.mul(e_al, inv_al)

    def _reciprocal(self, engine: SlotEngine, a: CipherVec, ensure,
                    inv_bound: float) -> CipherVec:
        r = engine.add_plain(engine.neg(a), 1.0)   # 1 - a
        out = engine.add_plain(r, 1.0)             # 1 + r
        for _ in range(INV_ITERATIONS - 1):
            r = ensure(r, 1, 1.0)
            out = ensure(out, 1, inv_bound)
            r = engine.mul(r, r)
            r_al, out_al = engine.align(r, out)
            out = engine.mul(out_al, engine.add_plain(r_al, 1.0))
            r = engine.mod_switch(r, min(r.level, out.level))
        return out


def softmax(engine: SlotEngine, logits: CipherVec, bound: float,
            evaluator: SoftmaxEvaluator, ensure=None) -> CipherVec:
    ensure = ensure or _default_ensure(engine)
    return evaluator(engine, logits, bound, ensure)


# ---------------------------------------------------------------------------
# full inference


@dataclass
class InferenceReport:
    logits: list[float]
    softmax: list[float]
    label: int
    float_logits: list[float]
    float_label: int
    agreement: bool
    counters: dict
    layer_max: dict[str, float]
    warnings: list[str]
    bootstrap_sites: dict[str, int]
    fidelity: str

    def to_record(self) -> dict:
        return {
            "label": self.label,
            "float_label": self.float_label,
            "agreement": self.agreement,
            "logits": self.logits,
            "float_logits": self.float_logits,
            "softmax": self.softmax,
            "counters": self.counters,
            "layer_max": self.layer_max,
            "warnings": self.warnings,
            "bootstrap_sites": self.bootstrap_sites,
            "fidelity": self.fidelity,
        }


class Runner:
    """Holds the approximation machinery and executes the cipher path."""

    def __init__(self, weights: WeightSet, config: SimConfig | None = None,
                 bound: float = DEFAULT_BOUND, sign: CompositeSign | None = None,
                 threads: int = 1, exact_nonlinear: bool = False,
                 graph: NetworkGraph | None = None):
        self.graph = graph or resnet20()
        weights.check_shapes(self.graph)
        self.weights = weights
        self.config = config or SimConfig()
        self.bound = bound
        self.threads = threads
        self.exact_nonlinear = exact_nonlinear
        if not exact_nonlinear:
            self.relu_eval = ReluEvaluator.from_composite(sign or compose_sign(13))
            self.softmax_eval = SoftmaxEvaluator.build()
        else:
            self.relu_eval = None
            self.softmax_eval = None

    # -- helpers ---------------------------------------------------------

    def _relu(self, engine: SlotEngine, cts: list[CipherVec], sites: list,
              site: str) -> list[CipherVec]:
        if self.exact_nonlinear:
            from dataclasses import replace

            return [replace(ct, slots=np.maximum(ct.slots, 0.0)) for ct in cts]
        ensure = _default_ensure(engine, sites, f"{site}/refresh")
        cts = [ensure(ct, self.relu_eval.entry_need, self.bound) for ct in cts]
        out = _per_channel(
            engine, len(cts),
            lambda eng, i: self.relu_eval(eng, cts[i], self.bound),
            self.threads, site,
        )
        sites.extend([f"{site}/embedded"] * (2 * len(cts)))
        return out

    def _conv_bn(self, engine: SlotEngine, cts, conv_spec, bn_spec, stride_in,
                 sites) -> list[CipherVec]:
        ensure = _default_ensure(engine, sites, f"{conv_spec.name}/refresh")
        cts = [ensure(ct, 1, self.bound) for ct in cts]
        out = conv_siso(engine, cts, self.weights.conv[conv_spec.name],
                        conv_spec.stride, stride_in, self.threads, conv_spec.name)
        scale, shift = self.weights.bn[bn_spec.name]
        ensured = []
        for ch, ct in enumerate(out):
            ct = ensure(ct, 1, self.bound * 64)
            ensured.append(batch_norm(engine, ct, scale[ch], shift[ch]))
        return ensured

    # -- inference -------------------------------------------------------

    def infer(self, image, seed: int = 0, trace=None) -> InferenceReport:
        cfg = self.config
        if self.exact_nonlinear:
            cfg = SimConfig(
                n_slots=cfg.n_slots, sparse_block=cfg.sparse_block,
                scale_exp=cfg.scale_exp, level_budget=10 ** 6,
                boot_levels=cfg.boot_levels, fidelity="exact",
                quantize_bits=cfg.quantize_bits,
                bootstrap_noise_bits=cfg.bootstrap_noise_bits,
                debug_validate=cfg.debug_validate,
            )
        engine = SlotEngine(cfg, seed=seed, trace=trace)
        sites: list[str] = []
        layer_max: dict[str, float] = {}

        def track(name: str, cts: list[CipherVec], stride: int) -> None:
            vm = valid_mask(stride).astype(bool)
            m = max(float(np.max(np.abs(ct.slots[:BLOCK][vm]))) for ct in cts)
            layer_max[name] = m

        x = pack_image(engine, image)
        graph = self.graph
        stride = 1
        x = self._conv_bn(engine, x, graph.stem_conv, graph.stem_bn, stride, sites)
        track("bn1", x, stride)
        x = self._relu(engine, x, sites, "relu1")
        track("relu1", x, stride)
        for blk in graph.blocks:
            stride_in = stride
            main = self._conv_bn(engine, x, blk.conv_a, blk.bn_a, stride_in, sites)
            stride = stride_in * blk.stride
            track(blk.bn_a.name, main, stride)
            main = self._relu(engine, main, sites, f"{blk.name}/relu_a")
            main = self._conv_bn(engine, main, blk.conv_b, blk.bn_b, stride, sites)
            track(blk.bn_b.name, main, stride)
            if blk.shortcut_conv is not None:
                sc = self._conv_bn(engine, x, blk.shortcut_conv, blk.shortcut_bn,
                                   stride_in, sites)
            else:
                sc = x
            joined = []
            ensure = _default_ensure(engine, sites, f"{blk.name}/join")
            for m_ct, s_ct in zip(main, sc):
                # residual join: refresh the shallower branch when the sum
                # would be unusable, then drop the other down to match
                if min(m_ct.level, s_ct.level) < 2:
                    if m_ct.level <= s_ct.level:
                        m_ct = ensure(m_ct, 2, self.bound)
                    else:
                        s_ct = ensure(s_ct, 2, self.bound)
                a, b = engine.align(m_ct, s_ct)
                joined.append(engine.add(a, b))
            track(blk.name, joined, stride)
            x = self._relu(engine, joined, sites, f"{blk.name}/relu_out")
            track(f"{blk.name}/out", x, stride)
        pooled = avg_pool(engine, x)
        layer_max["avgpool"] = max(float(abs(ct.slots[0])) for ct in pooled)
        logits_ct = fully_connected(engine, pooled, self.weights.fc_w, self.weights.fc_b)
        cipher_logits = logits_ct.slots[:N_CLASSES].copy()
        layer_max["fc"] = float(np.max(np.abs(cipher_logits)))
        if self.exact_nonlinear:
            probs = tempered_softmax(cipher_logits)
        else:
            ensure = _default_ensure(engine, sites, "softmax/refresh")
            probs_ct = self.softmax_eval(engine, logits_ct, self.bound, ensure)
            probs = probs_ct.slots[:N_CLASSES].copy()
        float_logits = infer_float(image, self.weights, graph)
        label = int(np.argmax(cipher_logits))
        flabel = int(np.argmax(float_logits))
        site_counts: dict[str, int] = {}
        for s in sites:
            site_counts[s] = site_counts.get(s, 0) + 1
        return InferenceReport(
            logits=[float(v) for v in cipher_logits],
            softmax=[float(v) for v in np.clip(probs, 0.0, 1.0)],
            label=label,
            float_logits=[float(v) for v in float_logits],
            float_label=flabel,
            agreement=label == flabel,
            counters=engine.counter.snapshot(),
            layer_max={k: float(v) for k, v in layer_max.items()},
            warnings=list(engine.warnings),
            bootstrap_sites=site_counts,
            fidelity=cfg.fidelity,
        )


def infer(image, weights: WeightSet, config: SimConfig | None = None,
          seed: int = 0, bound: float = DEFAULT_BOUND,
          sign: CompositeSign | None = None, threads: int = 1,
          exact_nonlinear: bool = False, trace=None) -> InferenceReport:
    runner = Runner(weights, config, bound, sign, threads, exact_nonlinear)
    return runner.infer(image, seed=seed, trace=trace)


# ---------------------------------------------------------------------------
# weight and image files


WEIGHTS_FORMAT = "slotnet-weights-v1"


def save_weights(ws: WeightSet, directory) -> Path:
    """Manifest JSON plus little-endian float32 blobs, row-major."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    layers = {}

    def blob(name, arr, kind):
        data = np.ascontiguousarray(arr, dtype="<f4")
        fname = f"{name}.bin"
        (directory / fname).write_bytes(data.tobytes())
        layers[name] = {"file": fname, "shape": list(arr.shape), "kind": kind}

    for name, w in sorted(ws.conv.items()):
        blob(name, w, "conv")
    for name, (sc, sh) in sorted(ws.bn.items()):
        blob(name, np.stack([sc, sh]), "bn_affine")
    blob("fc_w", ws.fc_w, "fc_w")
    blob("fc_b", ws.fc_b, "fc_b")
    manifest = directory / "manifest.json"
    manifest.write_text(json.dumps({"format": WEIGHTS_FORMAT, "layers": layers},
                                   indent=1, sort_keys=True))
    return manifest


def load_weights(manifest_path) -> WeightSet:
    """Accepts ``bn_affine`` blobs [2][C] (scale, shift) or raw ``bn``
    blobs [4][C] (gamma, beta, mean, var), folded at load."""
    manifest_path = Path(manifest_path)
    meta = json.loads(manifest_path.read_text())
    if meta.get("format") != WEIGHTS_FORMAT:
        raise ValueError(f"unknown weights format {meta.get('format')!r}")
    base = manifest_path.parent
    conv, bn = {}, {}
    fc_w = fc_b = None
    for name, entry in meta["layers"].items():
        raw = (base / entry["file"]).read_bytes()
        shape = tuple(entry["shape"])
        arr = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)
        kind = entry["kind"]
        if kind == "conv":
            conv[name] = arr
        elif kind == "bn_affine":
            bn[name] = (arr[0], arr[1])
        elif kind == "bn":
            bn[name] = fold_bn(arr[0], arr[1], arr[2], arr[3])
        elif kind == "fc_w":
            fc_w = arr
        elif kind == "fc_b":
            fc_b = arr
        else:
            raise ValueError(f"unknown layer kind {kind!r} for {name}")
    if fc_w is None or fc_b is None:
        raise ValueError("manifest lacks the classifier blobs")
    return WeightSet(conv, bn, fc_w, fc_b)


def load_cifar10(path, mean_subtract: bool = True):
    """Standard binary records: 1 label byte + 3072 channel-major pixels."""
    raw = Path(path).read_bytes()
    rec = 1 + 3 * BLOCK
    if len(raw) % rec:
        raise ValueError(f"file size {len(raw)} is not a multiple of {rec}")
    out = []
    for i in range(len(raw) // rec):
        chunk = raw[i * rec : (i + 1) * rec]
        label = chunk[0]
        img = np.frombuffer(chunk, dtype=np.uint8, offset=1).reshape(3, GRID, GRID)
        img = img.astype(np.float64) / 255.0
        if mean_subtract:
            img = img - np.asarray(CIFAR_MEANS)[:, None, None]
        out.append((int(label), img))
    return out


def load_text_image(path) -> np.ndarray:
    """3072 whitespace-separated floats, channel-major row-major."""
    vals = np.array(Path(path).read_text().split(), dtype=np.float64)
    if vals.size != 3 * BLOCK:
        raise ValueError(f"expected {3 * BLOCK} values, got {vals.size}")
    return vals.reshape(3, GRID, GRID)


def save_text_image(image, path) -> None:
    chw = _to_chw(image)
    Path(path).write_text(" ".join(f"{v:.17g}" for v in chw.reshape(-1)))
