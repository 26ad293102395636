"""Slot-vector ciphertext simulator.

Models the observable semantics of leveled approximate-arithmetic
ciphertexts: component-wise algebra on a replicated sparse block, cyclic
rotations, scale bookkeeping with deferred rescaling, a hard level
budget, bootstrapping as a level refresh, and exact operation counters.
No ring arithmetic or key material is modeled; slot values in ``exact``
fidelity are ordinary float64 arithmetic, so a network run here must
agree bit-for-bit with the same vector computation done without the
simulator.  ``quantized`` fidelity adds rescale rounding and a uniform
bootstrap-noise model for precision-budget studies.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "SimConfig",
    "EvalCounter",
    "CipherVec",
    "SlotEngine",
    "SimulationError",
    "LevelUnderflowError",
    "StructureError",
]


class SimulationError(RuntimeError):
    pass


class LevelUnderflowError(SimulationError):
    """An operation would push a ciphertext below level 0."""

    def __init__(self, message, tag=None, required=None):
        super().__init__(message)
        self.tag = tag
        self.required = required


class StructureError(SimulationError):
    """Operands disagree on level, scale, or slot geometry."""


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class SimConfig:
    n_slots: int = 1 << 15
    sparse_block: int = 1 << 10
    scale_exp: int = 50
    level_budget: int = 11          # evaluation levels between refreshes
    boot_levels: int = 18           # levels the refresh procedure itself uses
    fidelity: str = "exact"         # "exact" | "quantized"
    quantize_bits: int = 30
    bootstrap_noise_bits: int = 19
    debug_validate: bool = False

    def __post_init__(self):
        if not _is_pow2(self.n_slots) or not _is_pow2(self.sparse_block):
            raise ValueError("n_slots and sparse_block must be powers of two")
        if self.n_slots % self.sparse_block:
            raise ValueError("sparse_block must divide n_slots")
        if self.level_budget < 1:
            raise ValueError("need at least one evaluation level")
        if self.fidelity not in ("exact", "quantized"):
            raise ValueError(f"unknown fidelity {self.fidelity!r}")
        if self.quantize_bits >= self.scale_exp:
            raise ValueError("quantize_bits must be below scale_exp")


@dataclass
class EvalCounter:
    mults_cipher: int = 0
    mults_plain: int = 0
    rotations: int = 0
    conjugations: int = 0
    rescalings: int = 0
    relinearizations_deferred: int = 0
    bootstraps: int = 0

    FIELDS = (
        "mults_cipher", "mults_plain", "rotations", "conjugations",
        "rescalings", "relinearizations_deferred", "bootstraps",
    )

    def merge(self, other: "EvalCounter") -> None:
        for f in self.FIELDS:
            setattr(self, f, getattr(self, f) + getattr(other, f))

    def snapshot(self) -> dict:
        return {f: getattr(self, f) for f in self.FIELDS}


@dataclass
class CipherVec:
    """Simulated ciphertext: replicated slot vector plus budget metadata.

    ``pending`` marks a product whose rescale is deferred (scale doubled);
    values are immutable once constructed, ops return fresh vectors.
    """

    slots: np.ndarray
    scale_exp: int
    level: int
    sparse_block: int
    tag: str = ""
    pending: bool = False

    @property
    def n_slots(self) -> int:
        return len(self.slots)

    def block(self) -> np.ndarray:
        return self.slots[: self.sparse_block].copy()


_tag_counter = itertools.count()


class SlotEngine:
    """Operation context owning a config, counters, warnings, and trace.

    One engine per thread; channel-parallel callers create children via
    :meth:`child` (deterministically seeded) and fold them back with
    :meth:`merge_child` in channel order.
    """

    def __init__(self, config: SimConfig | None = None, seed: int = 0, trace=None):
        self.config = config or SimConfig()
        self.counter = EvalCounter()
        self.warnings: list[str] = []
        self.trace = trace  # callable(str) or None
        self.seed = seed
        self._rng = np.random.default_rng(np.random.SeedSequence(seed))

    # -- lifecycle ---------------------------------------------------------

    def child(self, label: int | str) -> "SlotEngine":
        import zlib

        key = label if isinstance(label, int) else zlib.crc32(str(label).encode())
        sub = SlotEngine(self.config, seed=self.seed, trace=self.trace)
        sub._rng = np.random.default_rng(
            np.random.SeedSequence(entropy=self.seed, spawn_key=(key,))
        )
        return sub

    def merge_child(self, child: "SlotEngine") -> None:
        self.counter.merge(child.counter)
        self.warnings.extend(child.warnings)

    # -- construction ------------------------------------------------------

    def pack(self, block, tag: str = "", level: int | None = None) -> CipherVec:
        """Replicate one sparse block across all slots at full level."""
        cfg = self.config
        block = np.asarray(block, dtype=np.float64)
        if block.size == cfg.n_slots:
            slots = block.copy()
        else:
            if block.size != cfg.sparse_block:
                raise StructureError(
                    f"block of {block.size} slots does not match sparse block {cfg.sparse_block}"
                )
            slots = np.tile(block, cfg.n_slots // cfg.sparse_block)
        ct = CipherVec(
            slots, cfg.scale_exp,
            cfg.level_budget if level is None else level,
            cfg.sparse_block, tag or f"ct{next(_tag_counter)}",
        )
        self._validate(ct)
        return ct

    def unpack(self, ct: CipherVec) -> np.ndarray:
        return ct.block()

    # -- internals ---------------------------------------------------------

    def _log(self, op: str, before: CipherVec, after: CipherVec) -> None:
        if self.trace is not None:
            self.trace(
                f"{op} {after.tag} L{before.level}->{after.level} "
                f"s{before.scale_exp}->{after.scale_exp}"
            )

    def _validate(self, ct: CipherVec) -> None:
        if ct.level < 0:
            raise LevelUnderflowError(f"negative level on {ct.tag}", tag=ct.tag)
        if self.config.debug_validate:
            base = ct.slots[: ct.sparse_block]
            if not np.array_equal(ct.slots, np.tile(base, ct.n_slots // ct.sparse_block)):
                raise StructureError(f"sparse replication broken on {ct.tag}")

    def _tile(self, m) -> np.ndarray:
        cfg = self.config
        m = np.asarray(m, dtype=np.float64)
        if m.ndim == 0:
            return m
        if m.size == cfg.sparse_block:
            return np.tile(m, cfg.n_slots // cfg.sparse_block)
        if m.size == cfg.n_slots:
            return m
        raise StructureError(f"plaintext of {m.size} slots matches neither block nor full width")

    def _quantize(self, slots: np.ndarray) -> np.ndarray:
        q = 2.0 ** self.config.quantize_bits
        return np.round(slots * q) / q

    def rescale(self, a: CipherVec) -> CipherVec:
        """Apply a deferred rescale: one level down, scale back to nominal."""
        if not a.pending:
            return a
        if a.level < 1:
            raise LevelUnderflowError(
                f"rescale of {a.tag} at level 0", tag=a.tag, required=1
            )
        slots = a.slots
        if self.config.fidelity == "quantized":
            slots = self._quantize(slots)
        out = CipherVec(slots, self.config.scale_exp, a.level - 1, a.sparse_block, a.tag, False)
        self.counter.rescalings += 1
        self._log("rescale", a, out)
        self._validate(out)
        return out

    # -- arithmetic --------------------------------------------------------

    def add(self, a: CipherVec, b: CipherVec) -> CipherVec:
        if a.pending != b.pending:
            a = self.rescale(a)
            b = self.rescale(b)
        if a.scale_exp != b.scale_exp:
            raise StructureError(
                f"scale mismatch {a.scale_exp} vs {b.scale_exp} ({a.tag}, {b.tag})"
            )
        if a.level != b.level:
            raise StructureError(f"level mismatch {a.level} vs {b.level} ({a.tag}, {b.tag})")
        out = CipherVec(a.slots + b.slots, a.scale_exp, a.level, a.sparse_block, a.tag, a.pending)
        self._log("add", a, out)
        self._validate(out)
        return out

    def sub(self, a: CipherVec, b: CipherVec) -> CipherVec:
        return self.add(a, self.neg(b))

    def neg(self, a: CipherVec) -> CipherVec:
        return replace(a, slots=-a.slots)

    def add_plain(self, a: CipherVec, m) -> CipherVec:
        """Plaintext addition; free (the plaintext is encoded at a's scale)."""
        out = replace(a, slots=a.slots + self._tile(m))
        self._log("add_plain", a, out)
        self._validate(out)
        return out

    def mul(self, a: CipherVec, b: CipherVec, rescale: bool = True) -> CipherVec:
        a = self.rescale(a)
        b = self.rescale(b)
        if a.level != b.level:
            raise StructureError(f"level mismatch {a.level} vs {b.level} ({a.tag}, {b.tag})")
        if a.level < 1:
            raise LevelUnderflowError(
                f"multiplication at level 0 ({a.tag} * {b.tag})", tag=a.tag, required=1
            )
        out = CipherVec(
            a.slots * b.slots, a.scale_exp + b.scale_exp, a.level, a.sparse_block, a.tag, True
        )
        self.counter.mults_cipher += 1
        self.counter.relinearizations_deferred += 1
        self._log("mul", a, out)
        if rescale:
            out = self.rescale(out)
        else:
            self._validate(out)
        return out

    def mul_plain(self, a: CipherVec, m, rescale: bool = True) -> CipherVec:
        a = self.rescale(a)
        if a.level < 1:
            raise LevelUnderflowError(
                f"plaintext multiplication at level 0 ({a.tag})", tag=a.tag, required=1
            )
        out = CipherVec(
            a.slots * self._tile(m), a.scale_exp + self.config.scale_exp,
            a.level, a.sparse_block, a.tag, True,
        )
        self.counter.mults_plain += 1
        self._log("mul_plain", a, out)
        if rescale:
            out = self.rescale(out)
        else:
            self._validate(out)
        return out

    def mul_plain_sum(self, cts, plains, rescale: bool = True) -> CipherVec:
        """Accumulated plaintext products sum_i cts[i] * plains[i] with one
        shared rescale; counter-equivalent to chaining deferred mul_plain
        into adds.

        Exploits the sparse-replication invariant: plaintexts must be
        scalars or block vectors, operands must agree on level and scale,
        and the sum is computed at block resolution then re-replicated
        (bit-identical to the full-width computation for replicated
        operands, which debug validation checks).
        """
        cts = list(cts)
        plains = list(plains)
        if not cts or len(cts) != len(plains):
            raise StructureError("accumulation needs matching operand lists")
        base = cts[0]
        block = base.sparse_block
        for ct in cts:
            if ct.pending or ct.level != base.level or ct.scale_exp != base.scale_exp:
                raise StructureError("accumulation operands must align on level and scale")
            self._validate(ct)
        if base.level < 1:
            raise LevelUnderflowError(
                f"plaintext accumulation at level 0 ({base.tag})", tag=base.tag, required=1
            )
        P = np.stack([
            np.full(block, float(p)) if np.ndim(p) == 0 else np.asarray(p, dtype=np.float64)
            for p in plains
        ])
        if P.shape[1] != block:
            raise StructureError("plaintext rows must match the sparse block")
        R = np.stack([ct.slots[:block] for ct in cts])
        acc = np.einsum("tb,tb->b", P, R)
        slots = np.tile(acc, base.n_slots // block)
        out = CipherVec(
            slots, base.scale_exp + self.config.scale_exp,
            base.level, block, base.tag, True,
        )
        self.counter.mults_plain += len(cts)
        self._log(f"mul_plain_sum{len(cts)}", base, out)
        if rescale:
            out = self.rescale(out)
        else:
            self._validate(out)
        return out

    def mask(self, a: CipherVec, m) -> CipherVec:
        """Select slots with a 0/1 window kernel (plaintext multiplication)."""
        m = np.asarray(m, dtype=np.float64)
        if m.size != a.sparse_block:
            raise StructureError(f"mask of {m.size} slots != sparse block {a.sparse_block}")
        if not np.all((m == 0.0) | (m == 1.0)):
            raise StructureError("mask entries must be 0 or 1")
        return self.mul_plain(a, m)

    # -- data movement -----------------------------------------------------

    def rotate(self, a: CipherVec, step: int) -> CipherVec:
        """Cyclic left shift within the sparse block: out[i] = in[i + step]."""
        step = int(step) % a.sparse_block
        if step == 0:
            return a
        out = replace(a, slots=np.roll(a.slots, -step))
        self.counter.rotations += 1
        self._log(f"rotate{step}", a, out)
        self._validate(out)
        return out

    def conjugate(self, a: CipherVec) -> CipherVec:
        """Complex conjugation; identity on the real slot data modeled here."""
        out = replace(a, slots=a.slots.copy())
        self.counter.conjugations += 1
        self._log("conjugate", a, out)
        return out

    def mod_switch(self, a: CipherVec, level: int) -> CipherVec:
        """Drop to a lower level without arithmetic (free, no counter)."""
        if level > a.level:
            raise StructureError(f"cannot raise {a.tag} from level {a.level} to {level}")
        if level < 0:
            raise LevelUnderflowError(f"mod_switch of {a.tag} below 0", tag=a.tag)
        if level == a.level:
            return a
        out = replace(a, level=level)
        self._log("mod_switch", a, out)
        return out

    def align(self, a: CipherVec, b: CipherVec) -> tuple[CipherVec, CipherVec]:
        """Bring two operands to the lower of their levels."""
        lv = min(a.level, b.level)
        return self.mod_switch(a, lv), self.mod_switch(b, lv)

    # -- refresh -----------------------------------------------------------

    def bootstrap(self, a: CipherVec) -> CipherVec:
        """Refresh to the full level budget.

        Callers pre-scale so |slot| <= 1.  Exact fidelity is lossless; in
        quantized fidelity the slots are perturbed within the configured
        noise bound and out-of-range inputs are recorded as warnings (the
        modeled failure risk of approximate modular reduction).
        """
        a = self.rescale(a)
        cfg = self.config
        if cfg.fidelity == "quantized":
            peak = float(np.max(np.abs(a.slots)))
            if peak > 1.0 + 2.0 ** -6:
                self.warnings.append(
                    f"bootstrap-range: {a.tag} peak {peak:.6g} exceeds 1+2^-6"
                )
            noise = self._rng.uniform(
                -(2.0 ** -cfg.bootstrap_noise_bits),
                2.0 ** -cfg.bootstrap_noise_bits,
                a.sparse_block,
            )
            slots = a.slots + np.tile(noise, a.n_slots // a.sparse_block)
        else:
            slots = a.slots.copy()
        out = CipherVec(slots, cfg.scale_exp, cfg.level_budget, a.sparse_block, a.tag, False)
        self.counter.bootstraps += 1
        self._log("bootstrap", a, out)
        self._validate(out)
        return out
