"""Rule-based encoding of decomposed x86-64 instructions.

Each instruction arrives pre-decomposed into up to six stored components
(prefix group, opcode byte, ModRM triple, SIB triple, displacement,
immediate).  The encoder maps a record to a fixed 439-dimensional binary
vector: one-hot blocks for the categorical fields, 64-bit binary blocks
for the two value fields, and a trailing run of presence flags.  Block
vectors aggregate the instruction vectors of a basic block elementwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

VECTOR_DIM = 439

# Layout: contiguous blocks, in this order.
PREFIX_LO, PREFIX_HI = 0, 8
OPCODE_LO, OPCODE_HI = 8, 264
MODRM_MOD_LO, MODRM_MOD_HI = 264, 268
MODRM_REG_LO, MODRM_REG_HI = 268, 276
MODRM_RM_LO, MODRM_RM_HI = 276, 284
SIB_SCALE_LO, SIB_SCALE_HI = 284, 288
SIB_INDEX_LO, SIB_INDEX_HI = 288, 296
SIB_BASE_LO, SIB_BASE_HI = 296, 304
DISP_LO, DISP_HI = 304, 368
IMM_LO, IMM_HI = 368, 432
FLAGS_LO, FLAGS_HI = 432, 439

# Flag positions within [FLAGS_LO, FLAGS_HI): one per component plus a
# reserved slot that is always zero.
FLAG_PREFIX = FLAGS_LO + 0
FLAG_OPCODE = FLAGS_LO + 1
FLAG_MODRM = FLAGS_LO + 2
FLAG_SIB = FLAGS_LO + 3
FLAG_DISP = FLAGS_LO + 4
FLAG_IMM = FLAGS_LO + 5
FLAG_RESERVED = FLAGS_LO + 6

_U64_MAX = (1 << 64) - 1


@dataclass(frozen=True)
class InstructionRecord:
    """One decomposed instruction; absent components are None."""

    opcode: int
    prefix: int | None = None
    modrm: tuple[int, int, int] | None = None
    sib: tuple[int, int, int] | None = None
    displacement: int | None = None
    immediate: int | None = None


def _check_range(name: str, value: int, hi: int) -> int:
    if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
        raise ValueError(f"{name} must be an integer, got {value!r}")
    if not 0 <= value < hi:
        raise ValueError(f"{name} out of range: {value} not in [0, {hi})")
    return int(value)


def _check_u64(name: str, value: int) -> int:
    if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
        raise ValueError(f"{name} must be an integer, got {value!r}")
    if not 0 <= value <= _U64_MAX:
        raise ValueError(f"{name} out of range: {value} not a 64-bit unsigned value")
    return int(value)


def _check_triple(name: str, raw: object, his: tuple[int, int, int],
                  keys: tuple[str, str, str]) -> tuple[int, int, int]:
    if isinstance(raw, dict):
        missing = [k for k in keys if k not in raw]
        if missing:
            raise ValueError(f"{name} missing subfield {missing[0]!r}")
        parts = tuple(raw[k] for k in keys)
    else:
        parts = tuple(raw)  # type: ignore[arg-type]
        if len(parts) != 3:
            raise ValueError(f"{name} must have exactly 3 subfields")
    return tuple(
        _check_range(f"{name}.{key}", part, hi)
        for key, part, hi in zip(keys, parts, his)
    )  # type: ignore[return-value]


def parse_instruction_record(fields: dict) -> InstructionRecord:
    """Validate a field map and return an InstructionRecord.

    The map must contain "opcode"; the other components ("prefix",
    "modrm", "sib", "disp", "imm") are optional and independently
    present.  Out-of-range subfields are rejected by name.
    """
    if "opcode" not in fields:
        raise ValueError("missing opcode")
    known = {"opcode", "prefix", "modrm", "sib", "disp", "imm"}
    unknown = set(fields) - known
    if unknown:
        raise ValueError(f"unknown instruction field {sorted(unknown)[0]!r}")

    opcode = _check_range("opcode", fields["opcode"], 256)
    prefix = None
    if fields.get("prefix") is not None:
        prefix = _check_range("prefix", fields["prefix"], 8)
    modrm = None
    if fields.get("modrm") is not None:
        modrm = _check_triple("modrm", fields["modrm"], (4, 8, 8),
                              ("mod", "reg", "rm"))
    sib = None
    if fields.get("sib") is not None:
        sib = _check_triple("sib", fields["sib"], (4, 8, 8),
                            ("scale", "index", "base"))
    disp = None
    if fields.get("disp") is not None:
        disp = _check_u64("disp", fields["disp"])
    imm = None
    if fields.get("imm") is not None:
        imm = _check_u64("imm", fields["imm"])
    return InstructionRecord(opcode=opcode, prefix=prefix, modrm=modrm,
                             sib=sib, displacement=disp, immediate=imm)


def instruction_record_fields(instr: InstructionRecord) -> dict:
    """Inverse of parse_instruction_record, for corpus serialization."""
    fields: dict = {"opcode": instr.opcode}
    if instr.prefix is not None:
        fields["prefix"] = instr.prefix
    if instr.modrm is not None:
        mod, reg, rm = instr.modrm
        fields["modrm"] = {"mod": mod, "reg": reg, "rm": rm}
    if instr.sib is not None:
        scale, index, base = instr.sib
        fields["sib"] = {"scale": scale, "index": index, "base": base}
    if instr.displacement is not None:
        fields["disp"] = instr.displacement
    if instr.immediate is not None:
        fields["imm"] = instr.immediate
    return fields


def _write_bits(vec: np.ndarray, lo: int, value: int) -> None:
    # 64-bit little-endian binary expansion: bit i lands at lo + i.
    for i in range(64):
        if (value >> i) & 1:
            vec[lo + i] = 1.0


def encode_instruction(instr: InstructionRecord) -> np.ndarray:
    """Encode one instruction as a 439-dim {0,1} vector.

    Absent components leave their block (and presence flag) at zero;
    present components set the flag even when the value's bits are all
    zero, so a zero immediate is distinguishable from no immediate.
    """
    vec = np.zeros(VECTOR_DIM, dtype=np.float64)
    vec[OPCODE_LO + instr.opcode] = 1.0
    vec[FLAG_OPCODE] = 1.0
    if instr.prefix is not None:
        vec[PREFIX_LO + instr.prefix] = 1.0
        vec[FLAG_PREFIX] = 1.0
    if instr.modrm is not None:
        mod, reg, rm = instr.modrm
        vec[MODRM_MOD_LO + mod] = 1.0
        vec[MODRM_REG_LO + reg] = 1.0
        vec[MODRM_RM_LO + rm] = 1.0
        vec[FLAG_MODRM] = 1.0
    if instr.sib is not None:
        scale, index, base = instr.sib
        vec[SIB_SCALE_LO + scale] = 1.0
        vec[SIB_INDEX_LO + index] = 1.0
        vec[SIB_BASE_LO + base] = 1.0
        vec[FLAG_SIB] = 1.0
    if instr.displacement is not None:
        _write_bits(vec, DISP_LO, instr.displacement)
        vec[FLAG_DISP] = 1.0
    if instr.immediate is not None:
        _write_bits(vec, IMM_LO, instr.immediate)
        vec[FLAG_IMM] = 1.0
    return vec


def aggregate_block(instr_vectors: list[np.ndarray] | np.ndarray,
                    mode: str = "mean") -> np.ndarray:
    """Pool a basic block's instruction vectors elementwise."""
    stack = np.asarray(instr_vectors, dtype=np.float64)
    if stack.ndim != 2 or stack.shape[0] == 0:
        raise ValueError("empty basic block")
    if stack.shape[1] != VECTOR_DIM:
        raise ValueError(f"instruction vectors must have {VECTOR_DIM} entries")
    if mode == "mean":
        return stack.mean(axis=0)
    if mode == "max":
        return stack.max(axis=0)
    raise ValueError(f"unknown aggregation mode {mode!r}")


def encode_block(block: list[InstructionRecord], mode: str = "mean") -> np.ndarray:
    """Encode and pool one basic block."""
    if not block:
        raise ValueError("empty basic block")
    return aggregate_block([encode_instruction(i) for i in block], mode)
