"""Emulator semantics against a hand-computed vector table, plus traps and traces."""

import json
import random
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import run_units
from rvrop import builder, catalog, chain, emulator, image, isa, synth
from rvrop.builder import Builder

TABLE = json.loads((Path(__file__).parent / "data" / "semantics.json").read_text())["vectors"]
CODE = 0x1000
RAM, RAM_SIZE = 0x40000000, 0x1000


def _machine(code: bytes, strict: bool = True) -> emulator.Machine:
    img = image.load_raw(code, CODE)
    return emulator.Machine(img, RAM, RAM_SIZE, host={}, strict=strict)


def _prepare(m, v):
    for name, val in v.get("regs", {}).items():
        m.set_reg(name, int(val, 16))
    for addr, data in v.get("mem", {}).items():
        m.mem.write(int(addr, 16), bytes.fromhex(data))
    m.state.pc = CODE


def _check(m, v, width):
    for name, val in v.get("expect", {}).items():
        assert m.reg(name) == int(val, 16), (v["asm"], name, hex(m.reg(name)))
    for addr, data in v.get("expect_mem", {}).items():
        want = bytes.fromhex(data)
        assert m.mem.read(int(addr, 16), len(want)) == want, v["asm"]


@pytest.mark.parametrize("v", TABLE, ids=[f"{i}:{v['asm']}" for i, v in enumerate(TABLE)])
def test_semantics_single_step(v):
    ins = isa.assemble(v["asm"])
    m = _machine(isa.encode(ins))
    _prepare(m, v)
    emulator.step(m)
    _check(m, v, ins.width)
    want_pc = int(v["pc"], 16) if "pc" in v else CODE + ins.width
    assert m.state.pc == want_pc


@pytest.mark.parametrize("v", [v for v in TABLE if "pc" not in v],
                         ids=[v["asm"] for v in TABLE if "pc" not in v])
def test_semantics_translated_block(v):
    """The same vectors through the block translator, stopped by an ebreak."""
    ins = isa.assemble(v["asm"])
    m = _machine(isa.encode(ins) + isa.encode(isa.assemble("ebreak")))
    _prepare(m, v)
    res = m.run(100)
    assert res.trap is not None and res.trap.kind == "breakpoint"
    assert res.trap.pc == CODE + ins.width
    _check(m, v, ins.width)


def test_table_is_large_enough():
    mnemonics = {v["asm"].split()[0] for v in TABLE}
    assert len(TABLE) >= 100 and len(mnemonics) >= 70


_WRITERS = ["addi", "xori", "ori", "andi", "slli", "srai", "addiw"]


@settings(max_examples=300, deadline=None)
@given(st.sampled_from(_WRITERS), st.integers(1, 31), st.integers(-2048, 2047),
       st.integers(0, (1 << 64) - 1))
def test_x0_is_immutable(op, rs1, imm, val):
    if op in ("slli", "srai"):
        imm &= 63
    if op == "addiw":
        imm = max(-2048, min(imm, 2047))
    text = f"{op} zero, {isa.reg_name(rs1)}, {imm}"
    m = _machine(isa.encode(isa.assemble(text)))
    m.set_reg(rs1, val)
    m.set_reg("zero", 123)  # ignored
    m.state.pc = CODE
    emulator.step(m)
    assert m.reg("zero") == 0


def test_fetch_and_data_traps():
    m = _machine(isa.encode(isa.assemble("ld a0, 0(a1)")))
    m.set_reg("a1", 0x9999_0000)
    m.state.pc = CODE
    with pytest.raises(emulator.Trap) as e:
        emulator.step(m)
    assert e.value.kind == "unmapped-access" and e.value.addr == 0x9999_0000
    assert e.value.pc == CODE
    # stores into the image are write-protect faults
    m = _machine(isa.encode(isa.assemble("sw a0, 0(a1)")))
    m.set_reg("a1", CODE)
    m.state.pc = CODE
    res = m.run(10)
    assert res.trap.kind == "write-protect" and res.trap.addr == CODE
    # jumping into RAM is an instruction fetch fault
    m = _machine(isa.encode(isa.assemble("c.jr a1")))
    m.set_reg("a1", RAM)
    m.state.pc = CODE
    res = m.run(10)
    assert res.trap.kind == "unmapped-access" and res.trap.pc == RAM


def test_illegal_and_unmodeled_instructions():
    m = _machine(b"\x00\x00")
    m.state.pc = CODE
    assert m.run(10).trap.kind == "illegal-instruction"
    m = _machine(bytes.fromhex("07300500"))  # fld
    m.state.pc = CODE
    res = m.run(10)
    assert res.trap.kind == "illegal-instruction" and "unmodeled" in str(res.trap)


def test_misaligned_sp_at_return():
    code = isa.assemble_block(["c.addi sp, 8", "c.jr ra"])
    for strict, want in ((True, "misaligned-sp"), (False, "unmapped-access")):
        m = _machine(code, strict)
        m.set_reg("sp", RAM + 0x100)
        m.set_reg("ra", 0x5000)
        m.state.pc = CODE
        res = m.run(10)
        assert res.trap.kind == want


def test_step_limit_reports_exact_count():
    m = _machine(isa.encode(isa.assemble("c.j 0")))
    m.state.pc = CODE
    res = m.run(1000)
    assert res.step_limit and res.steps == 1000 and res.trap is None
    assert not res.ok


def test_sentinel_trap_in_boot():
    img, _ = synth.build_image()
    cat = catalog.build_catalog(img)
    b = Builder(cat)
    prog = builder.link(b.unit_nop() + b.unit_nop())
    res = emulator.boot(img, chain.serialize(chain.resolve(prog)))
    assert res.trap.kind == "unmapped-access"
    assert res.trap.pc == chain.SENTINEL & ~1
    assert res.exit_status is None and not res.ok


def test_boot_rejects_unchainable_entry():
    img, _ = synth.build_image()
    binary = chain.ChainBinary(0x40000000, 0x10000, (0, 0), ())
    res = emulator.boot(img, binary)
    assert res.trap.kind == "illegal-instruction"


def test_host_stub_can_be_disabled():
    img, _ = synth.build_image()
    put = img.symbols["putchar"]
    m = emulator.Machine(img, RAM, RAM_SIZE, host={})
    m.set_reg("a0", ord("x"))
    m.set_reg("ra", 0x5000)
    m.state.pc = put
    res = m.run(50)
    assert res.output == b""  # the image's own code ran instead
    assert res.trap.pc == 0x5000


@pytest.fixture(scope="module")
def env():
    img, _ = synth.build_image()
    return img, catalog.build_catalog(img)


def test_trace_matches_frames_for_linear_chain(env):
    img, cat = env
    b = Builder(cat)
    rng = random.Random(3)
    units = []
    for _ in range(12):
        k = rng.randrange(3)
        units.append(b.unit_nop() if k == 0 else b.unit_add(rng.randrange(1, 3)) if k == 1
                     else b.unit_set_reg("a5", rng.getrandbits(64)))
    run = run_units(img, builder.seq(*units), {"a0": 0}, trace=True)
    assert run.ended
    r = run.resolved
    frames = r.program.frames
    landed = [(ev.entry, ev.sp) for ev in run.trace]
    # frame 0 is entered directly; every later frame is a return landing
    want = [(f.gadget.entry, base) for f, base in zip(frames[1:], r.bases[1:])]
    want.append((chain.SENTINEL & ~1, r.bases[-1] + frames[-1].size))
    assert landed == want


def test_runs_are_deterministic(env):
    img, cat = env
    b = Builder(cat)
    # boot only simulates frame 0's ra and sp, so the chain opens with a NOP
    u = b.unit_nop() + b.unit_call("putchar", [ord("d")]) + b.unit_call("exit", [3])
    data = chain.serialize(chain.resolve(builder.link(u)))
    cfg = emulator.BootConfig(trace="digest")
    a = emulator.boot(img, data, config=cfg)
    c = emulator.boot(img, data, config=cfg)
    assert a.output == c.output == b"d"
    assert a.exit_status == c.exit_status == 3
    assert a.trace_digest == c.trace_digest and a.steps == c.steps
    off = emulator.boot(img, data)
    assert off.steps == a.steps and off.trace_digest == ""


def test_hostile_stub_fills_below_sp(env):
    img, cat = env
    b = Builder(cat)
    u = b.unit_call("putchar", [ord("h")])
    run = run_units(img, u, hostile_bytes=256)
    assert run.machine.output == bytearray(b"h")
    assert b"\xa5" * 256 in bytes(run.machine.mem.ram)


def test_ram_overlap_rejected():
    img = image.load_raw(b"\x82\x80", RAM)
    with pytest.raises(ValueError):
        emulator.Machine(img, RAM, RAM_SIZE)


def test_chain_ram_covers_regions():
    binary = chain.ChainBinary(0x40000000, 0x10008, (1, 2, 3), ((0x40000100, 0x20),))
    assert emulator.chain_ram(binary) == (0x40000000, 0x120)
