"""Gadget scanner: manifest oracle, summaries, classification and census."""

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import check_fidelity
from rvrop import image, isa, scanner, synth
from rvrop.symbolic import Const, Load, Op, Sym


@pytest.fixture(scope="module")
def built():
    img, man = synth.build_image()
    return img, man, scanner.scan(img)


def _raw(lines, base=0x1000):
    return image.load_raw(isa.assemble_block(lines), base)


def test_scan_matches_manifest_exactly(built):
    img, man, gadgets = built
    got = {(g.entry, g.a, g.b) for g in gadgets}
    want = {(p.entry, p.a, p.b) for p in man.chainable}
    assert got == want
    assert [g.entry for g in gadgets] == sorted(g.entry for g in gadgets)


def test_manifest_listing_matches_image_bytes(built):
    img, man, _ = built
    for p in man.planted:
        pc = p.entry
        for text in p.listing:
            ins = isa.decode(img.read(pc, 2) + (img.read(pc + 2, 2)
                             if img.segment_at(pc + 2, 2) else b""))
            assert ins == isa.assemble(text), (p.label, text)
            pc += ins.width


def test_nop_gadget_example(built):
    img, man, _ = built
    g = scanner.gadget_at(img, man.by_label("nop").entry)
    assert (g.a, g.b) == (8, 0x10)
    assert [str(i) for i in g.instrs] == ["c.ldsp ra, 8(sp)", "c.addi sp, 0x10", "c.jr ra"]
    s = g.summary
    assert s.pops == {"ra": 8}
    assert set(s.reg_writes) == {"ra", "sp"}
    assert not s.mem_reads and not s.mem_writes and not s.guards


def test_pop_gadget_example(built):
    img, man, _ = built
    g = scanner.gadget_at(img, man.by_label("pop6").entry)
    assert (g.a, g.b) == (0x28, 0x30)
    assert g.summary.pops == {"ra": 0x28, "s0": 0x20, "a0": 0, "a1": 8, "s1": 0x18, "s2": 0x10}


def test_readmem_summary(built):
    img, man, _ = built
    g = scanner.gadget_at(img, man.by_label("readmem").entry)
    assert (g.a, g.b) == (0x38, 0x40)
    s = g.summary
    a0 = Op("add", (Load(Op("add", (Sym("a0"), Const(8))), 8), Sym("a5")))
    assert s.reg_writes["a0"] == a0
    assert s.reg_writes["a5"] == Load(Sym("s0"), 8)
    assert s.pops["a4"] == 0x28
    (guard,) = s.guards
    assert guard.cond == "eq"
    assert {guard.lhs, guard.rhs} == {Load(Op("add", (Sym("sp"), Const(0x28))), 8),
                                      Load(Sym("s0"), 8)}


def test_only_return_yields_nothing():
    assert scanner.scan(_raw(["c.jr ra"])) == []


def test_window_limit_and_parameters():
    body = ["c.addi a0, 1"] * 20 + ["c.ldsp ra, 8(sp)", "c.addi sp, 16", "c.jr ra"]
    img = _raw(body)
    gadgets = scanner.scan(img, max_window=16)
    assert min(g.entry for g in gadgets) == 0x1000 + 2 * (20 + 3 - 16)
    with pytest.raises(ValueError):
        scanner.scan(img, max_window=1)


@pytest.mark.parametrize("lines", [
    ["c.ldsp ra, 0(sp)", "c.addi sp, 16", "c.jr ra"],          # a = 0
    ["c.ldsp ra, 8(sp)", "c.addi sp, 8", "c.jr ra"],           # b not a multiple of 16
    ["c.ldsp ra, 24(sp)", "c.addi sp, 16", "c.jr ra"],         # b <= a
    ["c.ldsp ra, 8(sp)", "c.mv sp, a0", "c.jr ra"],            # sp from a register
    ["c.ldsp ra, 8(sp)", "c.addi sp, 16", "c.jr a5"],          # not a return
])
def test_rejections(lines):
    img = _raw(lines)
    assert scanner.gadget_at(img, 0x1000) is None


def test_two_ra_loads_rejected_suffix_kept():
    img = _raw(["c.ldsp ra, 8(sp)", "c.ldsp ra, 8(sp)", "c.addi sp, 16", "c.jr ra"])
    entries = {g.entry for g in scanner.scan(img)}
    assert entries == {0x1002}


def test_opaque_gadget_flagged():
    fld = isa.decode(bytes.fromhex("07300500"))  # fld ft0, 0(a0)
    code = isa.encode(fld) + isa.assemble_block(["c.ldsp ra, 8(sp)", "c.addi sp, 16", "c.jr ra"])
    img = image.load_raw(code, 0x1000)
    g = scanner.gadget_at(img, 0x1000)
    assert g is not None and g.summary.opaque
    assert "OPAQUE" in g.summary.digest()
    assert scanner.classify(g, img) == []
    with pytest.raises(scanner.UnsupportedInstruction):
        scanner.summarize(g)
    # the suffix without the float load is an ordinary NOP gadget
    assert scanner.summarize(scanner.gadget_at(img, 0x1004)).pops == {"ra": 8}


def test_classification_matches_manifest(built):
    img, man, gadgets = built
    by_entry = {g.entry: g for g in gadgets}
    by_entry.update({p.entry: p for p in scanner.scan_pivots(img)})
    for p in man.planted:
        roles = {r.kind for r in scanner.classify(by_entry[p.entry], img)}
        assert roles == set(p.roles), p.label


def test_readmem_binding(built):
    img, man, _ = built
    g = scanner.gadget_at(img, man.by_label("readmem").entry)
    r = next(r for r in scanner.classify(g, img) if r.binding["dst"] == "a0")
    b = r.binding
    assert (b["dst"], b["addr"], b["disp"]) == ("a0", "a0", 8)
    assert b["preconds"] == ["a5=0", "mem[s0]=C", "pop a4=C"]
    assert set(b["clobbers"]) == {"a4", "a5", "s0"}


def test_call_and_branch_bindings(built):
    img, man, gadgets = built
    call = scanner.gadget_at(img, man.by_label("call_a5").entry)
    assert [r.kind for r in scanner.classify(call, img)] == ["CALL_JALR_A5"]
    (piv,) = scanner.scan_pivots(img)
    (role,) = scanner.classify(piv, img)
    assert role.kind == "BRANCH_UNCOND"
    assert (role.binding["base"], role.binding["ra_off"], role.binding["sp_off"]) == ("a0", 0, 0x68)


def test_census(built):
    img, man, gadgets = built
    c = scanner.census(img, gadgets)
    assert c.total == len(gadgets)
    assert c.unintended >= 1
    assert set(c.unintended_entries) == {p.entry for p in man.chainable if p.unintended}
    assert c.unintended <= c.total
    assert {g.entry for g in gadgets if g.unintended_entry} == set(c.unintended_entries)


def test_census_zero_when_aligned():
    img = _raw(["c.ldsp ra, 8(sp)", "c.addi sp, 16", "c.jr ra"])
    c = scanner.census(img, scanner.scan(img))
    assert (c.total, c.unintended) == (1, 0)


def test_symbol_sweep_option(built):
    img, _, gadgets = built
    symbols = scanner.intended_boundaries(img, "symbols")
    text = img.executable_segments[0]
    for addr in img.symbols.values():
        if text.contains(addr):
            assert addr in symbols
    c = scanner.census(img, gadgets, sweep="symbols")
    assert c.unintended <= c.total
    with pytest.raises(ValueError):
        scanner.intended_boundaries(img, "bogus")


def test_suffix_closure_on_manifest(built):
    img, man, gadgets = built
    entries = {g.entry for g in gadgets}
    for g in gadgets:
        pc = g.entry
        for ins in g.instrs[:-1]:
            pc += ins.width
            if scanner.gadget_at(img, pc) is not None:
                assert pc in entries


_EPILOGUES = [
    ["c.ldsp ra, 8(sp)", "c.addi sp, 16", "c.jr ra"],
    ["c.ldsp ra, 24(sp)", "c.ldsp s0, 16(sp)", "c.addi16sp sp, 32", "c.jr ra"],
    ["ld ra, 40(sp)", "ld a0, 0(sp)", "addi sp, sp, 48", "jalr zero, 0(ra)"],
]
_FILLER = ["c.addi a0, 1", "c.mv a1, a0", "add a2, a3, a4", "c.ld a5, 8(a0)",
           "c.sd a0, 8(s0)", "lui t0, 0x12345", "c.li a4, 3", "xor a2, a2, a1",
           "c.ldsp s1, 0(sp)", "addi t1, t0, 100"]


@settings(max_examples=150, deadline=None)
@given(st.lists(st.sampled_from(_FILLER), max_size=10), st.sampled_from(_EPILOGUES),
       st.binary(max_size=6))
def test_suffix_closure_random(filler, epilogue, junk):
    code = junk[: len(junk) // 2 * 2] + isa.assemble_block(filler + epilogue)
    img = image.load_raw(code, 0x2000)
    gadgets = scanner.scan(img)
    entries = {g.entry for g in gadgets}
    for g in gadgets:
        assert g.a > 0 and g.a % 8 == 0 and g.b > g.a and g.b % 16 == 0
        assert isa.is_return(g.instrs[-1])
        pc = g.entry
        for ins in g.instrs[:-1]:
            pc += ins.width
            if scanner.gadget_at(img, pc) is not None:
                assert pc in entries


def test_summary_fidelity_smoke(built):
    img, man, gadgets = built
    for g in gadgets:
        check_fidelity(img, g.entry, g.summary.path, 50, seed=g.entry)


def test_fidelity_check_detects_a_wrong_summary(built):
    img, man, _ = built
    g = scanner.gadget_at(img, man.by_label("add1").entry)
    p = g.summary.path
    regs = list(p.regs)
    regs[isa.reg_index("a0")] = Op("add", (Sym("a0"), Const(2)))
    wrong = type(p)(tuple(regs), p.mem_reads, p.mem_writes, p.guards, p.calls, p.opaque, p.instrs)
    with pytest.raises(AssertionError):
        check_fidelity(img, g.entry, wrong, 5, seed=1)


def test_scan_is_deterministic(built):
    img, _, gadgets = built
    again = scanner.scan(img)
    assert [(g.entry, g.a, g.b, g.summary.digest()) for g in again] == \
        [(g.entry, g.a, g.b, g.summary.digest()) for g in gadgets]


def test_shuffled_image_still_matches_manifest():
    rng = random.Random(7)
    for _ in range(3):
        img, man = synth.build_image(synth.SynthConfig(shuffle_seed=rng.getrandbits(32)))
        got = {(g.entry, g.a, g.b) for g in scanner.scan(img)}
        assert got == {(p.entry, p.a, p.b) for p in man.chainable}
