"""Chain IR: resolution, binary format, listing and the self-modification check."""

import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rvrop import bf, catalog, chain, synth
from rvrop.chain import (NEXT, ChainFrame, ChainProgram, EntryOf, GadgetRef, Hole, Label, Region,
                         SelfModFixup)

NOP = GadgetRef(0x10008, 8, 0x10, "NOP")
POP_A0 = GadgetRef(0x100ca, 8, 0x20, "POP", {"a0": 0x10})
WRITE = GadgetRef(0x10078, 8, 0x10, "WRITEMEM", {"s0": 0})


def nop(label=None, nxt=NEXT):
    return ChainFrame(NOP, [0, nxt], label)


def test_contiguity_example():
    r = chain.resolve(ChainProgram([nop(), nop(nxt=Hole())], 0x40000000))
    assert r.bases == (0x40000000, 0x40000010)
    assert r.words == (0, 0x10008, 0, chain.SENTINEL)


def test_empty_program():
    r = chain.resolve(ChainProgram([], 0x40000000))
    assert r.words == () and r.bases == ()
    data = chain.serialize(r)
    assert chain.deserialize(data).words == ()


def test_errors():
    with pytest.raises(chain.UnresolvedLabel):
        chain.resolve(ChainProgram([ChainFrame(NOP, [Label("nowhere"), NEXT]), nop()]))
    with pytest.raises(chain.MisalignedBase):
        chain.resolve(ChainProgram([nop()], 0x40000008))
    with pytest.raises(chain.RegionOverlap):
        chain.resolve(ChainProgram([nop(nxt=Hole()), ], 0x40000000,
                                   [Region("tape", 64, 0x40000008)]))
    with pytest.raises(chain.UnresolvedProgram):
        chain.serialize(ChainProgram([nop()]))
    with pytest.raises(chain.UnresolvedLabel):
        chain.resolve(ChainProgram([ChainFrame(NOP, [0, EntryOf("x")])]))
    with pytest.raises(chain.ChainError):
        chain.resolve(ChainProgram([ChainFrame(NOP, [0, 0, 0, 0])]))  # 4 slots for b = 0x10


def test_binary_layout_is_bit_exact():
    prog = ChainProgram([nop(nxt=EntryOf("last")), nop("last", Hole("end"))], 0x40000000,
                        [Region("tape", 0x40)])
    r = chain.resolve(prog)
    data = chain.serialize(r)
    assert data[:8] == b"RVROP1\0\0"
    version, base, count, entry = struct.unpack_from("<IQQQ", data, 8)
    assert (version, base, count, entry) == (1, 0x40000000, 4, 0x10008)
    words = struct.unpack_from("<4Q", data, 36)
    assert words == (0, 0x10008, 0, 0xDEADDEADDEADDEAD)
    (nreg,) = struct.unpack_from("<I", data, 68)
    assert nreg == 1
    assert struct.unpack_from("<QQ", data, 72) == (0x40000020, 0x40)
    assert len(data) == 88


def test_single_nop_frame_word_count():
    r = chain.resolve(ChainProgram([ChainFrame(NOP, [0, 0x10008])]))
    binary = chain.deserialize(chain.serialize(r))
    assert len(binary.words) == 2 and binary.words[1] == 0x10008


def test_deserialize_errors():
    good = chain.serialize(chain.resolve(ChainProgram([nop(nxt=Hole())])))
    for bad in (b"", b"XXXXXXXX" + good[8:], good[:8] + b"\x02" + good[9:], good[:-1],
                good + b"\0"):
        with pytest.raises(chain.BadChainFile):
            chain.deserialize(bad)


_slot = st.one_of(st.integers(0, (1 << 64) - 1), st.just(Hole()), st.just(NEXT),
                  st.just(Label("f0", 8)), st.just(EntryOf("f0")))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(_slot, _slot), min_size=1, max_size=12),
       st.integers(0, 1 << 20).map(lambda v: 0x10000000 + 16 * v))
def test_round_trip_random_programs(pairs, base):
    frames = [ChainFrame(NOP, list(p), f"f{i}") for i, p in enumerate(pairs)]
    frames.append(ChainFrame(NOP, [0, Hole()], "end"))
    r = chain.resolve(ChainProgram(frames, base, [Region("scratch", 32)]))
    binary = chain.deserialize(chain.serialize(r))
    assert binary == chain.to_binary(r)
    assert chain.serialize(r) == chain.serialize(r)
    for i, f in enumerate(frames[1:], 1):
        assert r.bases[i] == r.bases[i - 1] + frames[i - 1].size
        assert r.bases[i] % 16 == 0


def test_listing_shapes():
    text = chain.listing(ChainProgram([nop("n")]))
    lines = text.splitlines()
    assert lines[0].startswith("# frame 0 n: NOP @0x10008")
    assert lines[1:] == ["n+0x0: 0x0", "n+0x8: NEXT ; ra"]
    prog = ChainProgram(
        [ChainFrame(WRITE, [Label("pop", 0x10 - 8), NEXT], "w"),
         ChainFrame(POP_A0, [0, EntryOf("end"), Hole("saved a0"), 0], "pop"),
         nop("end", Hole())],
        fixups=[SelfModFixup("w", Label("pop", 0x10))])
    text = chain.listing(prog)
    assert "pop+0x10: HOLE ; pop a0, self-mod target, saved a0" in text
    resolved = chain.listing(chain.resolve(prog))
    assert "0x40000020: HOLE ; pop a0, self-mod target, saved a0" in resolved
    for ln in resolved.splitlines():
        if not ln.startswith("#"):
            assert ln.startswith("0x")


def test_selfmod_order_check():
    pop = ChainFrame(POP_A0, [0, NEXT, Hole(), 0], "pop")
    good = ChainProgram([ChainFrame(WRITE, [Label("pop", 8), NEXT], "w"), pop, nop("end", Hole())],
                        fixups=[SelfModFixup("w", Label("pop", 0x10))])
    assert chain.check_selfmod_order(good) == []
    late = ChainProgram([ChainFrame(POP_A0, [0, NEXT, Hole(), 0], "pop"),
                         ChainFrame(WRITE, [Label("pop", 8), Hole()], "w")],
                        fixups=[SelfModFixup("w", Label("pop", 0x10))])
    assert any("without a write" in p for p in chain.check_selfmod_order(late))
    # a loop back to the writer's successor skips the write on the second trip
    loop = ChainProgram([ChainFrame(WRITE, [Label("pop", 8), NEXT], "w"),
                         ChainFrame(POP_A0, [0, NEXT, Hole(), 0], "pop", targets=()),
                         ChainFrame(NOP, [0, Hole()], "back", targets=("pop",))],
                        fixups=[SelfModFixup("w", Label("pop", 0x10))])
    assert any("re-entered" in p for p in chain.check_selfmod_order(loop))


@pytest.fixture(scope="module")
def compiled():
    img, _ = synth.build_image()
    cat = catalog.build_catalog(img)
    return bf.compile_program("+[->+<]>.", cat)


def test_built_chain_invariants(compiled):
    r = compiled.resolved
    frames = r.program.frames
    for i in range(1, len(frames)):
        assert r.bases[i] == r.bases[i - 1] + frames[i - 1].size
    for f, base in zip(frames, r.bases):
        assert base % 16 == 0
        if f.kind == "gadget":
            assert f.gadget.a % 8 == 0 and f.size == f.gadget.b
    assert chain.check_selfmod_order(r.program) == []
    data = chain.serialize(r)
    assert chain.deserialize(data) == chain.to_binary(r)
    assert r.frame_at(r.base_sp) == 0 and r.frame_at(r.base_sp - 8) is None
