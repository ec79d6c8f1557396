"""Gadget catalog construction and text format."""

import pytest

from rvrop import catalog, synth


@pytest.fixture(scope="module")
def cat():
    img, _ = synth.build_image()
    return catalog.build_catalog(img)


def test_complete(cat):
    assert cat.missing() == []
    assert set(cat.functions) == {"putchar", "getchar", "exit"}
    assert cat.constants


def test_text_round_trip(cat):
    text = cat.to_text()
    back = catalog.GadgetCatalog.from_text(text)
    assert back.to_text() == text
    assert back.entries == cat.entries


def test_preference_order(cat):
    nops = cat.find("NOP")
    assert [e.b for e in nops] == sorted(e.b for e in nops)
    assert cat.first("NOP").entry == nops[0].entry


def test_pops_cover_builder_registers(cat):
    for reg in ("a0", "a4", "a5", "s0"):
        assert cat.pops_for(reg), reg


def test_regmap_format():
    assert catalog.parse_regmap(catalog.fmt_regmap({"a0": 0, "s0": 0x20})) == {"a0": 0, "s0": 0x20}
    assert catalog.fmt_regmap({}) == "-" and catalog.parse_regmap("-") == {}


def test_missing_role_reported(cat):
    text = "\n".join(ln for ln in cat.to_text().splitlines() if not ln.startswith("CALL_JALR_A5"))
    partial = catalog.GadgetCatalog.from_text(text)
    assert partial.missing() == ["CALL_JALR_A5"]
    with pytest.raises(catalog.IncompleteCatalog) as e:
        partial.first("CALL_JALR_A5")
    assert e.value.role == "CALL_JALR_A5"


@pytest.mark.parametrize("line", ["BOGUS 0x1 0x8 0x10", "NOP zz 0x8 0x10", "CONST 0x10"])
def test_syntax_errors(line):
    with pytest.raises(catalog.CatalogSyntaxError):
        catalog.GadgetCatalog.from_text(line)


def test_comments_ignored():
    cat = catalog.GadgetCatalog.from_text("# hi\nNOP 0x10 0x8 0x10  # trailing\n")
    assert len(cat.entries) == 1
