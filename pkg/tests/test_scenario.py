import dataclasses

import pytest

from macrsv import scenario as scn
from macrsv.errors import ConfigError


@pytest.mark.parametrize("name", ["fig3_saturation", "fig2_deadlock", "mobile_rwp", "cata_16_16"])
def test_bundled_roundtrip(name):
    sc = scn.load(name)
    text = scn.dump(sc)
    assert scn.parse(text) == sc
    assert scn.dump(scn.parse(text)) == text


def test_fig3_contents():
    sc = scn.load("fig3_saturation")
    assert len(sc.traffic.flows) == 10
    assert sc.frame_s == pytest.approx(0.11176)
    assert sc.offered_load_bps == pytest.approx(24e6)
    # no transmitter is a neighbor of another pair's receiver
    for s1, d1 in sc.traffic.flows:
        for s2, d2 in sc.traffic.flows:
            if (s1, d1) != (s2, d2):
                assert d2 not in sc.topology.neighbors(s1)


def test_analysis_smoke():
    spec = scn.load_analysis("analysis_smoke")
    assert (spec.K, spec.N, spec.q, spec.p) == (5, 10, 0.5, 0.2)


def test_file_topology(tmp_path):
    sc = scn.load("fig2_deadlock")
    (tmp_path / "topo.txt").write_text(sc.topology.to_text())
    text = scn.bundled_text("fig2_deadlock")
    head, _, rest = text.partition("[topology]")
    rest = rest[rest.index("[traffic]"):]
    (tmp_path / "s.ini").write_text(head + "[topology]\nkind = file\npath = topo.txt\n\n" + rest)
    assert scn.load(tmp_path / "s.ini").topology == sc.topology


@pytest.mark.parametrize("edit,needle", [
    (("[frame]", "[framez]"), "missing section [frame]"),
    (("triples_K = 14", "triples_K = many"), "[frame] triples_K"),
    (("kind = grid", "kind = hex"), "[topology] kind"),
    (("offered_load_bps = 24e6", "offered_load_bps = 24e6\nrate_pps = 3"), "not both"),
    (("1>0, ", "1>12, "), "not one hop"),
])
def test_config_errors(edit, needle):
    text = scn.bundled_text("fig3_saturation").replace(*edit)
    with pytest.raises(ConfigError) as e:
        scn.parse(text)
    assert needle in str(e.value)


def test_syntax_error_has_line():
    with pytest.raises(ConfigError) as e:
        scn.parse("[scenario]\nname = x\nthis line is broken\n")
    assert "line 3" in str(e.value)


def test_sweep_override():
    text = scn.bundled_text("fig3_saturation")
    name, vals = scn.parse_sweep("offered_load_bps=1e6,2e6")
    sc = scn._from_config(scn.with_override(text, name, vals[1]))
    assert sc.offered_load_bps == pytest.approx(2e6)
    sc = scn._from_config(scn.with_override(text, "scenario.persistence_p", "0.3"))
    assert sc.persistence_p == 0.3
    with pytest.raises(ConfigError):
        scn.with_override(text, "nonsense", "1")
    with pytest.raises(ConfigError):
        scn.parse_sweep("offered_load_bps")
