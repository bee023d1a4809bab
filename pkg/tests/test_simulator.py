"""Simulator: contact physics, transfer schedule oracle, determinism."""

import math
import os

import numpy as np
import pytest

from oppweb.simulator import (
    NodeGroup,
    ScenarioConfig,
    ScenarioError,
    Simulation,
    crosscheck_static_clique,
    load_scenario,
    parse_scenario,
    run_scenario,
    sweep,
    write_report,
)


def static_group(name, klass, count, rng=50.0, bitrate=2e6):
    return NodeGroup(name, klass, count, speed=(0.0, 0.0), radio_range=rng, bitrate=bitrate)


def base_config(**kw):
    defaults = dict(
        seed=1, width=100.0, height=100.0, duration=60.0, step=1.0,
        ttl=10**6, message_interval=10.0, message_size=(100, 100), runs=1,
    )
    defaults.update(kw)
    return ScenarioConfig(**defaults)


def place(sim: Simulation, coords):
    """Pin node positions for hand-built topologies (static nodes only)."""
    for i, (x, y) in enumerate(coords):
        sim.mobility.pos[i] = (x, y)
        sim.mobility.dest[i] = (x, y)


# -- trivial contact graphs -----------------------------------------------------


def test_two_static_nodes_in_range_full_coverage():
    cfg = base_config(groups=(static_group("n", "native-mobile", 2, rng=10_000),))
    assert run_scenario(cfg).mean_native_coverage == 1.0


def test_two_static_nodes_out_of_range_half_coverage():
    cfg = base_config(width=100_000, height=100_000,
                      groups=(static_group("n", "native-mobile", 2, rng=0.001),))
    assert run_scenario(cfg).mean_native_coverage == 0.5


def test_five_node_line_matches_hand_schedule():
    # One generator and four static relays on a line, 45 m apart, 50 m
    # range: a chain of pairwise contacts. At 2 Mbit/s a 250 kB message
    # costs exactly one 1-second step per hop, so the hand-computed
    # delivery times are 1, 2, 3, 4 seconds.
    cfg = base_config(
        duration=30.0, message_interval=10**6, message_size=(250_000, 250_000),
        groups=(
            static_group("src", "native-mobile", 1),
            static_group("relay", "native-ap-static", 4),
        ),
    )
    sim = Simulation(cfg, seed=1)
    place(sim, [(0, 0), (45, 0), (90, 0), (135, 0), (180, 0)])
    result = sim.run()
    assert len(result.messages) == 1
    msg = result.messages[0]
    assert msg.origin == 0
    assert msg.native_reached == {0, 1, 2, 3, 4}
    assert [msg.receive_times[n] for n in (1, 2, 3, 4)] == [1.0, 2.0, 3.0, 4.0]


def test_chain_is_not_skipped_over():
    # Same line but nodes 90 m apart: no contact, message stays home.
    cfg = base_config(
        duration=30.0, message_interval=10**6,
        groups=(
            static_group("src", "native-mobile", 1),
            static_group("relay", "native-ap-static", 2),
        ),
    )
    sim = Simulation(cfg, seed=1)
    place(sim, [(0, 0), (90, 0), (180, 0)])
    result = sim.run()
    assert result.messages[0].native_reached == {0}


def test_clique_epidemic_equivalence():
    cfg = base_config(
        duration=600.0, message_interval=60.0,
        groups=(static_group("n", "native-mobile", 8, rng=10_000),),
    )
    result = run_scenario(cfg).runs[0]
    assert result.messages  # sanity
    for msg in result.messages:
        assert len(msg.native_reached) == 8


def test_conservation_transfer_log_replay():
    g = NodeGroup("peds", "native-mobile", 12, speed=(0.5, 1.5),
                  radio_range=50.0, bitrate=2e6)
    cfg = base_config(width=500, height=500, duration=1200, message_interval=60,
                      message_size=(4096, 4096), groups=(g,))
    result = run_scenario(cfg).runs[0]
    reached = {m.index: {m.origin} for m in result.messages}
    for t, sender, receiver, m in sorted(result.transfer_log, key=lambda r: r[0]):
        assert sender in reached[m], "transfer from a node that never held the message"
        reached[m].add(receiver)
    for msg in result.messages:
        assert reached[msg.index] == msg.native_reached


def test_radio_range_monotonicity_static_topology():
    def run_with_range(radio):
        cfg = base_config(
            width=400, height=400, duration=900, message_interval=100,
            groups=(NodeGroup("peds", "native-mobile", 15, speed=(0.0, 0.0),
                              radio_range=radio, bitrate=2e6),),
        )
        return run_scenario(cfg).runs[0]

    small = run_with_range(40.0)
    large = run_with_range(80.0)
    for m_small, m_large in zip(small.messages, large.messages):
        assert m_small.origin == m_large.origin  # same traffic stream
        assert m_small.native_reached <= m_large.native_reached
    assert large.mean_native_coverage() >= small.mean_native_coverage()


def test_ttl_expiry_stops_spread():
    # Two nodes meet long after the message died: nothing to exchange.
    cfg = base_config(
        ttl=5.0, duration=60.0, message_interval=10**6,
        groups=(static_group("n", "native-mobile", 2, rng=10_000),),
    )
    sim = Simulation(cfg, seed=1)
    place(sim, [(0, 0), (90_000, 0)])  # never in range
    result = sim.run()
    assert result.messages[0].native_reached == {result.messages[0].origin}
    # Holder dropped it after expiry too.
    assert all(not holding for holding in sim.holdings)


def test_contact_loss_aborts_in_flight_transfer():
    # A message larger than one step's bandwidth; the contact exists for
    # one step only, so the transfer aborts and nothing is delivered.
    class OneStepContact(Simulation):
        def _native_contacts(self, pos):
            now_pairs = super()._native_contacts(pos)
            return now_pairs if self._steps_seen == 0 else set()

    cfg = base_config(
        duration=10.0, message_interval=10**6, message_size=(10_000_000, 10_000_000),
        groups=(static_group("n", "native-mobile", 2, rng=10_000),),
    )
    sim = OneStepContact(cfg, seed=1)
    sim._steps_seen = 0
    original_step = sim.mobility.step

    def counting_step(dt):
        sim._steps_seen += 1
        return original_step(dt)

    sim.mobility.step = counting_step
    result = sim.run()
    assert result.transfers_aborted == 1
    assert result.messages[0].native_reached == {result.messages[0].origin}


def test_setup_latency_delays_transfers():
    cfg = base_config(
        duration=30.0, message_interval=10**6, message_size=(100, 100),
        setup_latency=5.0,
        groups=(static_group("n", "native-mobile", 2, rng=10_000),),
    )
    sim = Simulation(cfg, seed=1)
    place(sim, [(0, 0), (10, 0)])
    result = sim.run()
    msg = result.messages[0]
    other = ({0, 1} - {msg.origin}).pop()
    assert msg.receive_times[other] >= 5.0


# -- web nodes ----------------------------------------------------------------------


def web_topology(with_ap=True):
    groups = [
        static_group("gen", "native-mobile", 1),
        static_group("web", "web-mobile", 1),
    ]
    if with_ap:
        groups.insert(1, static_group("ap", "native-ap-static", 1))
    cfg = base_config(duration=20.0, message_interval=10**6, groups=tuple(groups))
    sim = Simulation(cfg, seed=1)
    if with_ap:
        place(sim, [(0, 0), (40, 0), (60, 0)])  # gen-ap in range, ap-web in range
    else:
        place(sim, [(0, 0), (10, 0)])  # web right next to the generator
    return sim


def test_web_node_reached_through_ap():
    sim = web_topology(with_ap=True)
    result = sim.run()
    msg = result.messages[0]
    web_id = int(sim.web_ids[0])
    assert msg.web_reached == {web_id}
    assert result.web_total == 1


def test_web_node_never_talks_to_natives_directly():
    sim = web_topology(with_ap=False)
    result = sim.run()
    assert result.messages[0].web_reached == set()


def test_web_attach_picks_up_later_gains():
    # Web node parked at an AP; generator wanders in later.
    groups = (
        NodeGroup("gen", "native-mobile", 1, speed=(10.0, 10.0), radio_range=50.0),
        static_group("ap", "native-ap-static", 1),
        static_group("web", "web-mobile", 1),
    )
    cfg = base_config(duration=120.0, message_interval=10**6, width=300, height=1,
                      groups=groups)
    sim = Simulation(cfg, seed=3)
    sim.mobility.pos[0] = (300, 0)
    sim.mobility.dest[0] = (0, 0)  # marches straight at the AP
    sim.mobility.speed[0] = 10.0
    place_ap_web = [(0, 0), (30, 0)]
    sim.mobility.pos[1] = place_ap_web[0]
    sim.mobility.dest[1] = place_ap_web[0]
    sim.mobility.pos[2] = place_ap_web[1]
    sim.mobility.dest[2] = place_ap_web[1]
    result = sim.run()
    assert result.messages[0].web_reached == {2}


# -- config and formats ------------------------------------------------------------


def test_config_validation_enumerates_errors():
    bad = ScenarioConfig(
        seed=1, width=-5, height=100, duration=0, step=1.0, ttl=100,
        message_interval=10, message_size=(200, 100), runs=0,
        groups=(NodeGroup("x", "flying", 0, speed=(3, 1), radio_range=-1),),
    )
    with pytest.raises(ScenarioError) as exc_info:
        bad.validate()
    text = str(exc_info.value)
    for fragment in ("width", "duration", "runs", "message_size", "class",
                     "count", "speed", "range", "native-mobile"):
        assert fragment in text


def test_parse_scenario_roundtrip():
    text = """
# desk scale scenario
seed = 7
area = 1000 800
duration = 3600
step = 1.0
ttl = 5400
message_interval = 60
message_size = 350
runs = 2

[group]
name = peds
class = native-mobile
count = 20
speed = 0.5 1.5
range = 50
bitrate = 2000000

[group]
name = aps
class = native-ap-static
count = 10
range = 50
bitrate = 2000000
"""
    cfg = parse_scenario(text)
    assert cfg.seed == 7
    assert cfg.width == 1000 and cfg.height == 800
    assert cfg.message_size == (350, 350)
    assert [g.name for g in cfg.groups] == ["peds", "aps"]
    assert cfg.groups[1].klass == "native-ap-static"


def test_parse_scenario_errors():
    with pytest.raises(ScenarioError):
        parse_scenario("seed 1")
    with pytest.raises(ScenarioError):
        parse_scenario("seed = 1\n[group]\nname = x\nclass = bogus\ncount = 1")


def test_fixed_seed_byte_identical_csv(tmp_path):
    g = NodeGroup("peds", "native-mobile", 10, speed=(0.5, 1.5), radio_range=50.0)
    cfg = base_config(width=500, height=500, duration=600, message_interval=30,
                      runs=2, groups=(g,))
    a, b = run_scenario(cfg), run_scenario(cfg)
    assert a.digest() == b.digest()
    assert a.run_csv(0) == b.run_csv(0)
    assert a.summary_csv() == b.summary_csv()
    paths = write_report(a, str(tmp_path), "case")
    assert any(p.endswith("summary.csv") for p in paths)


def test_different_seed_changes_outcome():
    g = NodeGroup("peds", "native-mobile", 10, speed=(0.5, 1.5), radio_range=50.0)
    cfg = base_config(width=500, height=500, duration=600, message_interval=30, groups=(g,))
    assert run_scenario(cfg).digest() != run_scenario(
        ScenarioConfig(**{**cfg.__dict__, "seed": 2})
    ).digest()


def test_adding_a_group_does_not_disturb_existing_trajectories():
    g1 = NodeGroup("peds", "native-mobile", 5, speed=(0.5, 1.5), radio_range=50.0)
    g2 = NodeGroup("aps", "native-ap-static", 3, radio_range=50.0)
    lone = Simulation(base_config(groups=(g1,)), seed=9)
    both = Simulation(base_config(groups=(g1, g2)), seed=9)
    for _ in range(50):
        lone.mobility.step(1.0)
        both.mobility.step(1.0)
    assert np.allclose(lone.mobility.pos[:5], both.mobility.pos[:5])


def test_map_mobility_stays_on_graph(tmp_path):
    map_path = tmp_path / "grid.edges"
    map_path.write_text(
        "0 0 100 0\n100 0 100 100\n100 100 0 100\n0 100 0 0\n0 0 100 100\n"
    )
    g = NodeGroup("peds", "native-mobile", 4, speed=(1.0, 2.0), radio_range=50.0)
    cfg = base_config(duration=200.0, groups=(g,), map_file=str(map_path))
    sim = Simulation(cfg, seed=2)
    for _ in range(200):
        pos = sim.mobility.step(1.0)
        assert (pos >= -1e-6).all() and (pos <= 100 + 1e-6).all()


def test_sweep_builds_comparison_table(tmp_path):
    scn = """
seed = 1
area = 300 300
duration = 300
step = 1.0
ttl = 100000
message_interval = 60
message_size = {size}
runs = 1

[group]
name = peds
class = native-mobile
count = 6
speed = 0.5 1.5
range = 80
bitrate = 2000000
"""
    for name, size in (("high_small", 350), ("high_big", 16384)):
        (tmp_path / f"{name}.scn").write_text(scn.format(size=size))
    table = sweep(
        [str(tmp_path / "high_small.scn"), str(tmp_path / "high_big.scn")],
        str(tmp_path / "out"),
    )
    lines = table.strip().splitlines()
    assert lines[0].startswith("scenario,")
    assert len(lines) == 3
    assert os.path.isfile(tmp_path / "out" / "sweep.csv")
    assert os.path.isfile(tmp_path / "out" / "high_big.run00.csv")


def test_crosscheck_real_protocol_agrees_with_abstract_engine():
    assert crosscheck_static_clique(node_count=4, message_count=3)


def test_load_scenario_from_file(tmp_path):
    path = tmp_path / "tiny.scn"
    path.write_text(
        "seed = 3\narea = 100 100\nduration = 10\nstep = 1\nttl = 100\n"
        "message_interval = 5\nmessage_size = 10\nruns = 1\n"
        "[group]\nname = n\nclass = native-mobile\ncount = 2\n"
        "speed = 0 0\nrange = 1000\nbitrate = 1000000\n"
    )
    report = run_scenario(load_scenario(str(path)))
    assert report.mean_native_coverage == 1.0
