"""Dissemination experiments at desk scale.

Reproduces the shape of the two headline results: message size barely
moves epidemic coverage, and a handful of access points lets web-only
clients see almost as much content as native nodes.

Run from the repository root:  python3 demos/04_simulation.py
(Takes roughly a minute; shrink `runs` or `duration` to go faster.)
"""

from oppweb.simulator import NodeGroup, ScenarioConfig, run_scenario


def pedestrians(count=20):
    return NodeGroup("peds", "native-mobile", count, speed=(0.5, 1.5),
                     radio_range=50.0, bitrate=2_000_000.0)


def scenario(size, runs=3, extra_groups=(), native_count=20):
    return ScenarioConfig(
        seed=1, width=1000.0, height=1000.0, duration=7200.0, step=1.0,
        ttl=5400.0, message_interval=60.0, message_size=(size, size),
        runs=runs, groups=(pedestrians(native_count), *extra_groups),
    )


print("== overhead: native vs framework-enhanced message sizes ==")
for label, size in (("text native   (350 B)", 350),
                    ("text framework (16 KB)", 16_384),
                    ("photo native  (120 KB)", 120_000),
                    ("photo framework (127 KB)", 127_000)):
    report = run_scenario(scenario(size))
    print(f"  {label}: coverage {report.mean_native_coverage:.3f}")

print()
print("== web reach: more access points, more web users served ==")
web = NodeGroup("web", "web-mobile", 60, speed=(0.5, 1.5), radio_range=50.0)
mobile_aps = NodeGroup("aps-mobile", "native-ap-mobile", 10, speed=(0.5, 1.5),
                       radio_range=50.0, bitrate=2_000_000.0)
for extra in (0, 2, 10):
    groups = [mobile_aps, web]
    if extra:
        groups.append(NodeGroup("aps-static", "native-ap-static", extra,
                                radio_range=50.0, bitrate=2_000_000.0))
    report = run_scenario(scenario(16_384, extra_groups=tuple(groups),
                                   native_count=10))
    print(f"  +{extra:>2} static APs: native {report.mean_native_coverage:.3f} "
          f"web {report.mean_web_coverage:.3f}")
