"""Generate a short drive, report what the anomaly injectors produced and draw two frames."""

from collections import Counter

from radarseg.core import Scenario, dataset_stats
from radarseg.render import write_svg
from radarseg.synthgen import SceneConfig, generate_sequence

frames = generate_sequence(SceneConfig(seed=7, frames=600, sensors=("center", "left")))
stats = dataset_stats(frames)
print(f"{stats['frames']} frames, {stats['targets']} targets")
print(f"anomalous targets: {100 * stats['anomaly_fraction']:.2f} %")
print(f"frames with at least one anomaly: {100 * stats['frames_with_anomaly_fraction']:.1f} %")
print("scenarios:", dict(Counter(f.scenario.value for f in frames)))
print("sensors:  ", dict(Counter(f.sensor_id.value for f in frames)))

cruise = next(f for f in frames if f.scenario == Scenario.NORMAL and f.n_anomalies >= 2)
crossing = next(f for f in frames if f.scenario == Scenario.INTERSECTION and f.n_anomalies >= 1)
for tag, f in (("cruise", cruise), ("intersection", crossing)):
    path = f"tour_{tag}.svg"
    write_svg(path, f)
    print(f"{tag}: frame {f.frame_id}, ego {f.ego.speed:.1f} m/s, {len(f)} targets, "
          f"{f.n_anomalies} anomalous -> {path}")
