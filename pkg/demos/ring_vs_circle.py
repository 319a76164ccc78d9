"""Why a range ring catches same-range ghosts that a circle around the car misses.

Builds a small street scene, queries around the front of a preceding car and
prints which targets each neighbourhood picks up. Writes ring_vs_circle.svg.
"""

import math

import numpy as np

from radarseg.core import EgoState, Label, RadarFrame, RadarTarget
from radarseg.grouping import ball_query, ring_query
from radarseg.render import write_svg

car = [(28.0, -8.0), (29.0, -7.0), (28.5, -9.2), (27.5, -8.5), (29.5, -8.0)]
ghost = (20.0, -21.0)
rails = [(x, y) for y in (-12.0, 12.0) for x in np.arange(3.0, 61.0, 3.0)]
cloud = np.array(car + [ghost] + rails)

dist = math.dist(car[0], ghost)
print(f"centroid range {math.hypot(*car[0]):.2f} m, ghost range {math.hypot(*ghost):.2f} m, "
      f"euclidean gap {dist:.2f} m")
for name, res in [("circle r=6", ball_query(cloud, [0], 6.0, 32)),
                  ("ring w=4", ring_query(cloud, [0], 4.0, 32)),
                  (f"circle r={dist:.1f}", ball_query(cloud, [0], dist, 32))]:
    members = set(res.groups()[0])
    print(f"{name:<14} candidates {res.counts[0]:>3}  ghost inside: {5 in members}")

ego = EgoState(10.0, 0.0)
targets = []
for i, (x, y) in enumerate(cloud):
    moving = i < 5
    v = -10.0 * x / math.hypot(x, y) + (4.0 if moving else 0.0)
    targets.append(RadarTarget.from_raw_doppler(x, y, v, 10.0 if moving else 0.0, ego,
                                                Label.ANOMALOUS if i == 5 else Label.NORMAL))
write_svg("ring_vs_circle.svg", RadarFrame(0, "center", ego, tuple(targets)))
print("wrote ring_vs_circle.svg")
