"""
Grouping similar models
=======================

Pairwise ``1 - CKA`` distances feed an average-linkage clustering that is cut
at ``1 - t``. A higher threshold ``t`` asks for more similarity inside a
group and so gives more, smaller groups. The two-step version clusters vision
encoders first and then, per encoder group, clusters the language models
using activations conditioned on that group's medoid encoder.
"""

from pathlib import Path

from vlmsearch import cluster, pairwise_distance_matrix
from vlmsearch.trace import read_activation_dir, read_bundle

DATA = Path(__file__).resolve().parent.parent / "data"

acts = read_activation_dir(DATA / "demo_activations")
dist = pairwise_distance_matrix(acts)
print("distance matrix:")
for i, mid in enumerate(dist.ids):
    print(f"  {mid:<6}", " ".join(f"{v:.3f}" for v in dist.values[i]))

for t in (0.3, 0.7, 0.99):
    cs = cluster(dist, t)
    print(f"t={t}: {len(cs)} clusters {list(cs.clusters)} medoids {list(cs.medoids)}")

###############################################################################
# Two-step clustering on a 7 x 7 zoo
# ----------------------------------

from vlmsearch.clustering import two_step_clusters  # noqa: E402

zoo = read_bundle(DATA / "demo_trace")
clusters, ve_clusters, llm_clusterings = two_step_clusters(
    zoo.ve_ids, zoo.llm_ids, zoo.ve_distance_matrix(), zoo.llm_distance_matrix, t_ve=0.7, t_llm=0.8
)
print(f"\nencoder groups: {list(ve_clusters.clusters)}")
for medoid, cs in llm_clusterings.items():
    print(f"language-model groups under {medoid}: {list(cs.clusters)}")
print(f"{len(clusters)} candidate clusters covering {sum(len(c) for c in clusters)} candidates")
for c in clusters:
    print(f"  representative {c.representative}  ({len(c)} members)")
