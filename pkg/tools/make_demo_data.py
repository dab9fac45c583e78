"""Regenerate the files under data/ (demo zoo spec, trace bundle, activation set).

Run from the repository root: ``python3 tools/make_demo_data.py``.
"""

import json
import shutil
from pathlib import Path

import numpy as np

from vlmsearch import ActivationMatrix, SyntheticSpec, generate_synthetic, pairwise_distance_matrix
from vlmsearch.trace import write_activation_csv

DATA = Path(__file__).resolve().parent.parent / "data"


def demo_activations(seed: int = 0) -> list[ActivationMatrix]:
    # two planted pairs: (enc_a, enc_b) share one latent, (enc_c, enc_d) another
    rng = np.random.default_rng(seed)
    out = []
    for names in (("enc_a", "enc_b"), ("enc_c", "enc_d")):
        latent = rng.standard_normal((64, 4))
        for name in names:
            q, _ = np.linalg.qr(rng.standard_normal((8, 4)))
            out.append(ActivationMatrix(name, latent @ q.T + 0.2 * rng.standard_normal((64, 8))))
    return out


def main():
    DATA.mkdir(exist_ok=True)
    spec = SyntheticSpec.planted(seed=0)
    (DATA / "demo_spec.json").write_text(json.dumps(spec.to_json(), indent=2) + "\n")
    shutil.rmtree(DATA / "demo_trace", ignore_errors=True)
    bundle = generate_synthetic(spec, seed=0)
    bundle.save(DATA / "demo_trace")

    act_dir = DATA / "demo_activations"
    shutil.rmtree(act_dir, ignore_errors=True)
    act_dir.mkdir()
    acts = demo_activations()
    for act in acts:
        write_activation_csv(act_dir / f"{act.model_id}.csv", act)
    expected = pairwise_distance_matrix(acts).to_json()
    (DATA / "demo_activations_expected.json").write_text(json.dumps(expected, indent=2) + "\n")
    print(f"planted top-1: {bundle.metadata['generator']['planted_best']}")


if __name__ == "__main__":
    main()
