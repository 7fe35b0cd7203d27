import numpy as np
import pytest

from mvlatent.synthdata import (InvalidSpecError, SynthSpec, generate, recoverability_check,
                                write_dataset)
from mvlatent import ingest


def test_counts():
    ds = generate(SynthSpec(n_sensors=3, clips_per_sensor=4, d=8, n_frames=2))
    assert len(ds.manifest) == 12
    for s in ("s00", "s01", "s02"):
        assert sum(r.sensor_id == s for r in ds.manifest) == 4


def test_noise_free_single_label_frames():
    spec = SynthSpec(n_sensors=3, n_sources=4, d=8, n_frames=5, clips_per_sensor=6,
                     max_labels_per_clip=1, noise_sigma=0.0, seed=2)
    ds = generate(spec)
    distinct = set()
    for r in ds.manifest:
        v = ds.latents[r.clip_id].values
        (label,) = r.source_labels
        expected = ds.sensor_prototypes[ds.sensor_index(r.sensor_id)] + \
            ds.source_prototypes[ds.source_index(label)]
        assert np.allclose(v, expected, atol=1e-6)
        assert np.all(v == v[0])
        distinct.add(v[0].tobytes())
    assert len(distinct) <= spec.n_sensors * spec.n_sources


def test_prototypes_unit_norm():
    ds = generate(SynthSpec(n_sensors=4, d=16, clips_per_sensor=2, n_frames=1))
    assert np.allclose(np.linalg.norm(ds.sensor_prototypes, axis=1), 1, atol=1e-6)
    assert np.allclose(np.linalg.norm(ds.source_prototypes, axis=1), 1, atol=1e-6)


def test_label_counts_within_bounds():
    ds = generate(SynthSpec(n_sensors=3, clips_per_sensor=50, d=8, n_frames=1, max_labels_per_clip=3))
    sizes = {len(r.source_labels) for r in ds.manifest}
    assert sizes <= {1, 2, 3} and len(sizes) > 1


def test_seed_determinism():
    a = generate(SynthSpec(seed=7, clips_per_sensor=5))
    b = generate(SynthSpec(seed=7, clips_per_sensor=5))
    assert [r.to_json() for r in a.manifest] == [r.to_json() for r in b.manifest]
    assert all(np.array_equal(a.latents[k].values, b.latents[k].values) for k in a.latents)
    assert a.digest() == b.digest()
    assert generate(SynthSpec(seed=8, clips_per_sensor=5)).digest() != a.digest()


@pytest.mark.parametrize("kw", [dict(n_sensors=1), dict(n_sources=1), dict(clips_per_sensor=1),
                                dict(noise_sigma=-0.1), dict(d=7), dict(max_labels_per_clip=0)])
def test_invalid_specs(kw):
    with pytest.raises(InvalidSpecError):
        generate(SynthSpec(**kw))


def test_residual_in_source_span():
    ds = generate(SynthSpec(n_sensors=4, n_sources=5, d=16, n_frames=3, clips_per_sensor=10,
                            noise_sigma=0.0, seed=3))
    p = ds.source_prototypes.T.astype(np.float64)
    for r in ds.manifest:
        resid = ds.latents[r.clip_id].values.mean(axis=0) - ds.sensor_prototypes[ds.sensor_index(r.sensor_id)]
        coef, *_ = np.linalg.lstsq(p, resid, rcond=None)
        assert np.linalg.norm(p @ coef - resid) < 1e-5


def _nearest_prototype_oracle(ds):
    """Brute force: try every (sensor, label set) combination against each clip mean."""
    from itertools import combinations
    spec = ds.spec
    combos = [frozenset(c) for k in range(1, spec.max_labels_per_clip + 1)
              for c in combinations(range(spec.n_sources), k)]
    hits_sensor = hits_source = 0
    for r in ds.manifest:
        x = ds.latents[r.clip_id].values.mean(axis=0)
        best = min(((s, c) for s in range(spec.n_sensors) for c in combos),
                   key=lambda sc: np.linalg.norm(
                       x - ds.sensor_prototypes[sc[0]] - ds.source_prototypes[list(sc[1])].sum(0)))
        hits_sensor += best[0] == ds.sensor_index(r.sensor_id)
        hits_source += best[1] == frozenset(ds.source_index(l) for l in r.source_labels)
    return hits_sensor / len(ds.manifest), hits_source / len(ds.manifest)


def test_noise_free_recoverable():
    ds = generate(SynthSpec(n_sensors=5, n_sources=4, d=16, n_frames=2, clips_per_sensor=20,
                            max_labels_per_clip=2, noise_sigma=0.0, seed=1))
    assert _nearest_prototype_oracle(ds) == (1.0, 1.0)
    acc, jac = recoverability_check(ds)
    assert acc == 1.0 and jac == 1.0


def test_shuffled_labels_near_chance():
    ds = generate(SynthSpec(n_sensors=4, clips_per_sensor=150, d=32, n_frames=2, seed=2))
    accs = [recoverability_check(ds, shuffle_seed=s)[0] for s in range(5)]
    assert abs(np.mean(accs) - 1 / 4) <= 0.1


def test_default_spec_recoverable():
    acc, jac = recoverability_check(generate(SynthSpec()))
    assert acc >= 0.98 and jac >= 0.98


def test_write_dataset_round_trip(tmp_path):
    ds = generate(SynthSpec(n_sensors=2, clips_per_sensor=3, d=4, n_frames=2))
    manifest = write_dataset(ds, tmp_path)
    recs = ingest.load_manifest(manifest)
    lat = ingest.load_latents(recs)
    assert all(lat[k].values.tobytes() == ds.latents[k].values.tobytes() for k in ds.latents)
