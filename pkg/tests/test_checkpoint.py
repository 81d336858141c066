import json

import numpy as np
import pytest

from cvdisc.ard import ArdState
from cvdisc.checkpoint import (CheckpointError, ModelCheckpoint, checkpoint_to_dict, dumps, load_checkpoint, loads,
                               save_checkpoint)
from cvdisc.dataio import ala2_topology
from cvdisc.laplace import LaplacePosterior
from cvdisc.vae import encode
from toys import random_vae


@pytest.fixture
def full_checkpoint():
    rng = np.random.default_rng(0)
    enc, dec = random_vae(66, (5, 4, 3), 2, rng)
    n_mean = int(dec.ard_mask().sum())
    return ModelCheckpoint(enc, dec, ArdState(1e-5, 1e-5, rng.uniform(0.1, 1e4, n_mean)),
                           LaplacePosterior(dec.flat, rng.uniform(1e-6, 1, dec.size), 3),
                           {"train": {"seed": 4}}, 4, ala2_topology(), {"epochs": 12, "converged": False})


def test_save_load_save_is_identical(tmp_path, full_checkpoint):
    p, q = tmp_path / "a.json", tmp_path / "b.json"
    save_checkpoint(p, full_checkpoint)
    back = load_checkpoint(p)
    save_checkpoint(q, back)
    assert p.read_bytes() == q.read_bytes()
    assert back.decoder.flat.tobytes() == full_checkpoint.decoder.flat.tobytes()
    assert back.encoder.flat.tobytes() == full_checkpoint.encoder.flat.tobytes()
    assert back.posterior.n_floored == 3 and back.topology.dihedrals == full_checkpoint.topology.dihedrals
    x = np.random.default_rng(1).normal(size=(3, 66))
    np.testing.assert_array_equal(encode(back.encoder, x).mu, encode(full_checkpoint.encoder, x).mu)
    z = np.ones((2, 2))
    np.testing.assert_array_equal(back.decoder.mean(z), full_checkpoint.decoder.mean(z))


def test_minimal_checkpoint_round_trip(full_checkpoint):
    ck = ModelCheckpoint(full_checkpoint.encoder, full_checkpoint.decoder)
    back = loads(dumps(ck))
    assert back.ard_state is None and back.posterior is None and back.topology is None
    assert dumps(back) == dumps(ck)


def test_document_layout(full_checkpoint):
    doc = checkpoint_to_dict(full_checkpoint)
    assert doc["format"] == "cvdisc-checkpoint" and doc["version"] == 1
    layer = doc["decoder"]["mean_net"][0]
    assert set(layer) >= {"in_dim", "out_dim", "activation", "weight", "bias"}
    assert "wall_time" not in doc["training"]


def test_rejects_bad_documents(full_checkpoint):
    doc = checkpoint_to_dict(full_checkpoint)
    del doc["version"]
    with pytest.raises(CheckpointError, match="version"):
        loads(json.dumps(doc))
    doc = checkpoint_to_dict(full_checkpoint)
    doc["version"] = 99
    with pytest.raises(CheckpointError, match="unsupported"):
        loads(json.dumps(doc))
    with pytest.raises(CheckpointError):
        loads("{not json")
    doc = checkpoint_to_dict(full_checkpoint)
    doc["laplace"]["mu"] = doc["laplace"]["mu"][:-1]
    doc["laplace"]["sigma_sq"] = doc["laplace"]["sigma_sq"][:-1]
    with pytest.raises(CheckpointError, match="Laplace"):
        loads(json.dumps(doc))
    doc = checkpoint_to_dict(full_checkpoint)
    doc["decoder"]["mean_net"][0]["bias"].append(0.0)
    with pytest.raises(CheckpointError):
        loads(json.dumps(doc))
    doc = checkpoint_to_dict(full_checkpoint)
    del doc["encoder"]
    with pytest.raises(CheckpointError, match="malformed"):
        loads(json.dumps(doc))
