import numpy as np
import pytest

from refprior.io import DataFormatError, read_observed, read_state, write_observed, write_state
from refprior.model import Dynamics, ModelConfig, NuisanceParams, default_model, simulate_dynamics


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_observed_round_trip_is_exact(tmp_path):
    model = default_model(A=3, T=5)
    data = model.simulate(NuisanceParams(0.2, 0.4, 1.3), np.random.default_rng(0))
    write_observed(data, tmp_path / "catches.csv", tmp_path / "indices.csv")
    back = read_observed(tmp_path / "catches.csv", tmp_path / "indices.csv")
    assert back.Istar.tobytes() == data.Istar.tobytes()
    assert back.Cstar.tobytes() == data.Cstar.tobytes()
    assert (tmp_path / "catches.csv").read_text().splitlines()[0] == "t,cstar"
    assert (tmp_path / "indices.csv").read_text().splitlines()[0] == "t,a,istar"


def test_state_round_trip(tmp_path):
    cfg = ModelConfig(A=2, T=4, M=0.2, dynamics=Dynamics.BARANOV)
    state = simulate_dynamics(cfg, [100.0, 50.0], np.full((2, 4), 0.1), seed=0)
    write_state(state, tmp_path / "latent.csv", tmp_path / "state.csv")
    back = read_state(tmp_path / "latent.csv", tmp_path / "state.csv")
    for name in ("N", "F", "C", "Jtilde"):
        assert getattr(back, name).tobytes() == getattr(state, name).tobytes()


def test_rows_in_any_order(tmp_path):
    c = _write(tmp_path / "c.csv", "t,cstar\n2,20\n1,10\n")
    i = _write(tmp_path / "i.csv", "t,a,istar\n2,1,4\n1,1,1\n1,2,2\n2,2,8\n")
    data = read_observed(c, i)
    np.testing.assert_array_equal(data.Cstar, [10, 20])
    np.testing.assert_array_equal(data.Istar, [[1, 4], [2, 8]])


@pytest.mark.parametrize("catches, indices, match", [
    ("t,c\n1,1\n", "t,a,istar\n1,1,1\n", "header"),
    ("t,cstar\n0,1\n", "t,a,istar\n1,1,1\n", "1-based"),
    ("t,cstar\n1,1\n1,2\n", "t,a,istar\n1,1,1\n", "duplicate"),
    ("t,cstar\n1,1\n3,2\n", "t,a,istar\n1,1,1\n", "gaps"),
    ("t,cstar\n1,x\n", "t,a,istar\n1,1,1\n", "numeric"),
    ("t,cstar\n1,1\n2,1\n", "t,a,istar\n1,1,1\n2,1,1\n1,2,1\n", "rectangular"),
    ("t,cstar\n1,1\n2,1\n", "t,a,istar\n1,1,1\n2,1,1\n2,1,3\n", "duplicate"),
    ("t,cstar\n1,1\n", "t,a,istar\n1,1\n", "fields"),
    ("t,cstar\n1,1\n2,1\n", "t,a,istar\n1,1,1\n", "T="),
])
def test_strict_validation(tmp_path, catches, indices, match):
    c = _write(tmp_path / "c.csv", catches)
    i = _write(tmp_path / "i.csv", indices)
    with pytest.raises(DataFormatError, match=match):
        read_observed(c, i)


def test_missing_file(tmp_path):
    with pytest.raises(DataFormatError, match="not found"):
        read_observed(tmp_path / "nope.csv", tmp_path / "nope2.csv")
