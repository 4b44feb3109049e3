import subprocess
import sys

import pytest

CFG = """
model.name = pauli
model.x = 0.5 0.5 0.0
initial.state = plus
run.engine = roqj_p
run.dt = 0.01
run.t_max = 1.5
run.n_traj = 300
run.seed = 314159
run.sample_stride = 15
observables = re_rho:0:1
output.states = sim.csv
output.exact = exact.csv
output.realizations = 1
exact.dt_exact = 0.001
"""


@pytest.fixture(scope="session")
def csv_pair(tmp_path_factory):
    """Scaled-down eternal-qubit CSV pair, produced through the CLI interface."""
    out = tmp_path_factory.mktemp("csv_pair")
    cfg = out / "run.cfg"
    cfg.write_text(CFG)
    for command in ("run", "exact"):
        proc = subprocess.run(
            [sys.executable, "-m", "roqj", command, "--config", str(cfg), "--out-dir", str(out)],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0, proc.stderr
    return out / "sim.csv", out / "exact.csv", out / "realization_0.csv"
