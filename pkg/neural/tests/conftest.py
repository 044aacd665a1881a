import subprocess
import sys

import pytest


def make_suite(outdir, suite="organs", cases=4, seed=901, dims=(32, 32, 32)):
    """Phantom suites come from the evaluation harness CLI (the package's
    external dataset interface)."""
    subprocess.run(
        [
            sys.executable, "-m", "petprompt", "phantom",
            "--suite", suite, "--cases", str(cases), "--seed", str(seed),
            "--dims", *(str(d) for d in dims), "--out", str(outdir),
        ],
        check=True,
        capture_output=True,
    )
    return outdir / "manifest.json"


@pytest.fixture(scope="session")
def small_suite(tmp_path_factory):
    out = tmp_path_factory.mktemp("suite")
    return make_suite(out, cases=4, seed=901)
