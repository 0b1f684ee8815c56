import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from waitinfo.corpus import generate_corpus  # noqa: E402
from waitinfo.train import TrainConfig, train  # noqa: E402

EVAL_SEED = 999
SKEW_SEEDS = (0, 1, 2, 3, 4)
SKEW_STEPS = 2000


@pytest.fixture(scope="session")
def copy_run():
    """Default-config copy-task training, shared by the desk-scale checks."""
    config = TrainConfig(task="copy", log_every=100)
    start = time.perf_counter()
    model, records = train(config)
    return {"config": config, "model": model, "records": records,
            "train_seconds": time.perf_counter() - start,
            "eval": generate_corpus("copy", config.eval_size, EVAL_SEED)}


@pytest.fixture(scope="session")
def skew_runs():
    runs = []
    start = time.perf_counter()
    for seed in SKEW_SEEDS:
        config = TrainConfig(task="skewed-copy", seed=seed, corpus_seed=1 + seed, steps=SKEW_STEPS, log_every=500)
        model, records = train(config)
        runs.append({"seed": seed, "config": config, "model": model, "records": records})
    eval_pairs = generate_corpus("skewed-copy", 100, EVAL_SEED)
    return {"runs": runs, "eval": eval_pairs, "train_seconds": time.perf_counter() - start}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        rep.criterion = marker.args


def pytest_terminal_summary(terminalreporter):
    status, details = {}, {}
    for reports in terminalreporter.stats.values():
        for rep in reports:
            crit = getattr(rep, "criterion", None)
            if crit is None:
                continue
            ok = status.get(crit, True) and not rep.failed
            status[crit] = ok
            detail = dict(getattr(rep, "user_properties", [])).get("detail")
            if detail:
                details[crit] = detail
    if not status:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(status):
        number, title = crit
        tag = "PASS" if status[crit] else "FAIL"
        terminalreporter.write_line(f"{tag}  [{number:>2}] {title}  {details.get(crit, '')}".rstrip())
