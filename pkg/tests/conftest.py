import os

from hypothesis import HealthCheck, settings

# single-core CI box: keep property runs short and free of wall-clock deadlines
settings.register_profile("ci", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=400, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))


import time  # noqa: E402
from dataclasses import replace  # noqa: E402

import pytest  # noqa: E402


class DefaultRun:
    """Self-supervised stages on the default synthetic dataset, run once per session.

    Downstream evaluations are computed on first use and cached, so the
    acceptance suite and the long-run property tests share one training run.
    """

    def __init__(self, seed=0):
        from trafficmae.pipeline import ExperimentConfig, prepare

        self.cfg = ExperimentConfig.from_dict({"seed": seed, "output_dir": "unused", "synthetic": {}})
        start = time.process_time()
        self.state = prepare(self.cfg)
        self.prepare_seconds = time.process_time() - start
        self._arms = {}
        self._purity = None

    def purity(self, k=5):
        from trafficmae.pipeline import purity_report

        if self._purity is None:
            start = time.process_time()
            report = purity_report(self.state, ["entities", "quantities", "mae", "concat"], [k],
                                   self.cfg.protocol.exclude_labels)
            self._purity = ({s: v["p_c"][0] for s, v in report.items()}, time.process_time() - start)
        return self._purity

    def arm(self, arm, classifier="mlp"):
        from trafficmae.pipeline import evaluate_arms

        key = (arm, classifier)
        if key not in self._arms:
            protocol = replace(self.cfg.protocol, classifier=classifier)
            _, (result,) = evaluate_arms(self.state, [arm], protocol)
            self._arms[key] = result
        return self._arms[key]


@pytest.fixture(scope="session")
def default_run():
    return DefaultRun()
