import os

from hypothesis import HealthCheck, settings

# single-core CI boxes are slow; keep property tests meaningful but bounded
settings.register_profile(
    "default",
    max_examples=int(os.environ.get("NONHOLO_HYPOTHESIS_EXAMPLES", "40")),
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")
