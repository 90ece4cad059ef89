from .manifest import BenchmarkManifest, run_benchmark
from .profiles import ProfileRuntime, load_profile, resolve_profile_name
from .service import create_app

__all__ = [
    "BenchmarkManifest",
    "ProfileRuntime",
    "create_app",
    "load_profile",
    "resolve_profile_name",
    "run_benchmark",
]
