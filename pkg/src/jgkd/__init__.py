"""Joint-grained multi-teacher knowledge distillation at desk scale.

A self-contained pipeline: synthetic form-page corpus (plus a loader for
published form-annotation JSON), small frozen token/entity teachers, a
joint-grained encoder/decoder student, five distillation loss families,
and an experiment harness with ablation grids and report emission. All
gradients come from the in-package tape-based autodiff engine and are
verifiable against central finite differences (`jgkd selfcheck`).
"""

__version__ = "0.1.0"


def __getattr__(name):
    # submodules are importable lazily: jgkd.autodiff, jgkd.corpus, ...
    import importlib
    if name in ("autodiff", "checkpoint", "cli", "config", "corpus", "errors",
                "harness", "losses", "metrics", "nn", "report", "selfcheck",
                "student", "teachers"):
        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
