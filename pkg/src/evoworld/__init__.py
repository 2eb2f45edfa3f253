"""evoworld: gradient-free training of pixel world-model agents.

A three-component agent (conv encoder -> LSTM memory -> linear controller)
is evolved end-to-end with a two-objective evolutionary algorithm whose
second objective, "age", shields individuals with freshly mutated upstream
components from selection pressure while the controller re-adapts.
"""

__version__ = "0.1.0"

from evoworld.nn import available_backends, backend_name  # noqa: F401
