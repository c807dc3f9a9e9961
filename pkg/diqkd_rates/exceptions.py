"""All exceptions for all key-rate pipeline stages."""


# Configuration
class ConfigError(Exception):
    def __init__(self, message="Invalid configuration."):
        super().__init__(message)


# Ingestion (count tables, behavior JSON)
class IngestionError(Exception):
    def __init__(self, message="Could not ingest measurement statistics."):
        super().__init__(message)


class ReconstructionError(Exception):
    def __init__(
        self,
        message="Collins-Gisin coordinates lie outside the no-signaling polytope.",
    ):
        super().__init__(message)


# Preprocessing
class DegenerateDistributionError(Exception):
    def __init__(
        self,
        message="Retention probability p_V is zero: every key round is discarded.",
    ):
        super().__init__(message)


# Relaxation assembly
class AssemblyError(Exception):
    def __init__(self, message=None):
        super().__init__(message)


# Solver
class SolverFailure(Exception):
    def __init__(self, message="Conic solver failed to certify a value.", solution=None):
        super().__init__(message)
        self.solution = solution


class InfeasiblePinsError(SolverFailure):
    def __init__(
        self,
        message=(
            "Pinned behavior admits no moment-matrix certificate at this level. "
            "Project the raw frequencies onto the quantum set first."
        ),
        solution=None,
    ):
        super().__init__(message, solution=solution)


ALL_PIPELINE_EXCEPTIONS = (
    ConfigError,
    IngestionError,
    ReconstructionError,
    DegenerateDistributionError,
    AssemblyError,
    SolverFailure,
)

# CLI exit codes. Subclasses resolve through the MRO.
EXIT_CODES = {
    ConfigError: 2,
    IngestionError: 3,
    ReconstructionError: 3,
    DegenerateDistributionError: 3,
    AssemblyError: 4,
    SolverFailure: 4,
}


def exit_code(exc):
    for cls in type(exc).__mro__:
        if cls in EXIT_CODES:
            return EXIT_CODES[cls]
    return 1
