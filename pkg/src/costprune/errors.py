"""Exception hierarchy; ``exit_code`` feeds the CLI's exit-code taxonomy."""


class CostPruneError(Exception):
    exit_code = 1


class DataError(CostPruneError):
    exit_code = 3


class SchemaError(DataError):
    """Malformed ensemble document or tree layout."""


class ModelDataMismatch(DataError):
    """Ensemble and dataset disagree (feature count, labels, sizes)."""


class SolverError(CostPruneError):
    exit_code = 4


class LPStallError(SolverError):
    """Simplex made no progress even under Bland's rule."""


class IntegralityError(SolverError):
    """An LP optimum of the pruning problem was not 0/1.

    The relaxation has only integral vertices, so this always means a solver
    bug or a corrupted problem.
    """


class OracleMismatch(CostPruneError):
    exit_code = 5
