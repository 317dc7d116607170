"""Exception types raised by the solvers and file readers.

Slot numbers carried by exceptions are 1-based, matching ``t = 1..T`` in the
time-series files.
"""


class StackgridError(Exception):
    """Base class for all package errors."""


class NonpositiveTildeW(StackgridError, ValueError):
    """Adjusted supply ``w + a1`` is not strictly positive in some slot."""

    def __init__(self, slots, values=None):
        self.slots = tuple(int(s) for s in slots)
        self.values = None if values is None else [float(v) for v in values]
        shown = ", ".join(str(s) for s in self.slots[:10])
        if len(self.slots) > 10:
            shown += ", ..."
        super().__init__(f"adjusted supply w~(t) <= 0 at slot(s) {shown}")


# clause code -> what it constrains
CLAUSES = {
    "12": "zero-cost rule bounds",
    "13": "renewable coverage bounds",
    "14": "renewable energy balance",
    "17": "forecast rule bounds",
}


class ConditionViolation(StackgridError):
    """A sufficient condition for a closed-form equilibrium does not hold.

    ``clause`` is a short code (see ``CLAUSES``); ``slots`` are 1-based.
    """

    def __init__(self, clause, slots=(), detail=""):
        self.clause = str(clause)
        self.slots = tuple(int(s) for s in slots)
        msg = f"{CLAUSES.get(self.clause, 'condition ' + self.clause)} violated"
        if self.slots:
            msg += " at slot(s) " + ", ".join(str(s) for s in self.slots)
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class InfeasibleBounds(StackgridError, ValueError):
    """The box and total-demand constraints admit no feasible point."""


class MaxIterExceeded(StackgridError, RuntimeError):
    """An iterative solver stopped before reaching its tolerance.

    The partial trace (and the last iterate, when available) are attached so
    callers can report best-found results.
    """

    def __init__(self, message, trace=None, last=None):
        super().__init__(message)
        self.trace = trace
        self.last = last


class GridTooLarge(StackgridError, ValueError):
    """Requested brute-force grid exceeds the enumeration guard."""


class InputError(StackgridError, ValueError):
    """Malformed or invalid input file content."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
