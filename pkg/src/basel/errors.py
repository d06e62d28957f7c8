"""Exception types raised across the package.

Every error carries enough structure (ids, indices, counts) to be acted on
programmatically; parsers and numeric routines never raise bare ValueError
for domain failures.
"""


class BaselError(Exception):
    """Base class for all package errors."""


# ---------------------------------------------------------------- graph

class DanglingReference(BaselError):
    def __init__(self, kind, ref_id):
        self.kind = kind
        self.ref_id = ref_id
        super().__init__(f"observation references unknown {kind} id {ref_id}")


class DuplicateObservation(BaselError):
    def __init__(self, camera_id, point_id):
        self.camera_id = camera_id
        self.point_id = point_id
        super().__init__(f"duplicate observation (camera {camera_id}, point {point_id})")


class UnobservedPoint(BaselError):
    def __init__(self, point_id):
        self.point_id = point_id
        super().__init__(f"point {point_id} has no observations")


class UnknownCamera(BaselError):
    def __init__(self, camera_id):
        self.camera_id = camera_id
        super().__init__(f"unknown camera id {camera_id}")


# ---------------------------------------------------------------- simulation

class InfeasibleConfig(BaselError):
    pass


# ---------------------------------------------------------------- parsing

class ParseError(BaselError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MalformedHeader(ParseError):
    pass


class CountMismatch(ParseError):
    def __init__(self, what, expected, got):
        self.what = what
        self.expected = expected
        self.got = got
        super().__init__(f"{what}: header promised {expected}, found {got}")


# ---------------------------------------------------------------- linear algebra

class NotPositiveDefinite(BaselError):
    def __init__(self, pivot):
        self.pivot = pivot
        super().__init__(f"matrix not positive definite (pivot {pivot})")


class SingularPointBlock(BaselError):
    def __init__(self, point_id):
        self.point_id = point_id
        super().__init__(f"point block {point_id} singular after regularization")


class NoFreeVariables(BaselError):
    pass


class PointBehindCamera(BaselError):
    def __init__(self, camera_id=None, point_id=None):
        self.camera_id = camera_id
        self.point_id = point_id
        super().__init__(f"point {point_id} behind camera {camera_id}")


class SingularSystem(BaselError):
    pass


# ---------------------------------------------------------------- selection

class TooLargeToEnumerate(BaselError):
    def __init__(self, n_subsets, cap):
        self.n_subsets = n_subsets
        self.cap = cap
        super().__init__(f"{n_subsets} subsets exceeds enumeration cap {cap}")


class EmptySubProblem(BaselError):
    pass


class EmptySubset(BaselError):
    pass


# ---------------------------------------------------------------- budget

class InsufficientSamples(BaselError):
    def __init__(self, needed, got):
        self.needed = needed
        self.got = got
        super().__init__(f"time-model fit needs >= {needed} distinct sizes, got {got}")


class NoVisiblePoints(BaselError):
    pass


# ---------------------------------------------------------------- warnings

class KTooLargeWarning(UserWarning):
    """Requested subset size exceeded the candidate pool and was clamped."""


class QuatNormWarning(UserWarning):
    """Parsed quaternion deviated from unit norm and was renormalized."""


class DegenerateVisibility(UserWarning):
    """Current visibility already at or below the acceptable minimum; the
    budget was clamped to its floor instead of going negative."""


class NonMonotoneFit(UserWarning):
    """Least-squares cubic was not increasing on the calibration range; an
    isotonic-then-cubic refit was substituted."""
