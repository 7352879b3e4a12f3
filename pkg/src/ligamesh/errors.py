"""Exception and warning types raised across the package."""


class LigameshError(Exception):
    """Base class for all errors raised by ligamesh."""


class EmptyMesh(LigameshError):
    pass


class InvalidMesh(LigameshError):
    """A mesh violates the indexed-triangle invariants."""


class NonFiniteVertex(LigameshError):
    pass


class NonManifoldEdge(LigameshError):
    pass


class InconsistentOrientation(LigameshError):
    pass


class AmbiguousAxis(LigameshError):
    pass


class DegenerateNormal(LigameshError):
    pass


class RankTooLarge(LigameshError):
    pass


class SingularKernel(LigameshError):
    pass


class DimensionMismatch(LigameshError):
    pass


class InconsistentTopology(LigameshError):
    pass


class MissingLandmark(LigameshError):
    def __init__(self, label: str):
        super().__init__(label)
        self.label = label


class DegenerateQuad(LigameshError):
    pass


class SelfIntersection(LigameshError):
    pass


class InvertedElement(LigameshError):
    pass


class ConfigInvalid(LigameshError):
    pass


class EmptyInput(LigameshError):
    pass


class NonConvergence(UserWarning):
    """Optimizer hit its iteration cap; the best-so-far result is returned."""
