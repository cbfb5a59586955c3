"""Exception hierarchy for flowfactor.

Library code raises these; only the CLI turns them into exit codes.
"""

from __future__ import annotations


class FlowFactorError(Exception):
    """Base class. ``stage`` names the pipeline stage that failed."""

    def __init__(
        self,
        message: str,
        *,
        stage: str = "",
        fragment: int | None = None,
    ) -> None:
        super().__init__(message)
        self.stage = stage
        self.fragment = fragment

    def with_context(self, *, stage: str | None = None, fragment: int | None = None) -> FlowFactorError:
        """Attach stage/fragment info (keeps values already set)."""
        if stage and not self.stage:
            self.stage = stage
        if fragment is not None and self.fragment is None:
            self.fragment = fragment
        return self

    def __str__(self) -> str:
        msg = super().__str__()
        tags = []
        if self.stage:
            tags.append(f"stage={self.stage}")
        if self.fragment is not None:
            tags.append(f"fragment={self.fragment}")
        return f"[{', '.join(tags)}] {msg}" if tags else msg


class GridError(FlowFactorError, ValueError):
    """Invalid grid shape or non-finite samples."""


class InvalidDiffeoError(FlowFactorError, ValueError):
    """A displacement field that is not a near-identity diffeomorphism."""


class FlowError(FlowFactorError, RuntimeError):
    """Integration produced an invalid flow map."""


class MapInversionError(FlowFactorError, RuntimeError):
    """Newton inversion of a map did not converge."""


class ChartError(FlowFactorError, RuntimeError):
    """Rectifying chart could not be built."""


class NonHyperbolicError(FlowFactorError, ValueError):
    """Seed profile fails the hyperbolicity margin on the box."""


class FrameError(FlowFactorError, RuntimeError):
    """No frame with acceptable conditioning was found."""


class FixPointError(FlowFactorError, RuntimeError):
    """Point-fixing Newton failed; the fragment is too large."""


class FragmentError(FlowFactorError, ValueError):
    """Fragmentation rejected the input or produced an invalid piece."""


class ConjugationError(FlowFactorError, RuntimeError):
    """A conjugated factor list does not reproduce the factor it replaces."""


class ConvergenceError(FlowFactorError, RuntimeError):
    """Newton solve did not reach its residual target."""

    def __init__(self, message: str, *, history: list[float] | None = None, **kwargs) -> None:
        super().__init__(message, **kwargs)
        self.history = list(history or [])


class InputError(FlowFactorError, ValueError):
    """Malformed input file. ``offset`` is a byte offset when known."""

    def __init__(self, message: str, *, offset: int | None = None, **kwargs) -> None:
        super().__init__(message, **kwargs)
        self.offset = offset
