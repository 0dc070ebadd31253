import logging
from functools import cached_property
from pathlib import Path

import numpy as np

from ldplab.config import CurveSpec, EventSpec, SpaceSpec
from ldplab.dirichlet import SpectralCache, build_spectral_cache
from ldplab.energy import Curve, EuclideanContext, GraphContext, build_curve
from ldplab.fdd import CylinderEvent, TimePartition, make_event
from ldplab.metric import DistanceTable, distance_matrix, resolve_region
from ldplab.space import Region, StateSpace, check_vertex, validate_space

logger = logging.getLogger(__name__)


class Lab:
    """A state space with its spectral cache and distance table, built on first use and shared by every probe."""

    def __init__(self, space: StateSpace, progress_bar: bool = False):
        self.space = space
        self.progress_bar = progress_bar
        report = validate_space(space)
        if not report.passed:
            logger.warning("space failed validation: %s", "; ".join(report.issues))

    @classmethod
    def from_spec(cls, spec: SpaceSpec, progress_bar: bool = False) -> "Lab":
        return cls(spec.build(), progress_bar)

    @classmethod
    def load(cls, path: str | Path, progress_bar: bool = False) -> "Lab":
        return cls.from_spec(SpaceSpec.load(path), progress_bar)

    @cached_property
    def cache(self) -> SpectralCache:
        return build_spectral_cache(self.space)

    @cached_property
    def table(self) -> DistanceTable:
        return distance_matrix(self.space, progress_bar=self.progress_bar)

    def vertex(self, value) -> int:
        """Integers are vertex indices, anything else is a point mapped to its nearest vertex."""
        if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
            return check_vertex(self.space, value)
        return self.space.nearest_vertex(value)

    def region(self, spec) -> Region:
        return resolve_region(self.space, spec, self.table)

    def event(self, spec: EventSpec | dict) -> CylinderEvent:
        spec = EventSpec.from_dict(spec) if isinstance(spec, dict) else spec
        if spec.times is not None:
            partition = TimePartition(tuple(spec.times))
        else:
            partition = TimePartition.uniform(spec.intervals)
        sets = [self.region(s) for s in spec.sets]
        return make_event(self.space, partition, sets, spec.initial_law, spec.description)

    def curve(self, spec: CurveSpec | dict) -> Curve:
        return make_curve(spec, self)


def make_curve(spec: CurveSpec | dict, lab: Lab | None = None) -> Curve:
    """Curves on "space" live on the lab's state space; Euclidean curves need no lab."""
    spec = CurveSpec.from_dict(spec) if isinstance(spec, dict) else spec
    if spec.context == "space":
        if lab is None:
            raise ValueError("a curve on a state space needs a space")
        context = GraphContext(lab.space, lab.table)
    else:
        if spec.dim is None:
            raise ValueError("euclidean curves need 'dim'")
        context = EuclideanContext(spec.dim)
    return build_curve(context, spec.descriptor, spec.resolution)
