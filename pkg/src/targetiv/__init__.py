"""Identification machinery for multivalued treatments with discrete targeting
instruments: ARUM simulation oracle, response-class enumeration, point and
partial identification, filtered designs, and resampling inference."""

from .errors import (AssumptionViolated, DesignViolated, InvalidInput, InvalidModel,
                     ParseError, RankDeficient, TargetivError, WeakIdentification)
from .model import (NEG_INF, CompositeResponseVector, ModelSpec, MomentTable,
                    ResponseVector, apply_filter_vector, relative_means)
from .targeting import (AssumptionVerdict, ClassSpec, TargetingStructure, count_classes,
                        derive_targeting, enumerate_classes, excluded_groups,
                        kirkeboen_equivalence_check)

__version__ = "0.1.0"
