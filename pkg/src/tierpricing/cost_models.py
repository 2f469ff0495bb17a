"""Distance- and label-based cost models.

Each model maps a flow to a dimensionless relative cost f(d); realized
unit costs are c = gamma * f(d), where gamma is fitted so the blended
rate is the rational uniform price. Relative costs include the base
term beta/gamma where the model has one, so a single gamma scaling
yields the final cost.

Four models:

* linear:    f(d) = d + theta * d_max           (base = theta * d_max)
* concave:   f(d) = max(eps, a*log_b(d/d_max) + c) + theta * base_ref
* regional:  metro -> 1, national -> 2**theta, international -> 3**theta
* dest-type: f(d) = d * m, customer m=1, peer m=2, unlabeled
             m = theta*1 + (1-theta)*2 (theta = customer traffic share)
"""

from __future__ import annotations

import math
from dataclasses import replace
from typing import Sequence

import numpy as np

from .domain import CostKind, CostModelSpec, DomainError, FlowRecord, NonPositiveCost

# Clamp for the concave pre-base cost at tiny normalized distances.
CONCAVE_EPS = 0.05
# Relative floor protecting 1/c weights from blowup at d = 0.
COST_FLOOR_REL = 1e-6

METRO_MAX_MILES = 10.0
NATIONAL_MAX_MILES = 100.0


def classify_region(flow: FlowRecord) -> str:
    """Region of a flow: the explicit label if present, else by distance
    (< 10 miles metro, < 100 national, international beyond)."""
    if flow.region is not None:
        return flow.region
    if flow.distance_miles < METRO_MAX_MILES:
        return "metro"
    if flow.distance_miles < NATIONAL_MAX_MILES:
        return "national"
    return "international"


def dest_type_multiplier(flow: FlowRecord, theta: float) -> float:
    """Destination-type cost multiplier: customer 1, peer 2, or the
    expected mixture theta*1 + (1-theta)*2 when the label is absent."""
    if flow.dest_type == "customer":
        return 1.0
    if flow.dest_type == "peer":
        return 2.0
    return theta * 1.0 + (1.0 - theta) * 2.0


def relative_cost(spec: CostModelSpec, flow: FlowRecord, d_max: float) -> float:
    """Pre-gamma relative cost of one flow, including the base term.

    ``d_max`` must be the maximum distance over the flow set; it anchors
    the concave normalization and the linear/concave base cost.
    """
    d = flow.distance_miles
    if spec.kind is CostKind.LINEAR:
        return d + spec.theta * d_max
    if spec.kind is CostKind.CONCAVE:
        return _concave_pre_base(spec, d, d_max) + spec.theta * _concave_base_ref(spec)
    if spec.kind is CostKind.REGIONAL:
        region = classify_region(flow)
        return {"metro": 1.0, "national": 2.0 ** spec.theta,
                "international": 3.0 ** spec.theta}[region]
    return d * dest_type_multiplier(flow, spec.theta)


def _concave_pre_base(spec: CostModelSpec, d: float, d_max: float) -> float:
    if d_max <= 0:
        return spec.concave_c
    norm = d / d_max
    if norm <= 0:
        return CONCAVE_EPS
    raw = spec.concave_a * math.log(norm, spec.concave_b) + spec.concave_c
    return max(CONCAVE_EPS, raw)

def _concave_base_ref(spec: CostModelSpec) -> float:
    # pre-base cost at d = d_max, where the shape fit is anchored
    return max(CONCAVE_EPS, spec.concave_c)


def relative_costs(spec: CostModelSpec, flows: Sequence[FlowRecord]) -> np.ndarray:
    """Relative costs for a flow set, floored at 1e-6 of the maximum.

    Raises NonPositiveCost when the configuration yields no positive
    cost at all (e.g. all distances zero with theta = 0).
    """
    if not flows:
        return np.empty(0)
    d_max = max(f.distance_miles for f in flows)
    rel = np.array([relative_cost(spec, f, d_max) for f in flows])
    top = rel.max()
    if not top > 0:
        raise NonPositiveCost(f"{spec.kind.value} cost model produced no positive cost")
    return np.maximum(rel, COST_FLOOR_REL * top)


def realize_costs(rel, gamma: float) -> np.ndarray:
    """Unit costs c_i = gamma * rel_i, floored at 1e-6 of the maximum."""
    c = gamma * np.asarray(rel, dtype=float)
    if c.size == 0:
        return c
    top = c.max()
    if not top > 0:
        raise NonPositiveCost("realized costs are not positive")
    return np.maximum(c, COST_FLOOR_REL * top)


def with_fit(spec: CostModelSpec, flows: Sequence[FlowRecord], gamma: float) -> CostModelSpec:
    """Copy of ``spec`` carrying the fitted gamma and the derived base
    cost beta = theta * gamma * (maximum pre-base relative cost); zero
    for the label-based models, which have no base term."""
    if spec.kind is CostKind.LINEAR:
        base_ref = max(f.distance_miles for f in flows)
    elif spec.kind is CostKind.CONCAVE:
        base_ref = _concave_base_ref(spec)
    else:
        base_ref = 0.0
    return replace(spec, gamma=gamma, beta=spec.theta * gamma * base_ref)


def class_labels(spec: CostModelSpec, flows: Sequence[FlowRecord]) -> list[str | None]:
    """Bundling class of each flow under this cost model.

    Regional pricing classes by region, destination-type pricing by the
    explicit label (None when unlabeled); distance-only models have no
    classes.
    """
    if spec.kind is CostKind.REGIONAL:
        return [classify_region(f) for f in flows]
    if spec.kind is CostKind.DEST_TYPE:
        return [f.dest_type for f in flows]
    return [None] * len(flows)


def split_by_dest_type(flows: Sequence[FlowRecord], theta: float) -> list[FlowRecord]:
    """Split unlabeled flows into customer/peer subflows.

    theta is the customer share of each flow's traffic; the complement
    goes to peers. Labeled flows pass through unchanged. Used when the
    class-constrained bundler needs pure destination-type classes.
    """
    if not 0.0 <= theta <= 1.0:
        raise DomainError(f"customer share theta must be in [0,1], got {theta}")
    out: list[FlowRecord] = []
    for f in flows:
        if f.dest_type is not None:
            out.append(f)
            continue
        if theta > 0.0:
            out.append(FlowRecord(f.flow_id + "/cust", theta * f.demand_mbps,
                                  f.distance_miles, f.region, "customer"))
        if theta < 1.0:
            out.append(FlowRecord(f.flow_id + "/peer", (1.0 - theta) * f.demand_mbps,
                                  f.distance_miles, f.region, "peer"))
    return out
