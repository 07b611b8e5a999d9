"""E-prop delay learning: raw sensor costs -> delays, gated by eligibility."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError, InvariantError
from .lattice import (INTRAVERSABLE, MAX_DELAY, MIN_DELAY, CostLayerSet, DelayField,
                      NodeId, NormalizationParams)
from .swp import WaveResult, extract_path

LEARNING_RATE = 0.5


@dataclass(frozen=True)
class CostObservation:
    node: NodeId
    layer: str
    raw: float

    def __post_init__(self):
        if not math.isfinite(self.raw):
            raise InputError(f"non-finite observation {self.raw} for {self.layer}")
        if self.layer == "obstacle" and not 0.0 <= self.raw <= 1.0:
            raise InputError(f"obstacle fraction {self.raw} outside [0, 1]")


def normalize_cost(raw: float, params: NormalizationParams) -> int:
    """Clamp ``raw`` to the calibrated bounds and map it onto an integer in 1..10."""
    if not math.isfinite(raw):
        raise InputError(f"non-finite raw cost {raw}")
    x = min(max(raw, params.lower), params.upper)
    scaled = MIN_DELAY + (MAX_DELAY - MIN_DELAY) * (x - params.lower) / (params.upper - params.lower)
    return int(math.floor(scaled + 0.5))


def eprop_update(layer: DelayField, node: NodeId, m: float, e: float,
                 delta: float = LEARNING_RATE) -> DelayField:
    """Move every delay into ``node`` toward ``m`` by ``delta * e`` of the gap (in place)."""
    node = layer.grid.check_node(node)
    if not MIN_DELAY <= m <= MAX_DELAY:
        raise InputError(f"target cost {m} outside [1, 10]")
    if not 0.0 <= e <= 1.0:
        raise InputError(f"eligibility {e} outside [0, 1]")
    if not 0.0 < delta <= 1.0:
        raise InputError(f"learning rate {delta} outside (0, 1]")
    row = layer.values[node[0], node[1]]
    edges = layer.grid.edge_mask[node[0], node[1]]
    row[edges] = row[edges] + delta * e * (m - row[edges])
    return layer


def mark_intraversable(layer: DelayField, node: NodeId) -> DelayField:
    """Pin every delay into ``node`` to the maximum (in place)."""
    node = layer.grid.check_node(node)
    edges = layer.grid.edge_mask[node[0], node[1]]
    layer.values[node[0], node[1], edges] = MAX_DELAY
    return layer


def apply_traversal_update(layers: CostLayerSet, record, wave: WaveResult,
                           delta: float = LEARNING_RATE) -> CostLayerSet:
    """Apply one executed path's observations to the layers (in place).

    Each successfully reached node updates its incoming delays in every
    observed layer with the eligibility it had when the wave hit the goal.
    A failed segment marks its target intraversable; nothing after it is
    observed.
    """
    if not record.segments:
        return layers
    planned = extract_path(wave)
    visited = [record.segments[0].src] + [s.dst for s in record.segments]
    if planned[:len(visited)] != visited:
        raise InputError("traversal record does not follow the wave's path")
    e = wave.eligibility
    for seg in record.segments:
        if not wave.spiked(seg.dst):
            raise InvariantError(f"{seg.dst} was not part of the wave")
        if not seg.success:
            mark_intraversable(layers[INTRAVERSABLE], seg.dst)
            continue
        el = float(e[seg.dst])
        for obs in seg.observations.values():
            if obs.layer not in layers.layers:
                continue
            params = layers.norms.get(obs.layer)
            if params is None:
                raise InputError(f"layer {obs.layer!r} has no normalization parameters")
            eprop_update(layers[obs.layer], seg.dst, normalize_cost(obs.raw, params), el, delta)
    layers.validate()
    return layers


def costmap_mse(field: DelayField, reference: DelayField) -> float:
    if field.grid != reference.grid:
        raise InputError("fields are on different grids")
    diff = field.edge_values() - reference.edge_values()
    return float(np.mean(diff * diff)) if diff.size else 0.0


def layers_mse(layers: CostLayerSet, reference: CostLayerSet) -> float:
    """MSE over every edge of every layer, the two sets stacked in the same order."""
    if layers.grid != reference.grid or list(layers.layers) != list(reference.layers):
        raise InputError("layer sets do not match")
    diff = layers.stacked() - reference.stacked()
    return float(np.mean(diff * diff))
