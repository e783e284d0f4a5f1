"""Object birth/death management, applied only on key frames.

State rules, evaluated after matches are applied:
  1. an unmatched detection spawns a tentative object, confirmed at birth
     when its confidence exceeds c_confirm;
  2. a confirmed object demotes to tentative after more than l_demote
     consecutive missed key frames;
  3. a tentative object confirms after more than l_confirm consecutive hit
     key frames;
  4. a tentative object is deleted after more than l_delete consecutive
     missed key frames;
  5. deleted is absorbing and deleted objects leave the active set.

All comparisons are strict ("more than"). A demoted object keeps its id,
gallery, and accumulated miss count, so its deletion clock keeps running.
"""
from __future__ import annotations

from collections import deque

from .model import LifecycleState, TrackedObject, TrackerConfig


def apply_matches(objects, detections, result) -> list:
    """Fold an assignment into the objects (mutating them).

    Matched objects take the detection's box, append its feature to the
    gallery (the oldest entry falls out past capacity), and count a hit;
    unmatched objects count a miss and keep their box.
    """
    matched = dict(result.matches)
    for i, obj in enumerate(objects):
        if i in matched:
            det = detections[matched[i]]
            obj.bbox = det.bbox
            obj.gallery.append(det.feature)
            obj.hits += 1
            obj.misses = 0
        else:
            obj.misses += 1
            obj.hits = 0
    return objects


def manage_states(objects, unmatched_detections, cfg: TrackerConfig, id_source) -> tuple:
    """Run the state rules; returns (surviving objects, newborn objects).

    `id_source` is an iterator of fresh ids, strictly greater than any id
    handed out before.
    """
    survivors = []
    for obj in objects:
        # at most one transition per key frame keeps the state sequence
        # inside the relation {T->C, C->T, T->D} plus self-loops
        if obj.state is LifecycleState.CONFIRMED and obj.misses > cfg.l_demote:
            obj.state = LifecycleState.TENTATIVE
        elif obj.state is LifecycleState.TENTATIVE and obj.misses > cfg.l_delete:
            obj.state = LifecycleState.DELETED
        elif obj.state is LifecycleState.TENTATIVE and obj.hits > cfg.l_confirm:
            obj.state = LifecycleState.CONFIRMED
        if obj.state is not LifecycleState.DELETED:
            survivors.append(obj)
    newborns = []
    for det in unmatched_detections:
        state = LifecycleState.CONFIRMED if det.confidence > cfg.c_confirm else LifecycleState.TENTATIVE
        newborns.append(
            TrackedObject(
                id=next(id_source),
                bbox=det.bbox,
                state=state,
                gallery=deque([det.feature], maxlen=cfg.l_f),
                hits=1,
                misses=0,
            )
        )
    return survivors, newborns
