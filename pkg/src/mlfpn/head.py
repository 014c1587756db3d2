"""SSD-style prediction stage on the pyramid and its post-processing."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from mlfpn.config import ANCHORS_PER_CELL, NUM_SCALES, NetworkConfig
from mlfpn.errors import ConsistencyError, ShapeError
from mlfpn.pipeline import forward_pyramid
from mlfpn.tensor import conv2d

log = logging.getLogger(__name__)

ASPECT_RATIOS = (1.0, 2.0, 0.5)
S_FIRST = 0.1
S_MIN, S_MAX = 0.2, 0.9
S_EXTRA = 1.05


class AnchorBox(NamedTuple):
    cx: float
    cy: float
    w: float
    h: float


@dataclass(frozen=True)
class Detection:
    class_id: int
    score: float
    box: tuple


def anchor_scales(cfg: NetworkConfig) -> list[float]:
    """Seven box sizes; scale ``k`` uses entries ``k`` and ``k + 1`` (0-based).

    The largest map gets 0.1, the other five are spaced linearly from 0.2
    to 0.9, and 1.05 closes the last scale. From 800 input upwards the
    largest map keeps its 320-input size in pixels.
    """
    m = NUM_SCALES - 1
    sizes = [S_FIRST] + [S_MIN + (S_MAX - S_MIN) * k / (m - 1) for k in range(m)] + [S_EXTRA]
    if cfg.input_size >= 800:
        sizes[0] = S_FIRST * 320 / cfg.input_size
    return sizes


def generate_anchors(cfg: NetworkConfig, grids: list[int] | None = None) -> np.ndarray:
    """Prior boxes as an (N, 4) float64 array of (cx, cy, w, h).

    Order: scale, then row-major cell, then ratio, then size.
    """
    grids = cfg.scale_sizes if grids is None else grids
    sizes = anchor_scales(cfg)
    out = []
    for k, f in enumerate(grids):
        shapes = []
        for r in ASPECT_RATIOS:
            for s in (sizes[k], math.sqrt(sizes[k] * sizes[k + 1])):
                h = s / math.sqrt(r)
                shapes.append((h * r, h))
        shapes = np.array(shapes)
        centers = (np.arange(f) + 0.5) / f
        cy, cx = np.meshgrid(centers, centers, indexing="ij")
        block = np.empty((f, f, len(shapes), 4))
        block[..., 0] = cx[..., None]
        block[..., 1] = cy[..., None]
        block[..., 2] = shapes[:, 0]
        block[..., 3] = shapes[:, 1]
        out.append(block.reshape(-1, 4))
    anchors = np.concatenate(out)
    if cfg.clip_anchors:
        np.clip(anchors, 0.0, 1.0, out=anchors)
    return anchors


def _flatten(pred: np.ndarray, per_anchor: int) -> np.ndarray:
    n = pred.shape[0]
    return pred.transpose(0, 2, 3, 1).reshape(n, -1, per_anchor)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits.astype(np.float64) - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def head_forward(pyramid: list, model, anchors: np.ndarray | None = None):
    """Per-scale loc/conf convs; returns ``(loc (n, N, 4), conf (n, N, K))``.

    ``conf`` holds per-anchor softmax posteriors (float64).
    """
    k = model.cfg.num_classes
    locs, confs = [], []
    for level in pyramid:
        i = level.scale_index
        x = level.features
        locs.append(_flatten(conv2d(x, model.conv(f"head.scale{i}.loc"), f"head.scale{i}.loc"), 4))
        confs.append(_flatten(conv2d(x, model.conv(f"head.scale{i}.conf"), f"head.scale{i}.conf"), k))
    loc, conf = np.concatenate(locs, axis=1), softmax(np.concatenate(confs, axis=1))
    expected = len(generate_anchors(model.cfg)) if anchors is None else len(anchors)
    if loc.shape[1] != expected:
        raise ConsistencyError(f"head produced {loc.shape[1]} predictions for {expected} anchors")
    return loc, conf


def decode_boxes(loc: np.ndarray, anchors: np.ndarray, variances=(0.1, 0.1, 0.2, 0.2)):
    """SSD offset decoding to clipped corner boxes.

    Returns ``(boxes (N, 4), valid (N,))``; rows whose offsets or decoded
    extents are non-finite are flagged invalid and logged.
    """
    if len(loc) != len(anchors):
        raise ShapeError(f"decode_boxes: {len(loc)} offsets for {len(anchors)} anchors")
    t = np.asarray(loc, dtype=np.float64)
    a = np.asarray(anchors, dtype=np.float64)
    v0, v1, v2, v3 = variances
    with np.errstate(over="ignore", invalid="ignore"):
        cx = a[:, 0] + t[:, 0] * v0 * a[:, 2]
        cy = a[:, 1] + t[:, 1] * v1 * a[:, 3]
        w = a[:, 2] * np.exp(t[:, 2] * v2)
        h = a[:, 3] * np.exp(t[:, 3] * v3)
        boxes = np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=1)
    valid = np.isfinite(t).all(axis=1) & np.isfinite(boxes).all(axis=1)
    if not valid.all():
        bad = np.flatnonzero(~valid)
        log.warning("rejecting %d anchors with non-finite offsets (first: %d)", len(bad), bad[0])
        boxes[~valid] = 0.0
    np.clip(boxes, 0.0, 1.0, out=boxes)
    return boxes, valid


def filter_scores(conf: np.ndarray, threshold: float = 0.05, top: int = 1000, valid=None) -> dict:
    """Per foreground class, anchors scoring above ``threshold``, best ``top`` first.

    Returns ``{class_id: (anchor_indices, scores)}`` for non-empty classes;
    equal scores keep anchor order.
    """
    out = {}
    for c in range(1, conf.shape[1]):
        col = conf[:, c]
        keep = col > threshold
        if valid is not None:
            keep &= valid
        idx = np.flatnonzero(keep)
        if idx.size == 0:
            continue
        order = np.argsort(-col[idx], kind="stable")[:top]
        idx = idx[order]
        out[c] = (idx, col[idx])
    return out


def iou_one_to_many(box: np.ndarray, boxes: np.ndarray) -> np.ndarray:
    """IoU of one corner box against many; zero-area unions give 0."""
    iw = np.maximum(0.0, np.minimum(box[2], boxes[:, 2]) - np.maximum(box[0], boxes[:, 0]))
    ih = np.maximum(0.0, np.minimum(box[3], boxes[:, 3]) - np.maximum(box[1], boxes[:, 1]))
    inter = iw * ih
    area_a = max(0.0, box[2] - box[0]) * max(0.0, box[3] - box[1])
    area_b = np.maximum(0.0, boxes[:, 2] - boxes[:, 0]) * np.maximum(0.0, boxes[:, 3] - boxes[:, 1])
    union = area_a + area_b - inter
    out = np.zeros(len(boxes))
    pos = union > 0
    out[pos] = inter[pos] / union[pos]
    return out


def soft_nms_linear(
    boxes,
    scores,
    iou_thresh: float = 0.3,
    final_cutoff: float = 0.01,
    top_k: int | None = 200,
    class_id: int = 0,
) -> list[Detection]:
    """Linear-kernel soft-NMS over one class.

    Repeatedly emits the highest-scoring remaining box M (lowest index on
    ties) and multiplies every remaining score by ``1 - IoU(M, b)`` where
    the overlap reaches ``iou_thresh``. Emitted scores below
    ``final_cutoff`` are dropped.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    cur = np.array(scores, dtype=np.float64)
    alive = np.ones(len(cur), dtype=bool)
    dets = []
    for _ in range(len(cur)):
        m = int(np.argmax(np.where(alive, cur, -np.inf)))
        score = cur[m]
        if score < final_cutoff:
            # Scores never increase, so nothing left can pass the cutoff.
            break
        alive[m] = False
        dets.append(Detection(class_id, float(score), tuple(float(v) for v in boxes[m])))
        if top_k is not None and len(dets) >= top_k:
            break
        rest = np.flatnonzero(alive)
        if rest.size == 0:
            break
        iou = iou_one_to_many(boxes[m], boxes[rest])
        hit = iou >= iou_thresh
        cur[rest[hit]] *= 1.0 - iou[hit]
    return dets


def postprocess(loc: np.ndarray, conf: np.ndarray, anchors: np.ndarray, cfg: NetworkConfig,
                score_thresh: float | None = None) -> list[Detection]:
    """Decode, filter and suppress the predictions of a single image."""
    thresh = cfg.score_thresh if score_thresh is None else score_thresh
    boxes, valid = decode_boxes(loc, anchors, cfg.variances)
    valid &= (boxes[:, 2] > boxes[:, 0]) & (boxes[:, 3] > boxes[:, 1])
    dets = []
    for c, (idx, scores) in filter_scores(conf, thresh, cfg.pre_nms_top, valid).items():
        dets.extend(
            soft_nms_linear(boxes[idx], scores, cfg.iou_thresh, cfg.final_cutoff, cfg.top_k, c)
        )
    dets.sort(key=lambda d: (-d.score, d.class_id))
    return dets[: cfg.top_k]


def detect(image: np.ndarray, model, score_thresh: float | None = None) -> list[list[Detection]]:
    """Full pipeline from image batch to per-image detections."""
    pyramid = forward_pyramid(image, model)
    anchors = generate_anchors(model.cfg)
    loc, conf = head_forward(pyramid, model, anchors)
    return [
        postprocess(loc[b], conf[b], anchors, model.cfg, score_thresh) for b in range(image.shape[0])
    ]


def detections_to_json(per_image: list[list[Detection]]) -> str:
    rows = [
        {"image": i, "class_id": d.class_id, "score": d.score, "box": list(d.box)}
        for i, dets in enumerate(per_image)
        for d in dets
    ]
    rows.sort(key=lambda r: (r["image"], -r["score"], r["class_id"]))
    return json.dumps(rows)
