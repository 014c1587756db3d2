"""Reference linear soft-NMS: plain loops, full rescans, no early exits."""

from __future__ import annotations

from mlfpn.head import Detection


def _iou(a, b) -> float:
    iw = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    ih = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = iw * ih
    area_a = max(0.0, a[2] - a[0]) * max(0.0, a[3] - a[1])
    area_b = max(0.0, b[2] - b[0]) * max(0.0, b[3] - b[1])
    union = area_a + area_b - inter
    return inter / union if union > 0 else 0.0


def soft_nms_oracle(cands, iou_thresh=0.3, cutoff=0.01, top_k=None, class_id=0) -> list[Detection]:
    """``cands`` is a sequence of ``(box, score)``; box = (x1, y1, x2, y2)."""
    boxes = [tuple(float(v) for v in box) for box, _ in cands]
    scores = [float(s) for _, s in cands]
    done = [False] * len(cands)
    emitted = []
    for _ in range(len(cands)):
        best = -1
        for j in range(len(cands)):
            if not done[j] and (best < 0 or scores[j] > scores[best]):
                best = j
        done[best] = True
        emitted.append((best, scores[best]))
        for j in range(len(cands)):
            if not done[j]:
                ov = _iou(boxes[best], boxes[j])
                if ov >= iou_thresh:
                    scores[j] = scores[j] * (1.0 - ov)
    dets = [Detection(class_id, s, boxes[j]) for j, s in emitted if s >= cutoff]
    return dets if top_k is None else dets[:top_k]
