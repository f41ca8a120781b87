"""Reference implementations used only by the tests.

They are written from the algorithm descriptions on plain tuples, without
importing the package code paths they check.
"""

from __future__ import annotations

from fractions import Fraction


def box_iou(a, b):
    ax1, ay1, ax2, ay2 = a
    bx1, by1, bx2, by2 = b
    w = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    h = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = w * h
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    if union <= 0.0 or inter <= 0.0:
        return 0.0
    return inter / union


def wbf_trace(per_model, weights, iou_thr, skip_thr):
    """Straight-line Weighted Boxes Fusion.

    per_model: list (one per model) of lists of
        (box tuple, score, category_id, source_index).
    Returns list of (box tuple, score, category_id, sorted member ids).
    """
    n = len(per_model)
    # 1. normalize weights to mean 1
    mean = sum(weights) / n
    w = [x / mean for x in weights]
    # 2-3. skip on raw score, then weight
    entries = []
    for m in range(n):
        for box, score, cat, idx in per_model[m]:
            if score >= skip_thr:
                entries.append((score * w[m], m, idx, cat, box))
    results = []
    # 4. per category
    for cat in sorted({e[3] for e in entries}):
        # 5. sort
        pool = sorted((e for e in entries if e[3] == cat), key=lambda e: (-e[0], e[1], e[2]))
        members = []
        boxes = []
        for e in pool:
            # 6. best cluster strictly above threshold, lowest index on ties
            best_k, best_v = None, None
            for k in range(len(members)):
                v = box_iou(e[4], boxes[k])
                if v > iou_thr and (best_v is None or v > best_v):
                    best_k, best_v = k, v
            if best_k is None:
                members.append([e])
                best_k = len(members) - 1
                boxes.append(None)
            else:
                members[best_k].append(e)
            # 7. recompute the fused box
            ms = members[best_k]
            tot = sum(x[0] for x in ms)
            if tot > 0:
                boxes[best_k] = tuple(sum(x[0] * x[4][c] for x in ms) / tot for c in range(4))
            elif boxes[best_k] is None:
                boxes[best_k] = ms[0][4]
        # 8. rescale
        for k, ms in enumerate(members):
            t = len(ms)
            raw = sum(x[0] for x in ms) / t
            score = min(1.0, max(0.0, raw * min(t, n) / n))
            box = tuple(min(1.0, max(0.0, c)) for c in boxes[k])
            results.append((box, score, cat, [(x[1], x[2]) for x in ms], (ms[0][1], ms[0][2])))
    results.sort(key=lambda r: (-r[1],) + r[4])
    return [r[:4] for r in results]


THRESHOLDS = [Fraction(50 + 5 * i, 100) for i in range(10)]


def _greedy_match(dets, gts, thr):
    """dets: list of (score, source_index, box); gts: list of boxes.
    Returns flags aligned with dets sorted by (-score, source_index)."""
    order = sorted(range(len(dets)), key=lambda i: (-dets[i][0], dets[i][1]))
    used = set()
    flags = {}
    for i in order:
        choice = None
        best = -1.0
        for j, g in enumerate(gts):
            if j in used:
                continue
            v = box_iou(dets[i][2], g)
            if v >= thr and v > best:
                choice, best = j, v
        if choice is not None:
            used.add(choice)
        flags[i] = choice is not None
    return flags


def _ap_exact(flags, n_gt):
    """101-point AP with exact rational recall/precision."""
    if not flags:
        return Fraction(0)
    pts = []
    tp = 0
    for k, f in enumerate(flags, start=1):
        tp += f
        pts.append((Fraction(tp, n_gt), Fraction(tp, k)))
    total = Fraction(0)
    for i in range(101):
        r = Fraction(i, 100)
        cands = [p for rc, p in pts if rc >= r]
        total += max(cands) if cands else 0
    return total / 101


def coco_brute(gt_boxes, dets):
    """Exhaustive AP/AR.

    gt_boxes: {(image_id, cat): [box, ...]}
    dets: list of (image_id, cat, score, source_index, box)
    Returns (ap_50_95, ap_50, ap_75, ar_50_95) on the x100 scale.
    """
    cats = sorted({c for (_, c), v in gt_boxes.items() if v})
    if not cats:
        return (0.0, 0.0, 0.0, 0.0)
    ap = {}
    ar = {}
    for c in cats:
        n_gt = sum(len(v) for (i, cc), v in gt_boxes.items() if cc == c)
        images = sorted({i for (i, cc) in gt_boxes if cc == c} | {d[0] for d in dets if d[1] == c})
        for t_index, thr in enumerate(THRESHOLDS):
            pooled = []
            for img in images:
                mine = [(d[2], d[3], d[4]) for d in dets if d[0] == img and d[1] == c]
                mine = sorted(mine, key=lambda d: (-d[0], d[1]))[:100]
                flags = _greedy_match(mine, gt_boxes.get((img, c), []), float(thr))
                for i, d in enumerate(mine):
                    pooled.append((d[0], d[1], img, flags[i]))
            pooled.sort(key=lambda p: (-p[0], p[1], p[2]))
            fl = [p[3] for p in pooled]
            ap[c, t_index] = _ap_exact(fl, n_gt)
            ar[c, t_index] = Fraction(sum(fl), n_gt)
    n = len(cats)
    ap_all = sum(ap.values()) / (10 * n)
    ar_all = sum(ar.values()) / (10 * n)
    ap50 = sum(ap[c, 0] for c in cats) / n
    ap75 = sum(ap[c, 5] for c in cats) / n
    return tuple(float(100 * v) for v in (ap_all, ap50, ap75, ar_all))
