"""Command-line interface: ``polyslot <command> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
Outputs are written only after all work succeeded.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np
import yaml
from PIL import Image

from . import __version__
from ._validation import InvalidSlotError
from .camera import CalibrationError, load_rig
from .dataset import (AnnotationError, LabeledFrame, augment, convert_ps20, parse_ps20_export,
                      read_annotations, write_annotations)
from .decode import DEFAULT_CONF_THRESHOLD, DEFAULT_NMS_IOU, decode, polygon_nms, read_raw_prediction
from .evaluation import compute_report, entrance_accuracy, match_frame
from .geometry import PolygonSlot, SlotType, validate_slot
from .loss import LossWeights, fit_polygon, polygon_loss
from .render import OverlayStyle, render_overlay
from .topview import TopviewSpec, build_remap_table, synthesize_topview

logger = logging.getLogger("polyslot")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# -- helpers -------------------------------------------------------------------

def _fmt(x) -> str:
    text = f"{float(x):.6f}"
    return "0.000000" if text == "-0.000000" else text


def _fmt_vec(values) -> str:
    return " ".join(_fmt(v) for v in np.ravel(values))


def _atomic_write(path, write) -> None:
    """Call ``write(tmp_path)`` and move the result into place."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=path.suffix or ".tmp",
                               dir=path.parent if str(path.parent) else ".")
    os.close(fd)
    try:
        write(tmp)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _check_output_dir(path) -> None:
    parent = Path(path).resolve().parent
    if not parent.is_dir():
        raise UsageError(f"output directory does not exist: {parent}")


def _require_file(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"file not found: {p}")
    return p


def _load_rgb(path) -> np.ndarray:
    p = _require_file(path)
    try:
        with Image.open(p) as im:
            return np.asarray(im.convert("RGB"))
    except OSError as exc:
        raise UsageError(f"cannot read image {p}: {exc}") from None


def _save_png(path, array) -> None:
    _atomic_write(path, lambda tmp: Image.fromarray(array).save(tmp, format="PNG"))


def _parse_slot(text: str, what: str) -> PolygonSlot:
    """Slot from a JSON literal or a file holding one.

    Accepted: ``[x1, y1, ..., x4, y4]``, ``[[x1, y1], ...]`` or an object with
    ``corners`` and optional ``type``/``confidence``.
    """
    if not text.lstrip().startswith(("[", "{")):
        text = _require_file(text).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{what}: not valid JSON ({exc.msg})") from None
    kind, conf = SlotType.PERPENDICULAR, 1.0
    if isinstance(data, dict):
        kind = SlotType.parse(data.get("type", "perpendicular"))
        conf = float(data.get("confidence", 1.0))
        data = data.get("corners")
    try:
        corners = np.asarray(data, dtype=float).reshape(4, 2)
    except (TypeError, ValueError):
        raise UsageError(f"{what}: expected 8 corner coordinates") from None
    slot = PolygonSlot(corners, kind, conf)
    validate_slot(slot)
    return slot


def _spec_arg(text: str) -> TopviewSpec:
    try:
        return TopviewSpec.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _unit(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"{v} is outside [0, 1]")
    return v


def _color(text: str) -> tuple:
    try:
        parts = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad color {text!r}; use R,G,B") from None
    if len(parts) != 3 or not all(0 <= v <= 255 for v in parts):
        raise argparse.ArgumentTypeError(f"bad color {text!r}; use R,G,B in 0..255")
    return parts


def _print_loss(lb) -> None:
    print(f"giou_term: {_fmt(lb.giou_term)}")
    print(f"dist_term: {_fmt(lb.dist_term)}")
    print(f"total: {_fmt(lb.total)}")
    print(f"gradient: {_fmt_vec(lb.gradient)}")


# -- commands ------------------------------------------------------------------

def cmd_topview(args) -> int:
    rig_path = _require_file(args.rig)
    rig = load_rig(rig_path)
    if len(args.images) != len(rig):
        raise UsageError(
            f"rig defines {len(rig)} cameras ({', '.join(c.name for c in rig)}) "
            f"but {len(args.images)} images were given")
    images = [_load_rgb(p) for p in args.images]
    _check_output_dir(args.output)
    table = build_remap_table(rig, args.spec, feather=args.feather)
    out = synthesize_topview(table, images)
    _save_png(args.output, out)
    print(f"wrote {args.output} ({args.spec.width}x{args.spec.height}, "
          f"coverage {_fmt(table.coverage_fraction)})")
    return EXIT_OK


def _select_frame(frames, image_path, index):
    if index is not None:
        if not 0 <= index < len(frames):
            raise UsageError(f"--frame {index} out of range (file has {len(frames)} frames)")
        return frames[index]
    if len(frames) == 1:
        return frames[0]
    name = Path(image_path).name
    hits = [f for f in frames if Path(f.image_path).name == name]
    if len(hits) != 1:
        raise UsageError(f"cannot pick a frame for {name}; use --frame")
    return hits[0]


def cmd_render(args) -> int:
    image = _load_rgb(args.image)
    frames = read_annotations(_require_file(args.annotations))
    slots = _select_frame(frames, args.image, args.frame).slots if frames else []
    style = OverlayStyle(args.polygon_color, args.entrance_color, args.text_color,
                         args.line_width, not args.no_angle, not args.no_confidence)
    _check_output_dir(args.output)
    out = render_overlay(image, slots, style)
    _save_png(args.output, out)
    print(f"wrote {args.output} ({len(slots)} slots)")
    return EXIT_OK


def _weights(args) -> LossWeights:
    return LossWeights(args.w_giou, args.w_dist)


def cmd_loss(args) -> int:
    gt = _parse_slot(args.gt, "--gt")
    pred = _parse_slot(args.pred, "--pred")
    _print_loss(polygon_loss(pred, gt, _weights(args), scale=args.scale))
    return EXIT_OK


def cmd_fit(args) -> int:
    gt = _parse_slot(args.gt, "--gt")
    init = _parse_slot(args.init, "--init")
    if args.output:
        _check_output_dir(args.output)
    history = fit_polygon(gt, init, _weights(args), args.steps, args.lr,
                          momentum=args.momentum, backtrack=not args.no_backtrack,
                          scale=args.scale)
    final = history[-1]
    err = np.max(np.hypot(*(final.slot - gt.corners).T))
    print(f"steps: {len(history) - 1}")
    print(f"initial_loss: {_fmt(history[0].loss.total)}")
    _print_loss(final.loss)
    print(f"corner_max_error: {_fmt(err)}")
    print(f"corners: {_fmt_vec(final.slot)}")
    if args.output:
        rec = {"corners": [round(float(v), 6) for v in final.slot.reshape(-1)],
               "type": gt.slot_type.value, "confidence": 1.0}
        _atomic_write(args.output, lambda tmp: Path(tmp).write_text(json.dumps(rec) + "\n"))
    return EXIT_OK


def cmd_decode(args) -> int:
    raw, head = read_raw_prediction(_require_file(args.raw))
    _check_output_dir(args.output)
    slots = decode(raw, head, args.conf)
    if not args.no_nms:
        slots = polygon_nms(slots, args.iou)
    spec = args.spec or TopviewSpec()
    frame = LabeledFrame(args.image or Path(args.raw).stem, slots, spec)
    _atomic_write(args.output, lambda tmp: write_annotations([frame], tmp))
    print(f"decoded {len(slots)} slots")
    return EXIT_OK


def cmd_nms(args) -> int:
    frames = read_annotations(_require_file(args.input))
    _check_output_dir(args.output)
    out = [f.replace(slots=polygon_nms(f.slots, args.iou)) for f in frames]
    _atomic_write(args.output, lambda tmp: write_annotations(out, tmp))
    kept = sum(len(f.slots) for f in out)
    print(f"kept {kept} of {sum(len(f.slots) for f in frames)} slots")
    return EXIT_OK


def cmd_augment(args) -> int:
    ann = _require_file(args.input)
    frames = read_annotations(ann)
    _check_output_dir(args.output)
    root = Path(args.image_root) if args.image_root else ann.parent
    if args.image_out and not Path(args.image_out).is_dir():
        raise UsageError(f"--image-out directory does not exist: {args.image_out}")
    gains = tuple(args.gains) if args.gains else None
    rng = np.random.default_rng(args.seed)
    out, images = [], []
    for frame in frames:
        if args.image_out:
            frame = frame.replace(image=frame.load_image(root))
        seed = int(rng.integers(2**63))
        res = augment(frame, args.op, seed, angle=args.angle, gains=gains, margin=args.margin,
                      max_angle=args.max_angle)
        if args.image_out:
            name = f"{Path(frame.image_path).stem}_{args.op}.png"
            images.append((Path(args.image_out) / name, res.image))
            res = res.replace(image_path=name, image=None)
        out.append(res)
    for path, img in images:
        _save_png(path, img)
    _atomic_write(args.output, lambda tmp: write_annotations(out, tmp))
    print(f"augmented {len(out)} frames with {args.op}")
    return EXIT_OK


def _key(frame) -> str:
    return Path(frame.image_path).as_posix()


def cmd_eval(args) -> int:
    gts = read_annotations(_require_file(args.gt))
    preds = read_annotations(_require_file(args.pred))
    by_name = {}
    for f in preds:
        if _key(f) in by_name:
            raise UsageError(f"{args.pred}: frame {_key(f)} appears twice")
        by_name[_key(f)] = f.slots
    seen, frames, names = set(), [], []
    for f in gts:
        if _key(f) in seen:
            raise UsageError(f"{args.gt}: frame {_key(f)} appears twice")
        seen.add(_key(f))
        frames.append((by_name.get(_key(f), []), f.slots))
        names.append(_key(f))
    for name, slots in by_name.items():
        if name not in seen:
            logger.warning("prediction frame %s has no ground truth; counted as false positives",
                           name)
            frames.append((slots, []))
            names.append(name)
    report = compute_report(frames, args.conf, names=names)
    correct = total = 0
    for p, g in frames:
        p = [s for s in p if s.confidence >= args.conf]
        m = match_frame(p, g, 0.5)
        correct += entrance_accuracy(m, p, g, args.angle_tol) * len(m.pairs)
        total += len(m.pairs)
    sys.stdout.write(report.to_text(per_frame=args.per_frame))
    print(f"entrance_accuracy: {_fmt(correct / total if total else 0.0)}")
    return EXIT_OK


def cmd_convert_ps20(args) -> int:
    records = parse_ps20_export(_require_file(args.input))
    _check_output_dir(args.output)
    frame = convert_ps20(records, args.image or Path(args.input).stem + ".jpg",
                         args.image_size, args.px_per_meter)
    _atomic_write(args.output, lambda tmp: write_annotations([frame], tmp))
    print(f"converted {len(frame.slots)} of {len(records)} slots")
    return EXIT_OK


# -- parser ---------------------------------------------------------------------

def _add_weights(p) -> None:
    p.add_argument("--w-giou", type=float, default=1.0,
                   help="weight of the (1 - corner GIoU) term (unitless, default 1.0)")
    p.add_argument("--w-dist", type=float, default=0.75,
                   help="weight of the mean corner distance term (per pixel, default 0.75)")
    p.add_argument("--scale", type=float, default=1.0,
                   help="divide corner distances by this many pixels (default 1.0)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polyslot", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log debug messages")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("topview", help="stitch four camera images into a topview PNG")
    p.add_argument("rig", help="rig calibration YAML file")
    p.add_argument("images", nargs="+", help="camera images, in the rig's camera order")
    p.add_argument("-o", "--output", required=True, help="output PNG path")
    p.add_argument("--spec", type=_spec_arg, default=TopviewSpec(),
                   help="raster as WxH:METERS or WxH:MXxMY (pixels : meters, "
                        "default 640x640:25x25)")
    p.add_argument("--feather", type=float, default=0.5,
                   help="seam blending band width in meters (default 0.5)")
    p.set_defaults(func=cmd_topview)

    p = sub.add_parser("render", help="draw slot overlays on a topview image")
    p.add_argument("image", help="topview PNG")
    p.add_argument("annotations", help="annotation file (JSON Lines)")
    p.add_argument("-o", "--output", required=True, help="output PNG path")
    p.add_argument("--frame", type=int, default=None,
                   help="index of the annotation frame to draw (default: match by image name)")
    p.add_argument("--polygon-color", type=_color, default=(0, 0, 255),
                   help="outline color as R,G,B (0..255, default blue)")
    p.add_argument("--entrance-color", type=_color, default=(0, 255, 0),
                   help="entrance line color as R,G,B (0..255, default green)")
    p.add_argument("--text-color", type=_color, default=(0, 0, 255),
                   help="label color as R,G,B (0..255, default blue)")
    p.add_argument("--line-width", type=int, default=2, help="line width in pixels (default 2)")
    p.add_argument("--no-angle", action="store_true", help="omit entrance angle labels (degrees)")
    p.add_argument("--no-confidence", action="store_true", help="omit confidence labels")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("loss", help="evaluate the polygon regression loss for one slot pair")
    p.add_argument("--gt", required=True, help="ground-truth slot: JSON literal or file (pixels)")
    p.add_argument("--pred", required=True, help="predicted slot: JSON literal or file (pixels)")
    _add_weights(p)
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("fit", help="fit a slot to a target by gradient descent on the loss")
    p.add_argument("--gt", required=True, help="target slot: JSON literal or file (pixels)")
    p.add_argument("--init", required=True, help="initial slot: JSON literal or file (pixels)")
    p.add_argument("--steps", type=int, default=500, help="iterations (default 500)")
    p.add_argument("--lr", type=float, default=0.05, help="learning rate (default 0.05)")
    p.add_argument("--momentum", type=float, default=0.0,
                   help="heavy-ball momentum in [0, 1) (default 0)")
    p.add_argument("--no-backtrack", action="store_true",
                   help="plain descent: accept every step, stop with an error on divergence")
    p.add_argument("-o", "--output", help="write the fitted slot as JSON")
    _add_weights(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("decode", help="decode a raw head tensor into slots")
    p.add_argument("raw", help="float32 tensor file with a <file>.hdr header next to it")
    p.add_argument("-o", "--output", required=True, help="output annotation file")
    p.add_argument("--conf", type=_unit, default=DEFAULT_CONF_THRESHOLD,
                   help="confidence threshold in [0, 1] (default 0.25)")
    p.add_argument("--iou", type=_unit, default=DEFAULT_NMS_IOU,
                   help="NMS IoU threshold in [0, 1] (default 0.45)")
    p.add_argument("--no-nms", action="store_true", help="skip non-maximum suppression")
    p.add_argument("--image", help="image name recorded in the output (default: tensor stem)")
    p.add_argument("--spec", type=_spec_arg, default=None,
                   help="topview raster recorded in the output (default 640x640:25x25)")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("nms", help="polygon NMS over every frame of an annotation file")
    p.add_argument("input", help="annotation file with confidences")
    p.add_argument("-o", "--output", required=True, help="output annotation file")
    p.add_argument("--iou", type=_unit, default=DEFAULT_NMS_IOU,
                   help="suppress when polygon IoU exceeds this, in [0, 1] (default 0.45)")
    p.set_defaults(func=cmd_nms)

    p = sub.add_parser("augment", help="apply one augmentation to every frame")
    p.add_argument("input", help="annotation file")
    p.add_argument("-o", "--output", required=True, help="output annotation file")
    p.add_argument("--op", required=True, choices=["flip_lr", "flip_ud", "rotate", "hsv"])
    p.add_argument("--angle", type=float, default=None,
                   help="rotation in degrees, counterclockwise as displayed "
                        "(default: random in [0, --max-angle])")
    p.add_argument("--max-angle", type=float, default=25.0,
                   help="upper bound of random rotations in degrees (default 25)")
    p.add_argument("--gains", type=float, nargs=3, metavar=("DH", "DS", "DV"),
                   help="HSV gains as fractions (default: random within 0.015 0.7 0.4)")
    p.add_argument("--margin", type=float, default=0.1,
                   help="keep rotated slots within this fraction of the raster size "
                        "outside it (default 0.1)")
    p.add_argument("--image-root", help="directory holding the frame images "
                                        "(default: the annotation file's directory)")
    p.add_argument("--image-out", help="also transform images and write them to this directory")
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("gt", help="ground-truth annotation file")
    p.add_argument("pred", help="prediction annotation file with confidences")
    p.add_argument("--conf", type=_unit, default=0.25,
                   help="confidence operating point for P/R/F1, in [0, 1] (default 0.25)")
    p.add_argument("--angle-tol", type=float, default=5.0,
                   help="entrance angle tolerance in degrees (default 5)")
    p.add_argument("--per-frame", action="store_true", help="append per-frame TP/FP/FN counts")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("convert-ps20", help="convert a PS2.0 text export to an annotation file")
    p.add_argument("input", help="export with lines 'x1 y1 x2 y2 angle_deg type' (pixels, degrees)")
    p.add_argument("-o", "--output", required=True, help="output annotation file")
    p.add_argument("--image", help="image name recorded in the output (default: <stem>.jpg)")
    p.add_argument("--image-size", type=int, default=600, help="image size in pixels (default 600)")
    p.add_argument("--px-per-meter", type=float, default=60.0,
                   help="image scale in pixels per meter (default 60)")
    p.set_defaults(func=cmd_convert_ps20)
    return parser


_VALIDATION_ERRORS = (UsageError, AnnotationError, CalibrationError, InvalidSlotError,
                      FileNotFoundError, ValueError, yaml.YAMLError)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except _VALIDATION_ERRORS as exc:
        print(f"polyslot {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # anything else is a runtime failure
        logger.debug("traceback", exc_info=True)
        print(f"polyslot {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
