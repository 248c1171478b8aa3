"""Scene layout: axis-aligned boxes with per-object prompts.

A Layout is the editable description of a scene: a global text prompt
plus one axis-aligned box per object, each with its own sub-prompt.
Layouts are parsed from and serialized to a JSON document and edited
through pure operations that return new Layout values.
"""

import json
from dataclasses import dataclass, field, replace
from typing import Any

from .errors import (
    InvariantViolation,
    LayoutSyntaxError,
    UnknownTarget,
    ValidationError,
)

__all__ = [
    "Box3",
    "Layout",
    "LayoutEdit",
    "Diagnostic",
    "parse_layout",
    "serialize_layout",
    "load_layout",
    "validate_layout",
    "apply_edit",
]

Vec3 = tuple[float, float, float]


def _vec3(value: Any, what: str) -> Vec3:
    try:
        x, y, z = value
        return (float(x), float(y), float(z))
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{what} must be a 3-vector, got {value!r}") from exc


@dataclass(frozen=True)
class Box3:
    """One object slot: an axis-aligned box in the global frame plus its prompt."""

    id: str
    center: Vec3
    half_extents: Vec3
    prompt: str = ""
    cache_ref: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "center", _vec3(self.center, f"box {self.id!r} center"))
        object.__setattr__(
            self, "half_extents", _vec3(self.half_extents, f"box {self.id!r} half_extents")
        )
        if not self.id:
            raise ValidationError("box id must be a non-empty string")
        for axis, h in zip("xyz", self.half_extents):
            if not h > 0:
                raise ValidationError(
                    f"box {self.id!r} half_extents.{axis} must be > 0, got {h}"
                )
        for axis, (c, h) in enumerate(zip(self.center, self.half_extents)):
            if abs(c) + h > 1.0:
                raise ValidationError(
                    f"box {self.id!r} exceeds the global frame [-1,1]^3 on axis "
                    f"{'xyz'[axis]}: |center| + half_extents = |{c}| + {h} > 1"
                )

    @property
    def volume(self) -> float:
        hx, hy, hz = self.half_extents
        return 8.0 * hx * hy * hz


@dataclass(frozen=True)
class Layout:
    """Global prompt, boxes, and the run seed."""

    global_prompt: str
    boxes: tuple[Box3, ...]
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))
        if not self.global_prompt:
            raise ValidationError("global_prompt must be non-empty")
        if not self.boxes:
            raise ValidationError("layout must contain at least one box")
        if self.seed < 0:
            raise ValidationError(f"seed must be a non-negative integer, got {self.seed}")
        seen = set()
        for box in self.boxes:
            if box.id in seen:
                raise ValidationError(f"duplicate box id {box.id!r}")
            seen.add(box.id)

    def box(self, box_id: str) -> Box3:
        for box in self.boxes:
            if box.id == box_id:
                return box
        raise UnknownTarget(f"no box with id {box_id!r}")

    def ids(self) -> list[str]:
        return [box.id for box in self.boxes]


@dataclass(frozen=True)
class LayoutEdit:
    """A single edit: move, scale, remove, set_prompt, or add."""

    kind: str
    target: str
    delta: Vec3 | None = None
    factors: Vec3 | None = None
    prompt: str | None = None
    box: Box3 | None = None

    @staticmethod
    def move(target: str, delta) -> "LayoutEdit":
        return LayoutEdit("move", target, delta=_vec3(delta, "move delta"))

    @staticmethod
    def scale(target: str, factors) -> "LayoutEdit":
        return LayoutEdit("scale", target, factors=_vec3(factors, "scale factors"))

    @staticmethod
    def remove(target: str) -> "LayoutEdit":
        return LayoutEdit("remove", target)

    @staticmethod
    def set_prompt(target: str, prompt: str) -> "LayoutEdit":
        return LayoutEdit("set_prompt", target, prompt=prompt)

    @staticmethod
    def add(box: Box3) -> "LayoutEdit":
        return LayoutEdit("add", box.id, box=box)


@dataclass(frozen=True)
class Diagnostic:
    """A non-fatal finding from validate_layout."""

    severity: str  # "warning" | "info"
    message: str
    box_ids: tuple[str, ...] = field(default=())


def parse_layout(text: str) -> Layout:
    """Parse a layout JSON document.

    Raises LayoutSyntaxError for malformed JSON and ValidationError when an
    invariant is violated (message names the box and field).
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise LayoutSyntaxError(f"layout document is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise LayoutSyntaxError("layout document must be a JSON object")
    unknown = set(doc) - {"global_prompt", "seed", "boxes"}
    if unknown:
        raise LayoutSyntaxError(f"unknown top-level keys: {sorted(unknown)}")
    raw_boxes = doc.get("boxes")
    if not isinstance(raw_boxes, list):
        raise LayoutSyntaxError("layout 'boxes' must be an array")
    boxes = []
    for i, raw in enumerate(raw_boxes):
        if not isinstance(raw, dict):
            raise LayoutSyntaxError(f"boxes[{i}] must be an object")
        unknown = set(raw) - {"id", "center", "half_extents", "prompt", "cache_ref"}
        if unknown:
            raise LayoutSyntaxError(f"boxes[{i}] has unknown keys: {sorted(unknown)}")
        try:
            boxes.append(
                Box3(
                    id=str(raw["id"]),
                    center=raw["center"],
                    half_extents=raw["half_extents"],
                    prompt=str(raw.get("prompt", "")),
                    cache_ref=raw.get("cache_ref"),
                )
            )
        except KeyError as exc:
            raise LayoutSyntaxError(f"boxes[{i}] is missing key {exc}") from exc
    return Layout(
        global_prompt=str(doc.get("global_prompt", "")),
        boxes=tuple(boxes),
        seed=int(doc.get("seed", 0)),
    )


def serialize_layout(layout: Layout) -> str:
    """Serialize to the JSON document format; parse_layout inverts this exactly."""
    doc = {
        "global_prompt": layout.global_prompt,
        "seed": layout.seed,
        "boxes": [
            {
                "id": box.id,
                "center": list(box.center),
                "half_extents": list(box.half_extents),
                "prompt": box.prompt,
                **({"cache_ref": box.cache_ref} if box.cache_ref is not None else {}),
            }
            for box in layout.boxes
        ],
    }
    return json.dumps(doc, indent=2) + "\n"


def load_layout(path: str) -> Layout:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_layout(fh.read())
    except OSError as exc:
        raise LayoutSyntaxError(f"cannot read layout file {path!r}: {exc}") from exc


_FRAME_VOLUME = 8.0


def validate_layout(layout: Layout) -> list[Diagnostic]:
    """Report non-fatal layout smells: disjoint box pairs and tiny boxes.

    Disjoint boxes are a warning because objects composed without any
    shared space tend to train poorly anchored; tiny boxes get too few
    pixel rays to receive meaningful guidance.
    """
    diags = []
    boxes = layout.boxes
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            a, b = boxes[i], boxes[j]
            overlaps = all(
                abs(a.center[k] - b.center[k]) < a.half_extents[k] + b.half_extents[k]
                for k in range(3)
            )
            if not overlaps:
                diags.append(
                    Diagnostic(
                        "warning",
                        f"boxes {a.id!r} and {b.id!r} have zero overlap; "
                        "disjoint objects may float apart during training",
                        (a.id, b.id),
                    )
                )
    for box in boxes:
        ratio = box.volume / _FRAME_VOLUME
        if ratio < 0.01:
            diags.append(
                Diagnostic(
                    "info",
                    f"box {box.id!r} occupies {ratio:.3g} of the global frame volume "
                    "(< 1%); small objects receive weak guidance",
                    (box.id,),
                )
            )
    return diags


def apply_edit(layout: Layout, edit: LayoutEdit) -> Layout:
    """Apply one edit, returning a new validated Layout; the input is unmodified."""
    ids = layout.ids()
    if edit.kind == "add":
        if edit.target in ids:
            raise InvariantViolation(f"cannot add box {edit.target!r}: id already exists")
    elif edit.target not in ids:
        raise UnknownTarget(f"no box with id {edit.target!r}")
    try:
        if edit.kind == "add":
            boxes = layout.boxes + (edit.box,)
        elif edit.kind == "remove":
            boxes = tuple(b for b in layout.boxes if b.id != edit.target)
            if not boxes:
                raise InvariantViolation("cannot remove the last box of a layout")
        elif edit.kind == "move":
            boxes = tuple(
                replace(b, center=tuple(c + d for c, d in zip(b.center, edit.delta)))
                if b.id == edit.target
                else b
                for b in layout.boxes
            )
        elif edit.kind == "scale":
            boxes = tuple(
                replace(b, half_extents=tuple(h * f for h, f in zip(b.half_extents, edit.factors)))
                if b.id == edit.target
                else b
                for b in layout.boxes
            )
        elif edit.kind == "set_prompt":
            boxes = tuple(
                replace(b, prompt=edit.prompt) if b.id == edit.target else b
                for b in layout.boxes
            )
        else:
            raise InvariantViolation(f"unknown edit kind {edit.kind!r}")
        return replace(layout, boxes=boxes)
    except InvariantViolation:
        raise
    except ValidationError as exc:
        raise InvariantViolation(str(exc)) from exc
