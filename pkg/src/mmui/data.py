"""Deterministic synthetic UI screenshots with ground-truth boxes.

Scenes place 1-8 non-overlapping controls on a flat canvas and render them
with procedural glyphs. Twin classes (Button/Decoy_Button and
Checkbox_Checked/Checkbox_Unchecked_Small) dispatch to the same glyph
function, so swapping a control between twins re-renders bit-identically:
the class is recoverable only from the paired text description.

Dataset layout on disk: images/<id>.ppm (binary P6), labels/<id>.txt
("class_id cx cy w h" normalized, one control per line), texts/<id>.txt
(description blocks), manifest.txt ("#catalog <name>" header then
"<id> <split>" lines). Everything is a pure function of
(catalog, count, seed); per-sample generators are seeded with
SeedSequence((seed, index)) so samples are independent of write order.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, DataError

BACKGROUND = (232, 233, 236)
MAX_CONTROLS = 8
MAX_PLACEMENT_ATTEMPTS = 1000
OVERLAP_IOU_LIMIT = 0.1


@dataclass(frozen=True)
class Style:
    fill: tuple
    accent: tuple
    color_name: str
    phase: int  # jitters internal pattern offsets


@dataclass
class ControlSpec:
    class_id: int
    box: tuple  # x, y, w, h in pixels
    style: Style


@dataclass
class Scene:
    canvas: int
    controls: list
    seed: int


@dataclass(frozen=True)
class Annotation:
    class_id: int
    cx: float
    cy: float
    w: float
    h: float


@dataclass(frozen=True)
class ClassCatalog:
    name: str
    classes: tuple
    twin_pairs: tuple
    glyphs: dict          # class name -> glyph key
    weights: dict         # class name -> sampling weight

    def class_id(self, name: str) -> int:
        return self.classes.index(name)

    def twin_classes(self) -> tuple:
        return tuple(c for pair in self.twin_pairs for c in pair)


# glyph key -> ((w_lo, w_hi), (h_lo, h_hi)) sampled box extents in pixels
GLYPH_SIZES = {
    "button": ((44, 96), (20, 34)),
    "checkbox": ((14, 24), (14, 24)),
    "icon": ((18, 34), (18, 34)),
    "input": ((84, 150), (22, 34)),
    "text": ((64, 130), (26, 54)),
    "image": ((56, 120), (44, 96)),
    "list": ((54, 100), (44, 86)),
    "table": ((76, 140), (52, 96)),
    "haxis": ((84, 170), (6, 10)),
    "vaxis": ((6, 10), (64, 150)),
    "dropdown": ((70, 120), (22, 32)),
    "menu": ((90, 170), (18, 28)),
    "tabbar": ((90, 170), (20, 30)),
    "radio": ((14, 22), (14, 22)),
    "tree": ((60, 110), (46, 90)),
    "chart": ((64, 120), (48, 90)),
    "graph": ((64, 120), (48, 90)),
    "legend": ((50, 96), (16, 26)),
    "date": ((64, 110), (20, 30)),
}

# glyph key -> candidate (color name, rgb) fills
_PALETTES = {
    "button": (("dark blue", (40, 72, 150)), ("teal", (28, 128, 122)), ("navy", (26, 38, 92))),
    "checkbox": (("white", (250, 250, 252)),),
    "icon": (("light blue", (122, 168, 228)), ("orange", (226, 138, 60))),
    "input": (("white", (252, 252, 253)),),
    "text": (("dark gray", (66, 68, 74)), ("dark navy", (36, 42, 78))),
    "image": (("pale blue", (198, 214, 236)), ("pale green", (198, 228, 204))),
    "list": (("white", (248, 249, 251)),),
    "table": (("white", (250, 250, 251)),),
    "haxis": (("dark gray", (60, 62, 66)),),
    "vaxis": (("dark gray", (60, 62, 66)),),
    "dropdown": (("white", (250, 250, 252)),),
    "menu": (("dark blue", (44, 62, 124)), ("dark gray", (70, 72, 80))),
    "tabbar": (("steel gray", (120, 128, 142)),),
    "radio": (("white", (250, 250, 252)),),
    "tree": (("white", (249, 250, 251)),),
    "chart": (("white", (251, 251, 252)),),
    "graph": (("white", (251, 251, 252)),),
    "legend": (("white", (248, 248, 250)),),
    "date": (("white", (252, 252, 252)),),
}

TWIN12 = ClassCatalog(
    name="twin12",
    classes=(
        "Button", "Decoy_Button", "Checkbox_Checked", "Checkbox_Unchecked_Small",
        "Icon", "Input", "Text", "Image", "List", "Table",
        "Horizontal_Axis", "Vertical_Axis",
    ),
    twin_pairs=(("Button", "Decoy_Button"), ("Checkbox_Checked", "Checkbox_Unchecked_Small")),
    glyphs={
        "Button": "button", "Decoy_Button": "button",
        "Checkbox_Checked": "checkbox", "Checkbox_Unchecked_Small": "checkbox",
        "Icon": "icon", "Input": "input", "Text": "text", "Image": "image",
        "List": "list", "Table": "table",
        "Horizontal_Axis": "haxis", "Vertical_Axis": "vaxis",
    },
    weights={
        "Button": 1.25, "Decoy_Button": 1.25,
        "Checkbox_Checked": 1.25, "Checkbox_Unchecked_Small": 1.25,
        "Icon": 1.0, "Input": 1.0, "Text": 1.0, "Image": 1.0, "List": 1.0, "Table": 1.0,
        "Horizontal_Axis": 0.35, "Vertical_Axis": 0.35,
    },
)

_FULL23_NAMES = (
    "Icon", "Dropdown", "Button", "Menu", "Input", "List", "TabBar", "Table",
    "Radio_Selected", "Radio_Unselected", "Checkbox_Unchecked", "Checkbox_Checked",
    "Tree", "Image", "Text", "Label_of_the_Textarea", "Description_List", "Legend",
    "Horizontal_Axis", "Chart", "Graph", "Vertical_Axis", "Date_area",
)

FULL23 = ClassCatalog(
    name="full23",
    classes=_FULL23_NAMES,
    twin_pairs=(),
    glyphs={
        "Icon": "icon", "Dropdown": "dropdown", "Button": "button", "Menu": "menu",
        "Input": "input", "List": "list", "TabBar": "tabbar", "Table": "table",
        "Radio_Selected": "radio", "Radio_Unselected": "radio",
        "Checkbox_Unchecked": "checkbox", "Checkbox_Checked": "checkbox",
        "Tree": "tree", "Image": "image", "Text": "text",
        "Label_of_the_Textarea": "text", "Description_List": "list", "Legend": "legend",
        "Horizontal_Axis": "haxis", "Chart": "chart", "Graph": "graph",
        "Vertical_Axis": "vaxis", "Date_area": "date",
    },
    weights={name: (0.5 if name in ("Horizontal_Axis", "Vertical_Axis") else 1.0)
             for name in _FULL23_NAMES},
)

CATALOGS = {"twin12": TWIN12, "full23": FULL23}


def get_catalog(name: str) -> ClassCatalog:
    if name not in CATALOGS:
        raise ContractViolation(f"unknown catalog {name!r}; valid: {sorted(CATALOGS)}")
    return CATALOGS[name]


# ---------------------------------------------------------------------------
# scene sampling


def _box_iou_xywh(a, b) -> float:
    ax1, ay1, aw, ah = a
    bx1, by1, bw, bh = b
    ix = max(0, min(ax1 + aw, bx1 + bw) - max(ax1, bx1))
    iy = max(0, min(ay1 + ah, by1 + bh) - max(ay1, by1))
    inter = ix * iy
    union = aw * ah + bw * bh - inter
    return inter / union if union else 0.0


def _sample_style(glyph: str, rng) -> Style:
    palette = _PALETTES[glyph]
    name, base = palette[int(rng.integers(len(palette)))]
    jitter = rng.integers(-9, 10, size=3)
    fill = tuple(int(np.clip(base[i] + jitter[i], 0, 255)) for i in range(3))
    dark = tuple(max(0, c - 95) for c in fill)
    accent = dark if sum(fill) > 380 else tuple(min(255, c + 120) for c in fill)
    return Style(fill=fill, accent=accent, color_name=name, phase=int(rng.integers(4)))


def sample_scene(catalog: ClassCatalog, canvas: int, rng) -> Scene:
    """Sample a scene with 1-8 controls, rejecting overlaps above IoU 0.1.

    If a control cannot be placed within 1000 attempts, the whole scene is
    regenerated with one control fewer, so sampling never fails outward.
    """
    names = catalog.classes
    weights = np.array([catalog.weights[c] for c in names], dtype=np.float64)
    weights /= weights.sum()
    target = int(rng.integers(1, MAX_CONTROLS + 1))
    while True:
        controls = []
        failed = False
        for _ in range(target):
            for attempt in range(MAX_PLACEMENT_ATTEMPTS):
                cid = int(rng.choice(len(names), p=weights))
                glyph = catalog.glyphs[names[cid]]
                (wlo, whi), (hlo, hhi) = GLYPH_SIZES[glyph]
                w = int(rng.integers(wlo, whi + 1))
                h = int(rng.integers(hlo, hhi + 1))
                x = int(rng.integers(2, canvas - w - 2))
                y = int(rng.integers(2, canvas - h - 2))
                box = (x, y, w, h)
                if all(_box_iou_xywh(box, c.box) <= OVERLAP_IOU_LIMIT for c in controls):
                    controls.append(ControlSpec(cid, box, _sample_style(glyph, rng)))
                    break
            else:
                failed = True
                break
        if not failed:
            return Scene(canvas=canvas, controls=controls, seed=0)
        target = max(1, target - 1)


def annotations_for(scene: Scene) -> list:
    out = []
    for c in scene.controls:
        x, y, w, h = c.box
        out.append(Annotation(c.class_id, (x + w / 2) / scene.canvas, (y + h / 2) / scene.canvas,
                              w / scene.canvas, h / scene.canvas))
    return out


# ---------------------------------------------------------------------------
# rendering


def _rect(img, x, y, w, h, color):
    img[y:y + h, x:x + w] = color


def _border(img, x, y, w, h, t, color):
    img[y:y + t, x:x + w] = color
    img[y + h - t:y + h, x:x + w] = color
    img[y:y + h, x:x + t] = color
    img[y:y + h, x + w - t:x + w] = color


def _diag(img, x0, y0, x1, y1, color):
    n = max(abs(x1 - x0), abs(y1 - y0)) + 1
    xs = np.linspace(x0, x1, n).round().astype(int)
    ys = np.linspace(y0, y1, n).round().astype(int)
    img[ys, xs] = color


def _draw_button(img, x, y, w, h, st):
    _rect(img, x, y, w, h, st.fill)
    _border(img, x, y, w, h, 1, st.accent)
    ly = y + h // 2 - 1
    _rect(img, x + w // 4, ly, w // 2, 2, (245, 245, 247))


def _draw_checkbox(img, x, y, w, h, st):
    _rect(img, x, y, w, h, st.fill)
    _border(img, x, y, w, h, 2, (70, 72, 80))
    cx, cy = x + w // 2, y + h // 2
    r = max(2, min(w, h) // 4)
    _diag(img, cx - r, cy, cx - 1, cy + r - 1, (30, 110, 40))
    _diag(img, cx - 1, cy + r - 1, cx + r, cy - r, (30, 110, 40))


def _draw_icon(img, x, y, w, h, st):
    _rect(img, x, y, w, h, st.fill)
    cx, cy = x + w // 2, y + h // 2
    r = max(2, min(w, h) // 3)
    _diag(img, cx - r, cy, cx, cy - r, st.accent)
    _diag(img, cx, cy - r, cx + r, cy, st.accent)
    _diag(img, cx + r, cy, cx, cy + r, st.accent)
    _diag(img, cx, cy + r, cx - r, cy, st.accent)


def _draw_input(img, x, y, w, h, st):
    _rect(img, x, y, w, h, st.fill)
    _border(img, x, y, w, h, 1, (110, 112, 120))
    _rect(img, x + 4, y + h // 2 - 1, max(4, w // 3), 2, (150, 152, 158))


def _draw_text(img, x, y, w, h, st):
    rows = max(2, h // 12)
    gap = h // rows
    for i in range(rows):
        wy = y + 2 + i * gap
        lw = w - 4 if i < rows - 1 else max(4, (w - 4) * 2 // 3)
        _rect(img, x + 2, wy, lw, max(2, gap // 3), st.fill)


def _draw_image(img, x, y, w, h, st):
    _rect(img, x, y, w, h, st.fill)
    _border(img, x, y, w, h, 1, (120, 122, 128))
    _diag(img, x + 1, y + 1, x + w - 2, y + h - 2, (120, 122, 128))
    _diag(img, x + 1, y + h - 2, x + w - 2, y + 1, (120, 122, 128))


def _draw_list(img, x, y, w, h, st):
    _rect(img, x, y, w, h, st.fill)
    _border(img, x, y, w, h, 1, (130, 132, 138))
    rows = max(2, h // 14)
    gap = h // rows
    for i in range(rows):
        wy = y + gap // 2 + i * gap
        _rect(img, x + 4, wy, 3, 3, (70, 72, 80))
        _rect(img, x + 10, wy, w - 14, 2, (100, 102, 110))


def _draw_table(img, x, y, w, h, st):
    _rect(img, x, y, w, h, st.fill)
    _border(img, x, y, w, h, 1, (90, 92, 100))
    cols = 3 + st.phase % 2
    rows = max(2, h // 18)
    for i in range(1, cols):
        _rect(img, x + i * w // cols, y, 1, h, (150, 152, 160))
    for j in range(1, rows):
        _rect(img, x, y + j * h // rows, w, 1, (150, 152, 160))
    _rect(img, x, y, w, max(2, h // rows // 2), (205, 208, 218))


def _draw_haxis(img, x, y, w, h, st):
    midy = y + h // 3
    _rect(img, x, midy, w, 2, st.fill)
    for tx in range(x + 2, x + w - 1, 9):
        _rect(img, tx, midy + 2, 1, max(2, h - (midy - y) - 2), st.fill)


def _draw_vaxis(img, x, y, w, h, st):
    midx = x + w // 3
    _rect(img, midx, y, 2, h, st.fill)
    for ty in range(y + 2, y + h - 1, 9):
        _rect(img, midx + 2, ty, max(2, w - (midx - x) - 2), 1, st.fill)


def _draw_dropdown(img, x, y, w, h, st):
    _draw_input(img, x, y, w, h, st)
    ax = x + w - h // 2 - 3
    ay = y + h // 2 - 1
    for i in range(max(2, h // 5)):
        _rect(img, ax - i, ay + i, 2 * i + 1, 1, (70, 72, 80))


def _draw_menu(img, x, y, w, h, st):
    _rect(img, x, y, w, h, st.fill)
    items = 3 + st.phase % 2
    for i in range(items):
        ix = x + 3 + i * (w - 6) // items
        _rect(img, ix, y + h // 2 - 1, max(4, (w - 6) // items - 6), 2, (235, 236, 240))


def _draw_tabbar(img, x, y, w, h, st):
    _rect(img, x, y, w, h, st.fill)
    tabs = 3
    for i in range(tabs):
        ix = x + i * w // tabs
        _border(img, ix, y, w // tabs, h, 1, (80, 82, 90))
    _rect(img, x + st.phase % tabs * (w // tabs), y + h - 3, w // tabs, 3, (40, 90, 180))


def _draw_radio(img, x, y, w, h, st):
    yy, xx = np.mgrid[0:h, 0:w]
    cx, cy, r = w / 2 - 0.5, h / 2 - 0.5, min(w, h) / 2 - 1
    disk = (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
    ring = (xx - cx) ** 2 + (yy - cy) ** 2 >= (r - 2) * (r - 2)
    region = img[y:y + h, x:x + w]
    region[disk] = st.fill
    region[disk & ring] = (70, 72, 80)
    inner = (xx - cx) ** 2 + (yy - cy) ** 2 <= (r / 2.2) ** 2
    if st.phase % 2 == 0:
        region[inner] = (50, 100, 190)


def _draw_tree(img, x, y, w, h, st):
    _rect(img, x, y, w, h, st.fill)
    _border(img, x, y, w, h, 1, (140, 142, 148))
    rows = max(3, h // 13)
    gap = h // rows
    for i in range(rows):
        indent = 4 + (i % 3) * 7
        wy = y + gap // 2 + i * gap
        _rect(img, x + indent, wy, 3, 3, (90, 92, 100))
        _rect(img, x + indent + 6, wy, max(4, w - indent - 10), 2, (110, 112, 120))


def _draw_chart(img, x, y, w, h, st):
    _rect(img, x, y, w, h, st.fill)
    _border(img, x, y, w, h, 1, (110, 112, 120))
    bars = 4 + st.phase % 3
    bw = max(2, (w - 8) // bars - 2)
    for i in range(bars):
        bh = max(3, (h - 6) * ((i * 37 + st.phase * 11) % 60 + 30) // 100)
        _rect(img, x + 4 + i * (bw + 2), y + h - 2 - bh, bw, bh, (70, 120, 200))


def _draw_graph(img, x, y, w, h, st):
    _rect(img, x, y, w, h, st.fill)
    _border(img, x, y, w, h, 1, (110, 112, 120))
    pts = 5
    xs = [x + 2 + i * (w - 5) // (pts - 1) for i in range(pts)]
    ys = [y + 2 + ((i * 53 + st.phase * 29) % (h - 5)) for i in range(pts)]
    for i in range(pts - 1):
        _diag(img, xs[i], ys[i], xs[i + 1], ys[i + 1], (190, 70, 60))


def _draw_legend(img, x, y, w, h, st):
    _rect(img, x, y, w, h, st.fill)
    _border(img, x, y, w, h, 1, (150, 152, 158))
    sq = max(4, h // 3)
    _rect(img, x + 3, y + (h - sq) // 2, sq, sq, (70, 120, 200))
    _rect(img, x + sq + 7, y + h // 2 - 1, max(4, w - sq - 12), 2, (100, 102, 110))


def _draw_date(img, x, y, w, h, st):
    _draw_input(img, x, y, w, h, st)
    for frac in (0.33, 0.66):
        _rect(img, x + int(w * frac), y + 3, 1, h - 6, (150, 152, 158))


GLYPH_RENDERERS = {
    "button": _draw_button, "checkbox": _draw_checkbox, "icon": _draw_icon,
    "input": _draw_input, "text": _draw_text, "image": _draw_image,
    "list": _draw_list, "table": _draw_table, "haxis": _draw_haxis,
    "vaxis": _draw_vaxis, "dropdown": _draw_dropdown, "menu": _draw_menu,
    "tabbar": _draw_tabbar, "radio": _draw_radio, "tree": _draw_tree,
    "chart": _draw_chart, "graph": _draw_graph, "legend": _draw_legend,
    "date": _draw_date,
}


def render_canvas(scene: Scene, catalog: ClassCatalog) -> np.ndarray:
    """Render to a uint8 [H,W,3] canvas; pure function of (scene, catalog glyphs)."""
    img = np.empty((scene.canvas, scene.canvas, 3), dtype=np.uint8)
    img[:] = BACKGROUND
    for c in scene.controls:
        glyph = catalog.glyphs[catalog.classes[c.class_id]]
        x, y, w, h = c.box
        GLYPH_RENDERERS[glyph](img, x, y, w, h, c.style)
    return img


def render_scene(scene: Scene, catalog: ClassCatalog) -> np.ndarray:
    """Image as float32 [3,H,W] in [0,1] (uint8 canvas / 255)."""
    return canvas_to_tensor(render_canvas(scene, catalog))


def canvas_to_tensor(canvas: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(canvas.transpose(2, 0, 1)).astype(np.float32) / np.float32(255.0)


# ---------------------------------------------------------------------------
# PPM I/O


def write_ppm(path: str, canvas: np.ndarray):
    h, w, _ = canvas.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(canvas.tobytes())


def read_ppm(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    try:
        if not blob.startswith(b"P6\n"):
            raise ValueError("missing P6 magic at offset 0")
        header_end = blob.index(b"\n", blob.index(b"\n", 3) + 1) + 1
        dims, maxval = blob[3:header_end - 1].split(b"\n")
        w, h = (int(v) for v in dims.split())
        if int(maxval) != 255:
            raise ValueError(f"maxval {int(maxval)} != 255 at offset 3")
        body = blob[header_end:]
        if len(body) != w * h * 3:
            raise ValueError(f"payload {len(body)} bytes != {w * h * 3} at offset {header_end}")
        return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3).copy()
    except ValueError as e:
        raise DataError(f"{path}: malformed PPM ({e})") from e


# ---------------------------------------------------------------------------
# dataset writing / loading


def sample_rng(dataset_seed: int, index: int) -> np.random.Generator:
    """Per-sample stream: SeedSequence((dataset_seed, index))."""
    return np.random.default_rng(np.random.SeedSequence((dataset_seed, index)))


def split_sizes(count: int, train_frac: float = 0.7, val_frac: float = 0.1):
    """train = round(count*train_frac) (of which floor(train*val_frac) is val)."""
    n_train = int(round(count * train_frac))
    n_val = int(n_train * val_frac)
    return n_train - n_val, n_val, count - n_train


def write_dataset(root: str, count: int, catalog: ClassCatalog, seed: int,
                  canvas: int = 256, train_frac: float = 0.7, val_frac: float = 0.1) -> "Dataset":
    from .text import generate_description, serialize_doc

    if count < 1:
        raise ContractViolation("count must be >= 1")
    n_train, n_val, n_test = split_sizes(count, train_frac, val_frac)
    for sub in ("images", "labels", "texts"):
        os.makedirs(os.path.join(root, sub), exist_ok=True)
    entries = []
    for i in range(count):
        sid = f"{i:06d}"
        split = "train" if i < n_train else ("val" if i < n_train + n_val else "test")
        entries.append((sid, split))
        scene = sample_scene(catalog, canvas, sample_rng(seed, i))
        write_ppm(os.path.join(root, "images", f"{sid}.ppm"), render_canvas(scene, catalog))
        lines = []
        for ann in annotations_for(scene):
            lines.append(f"{ann.class_id} {ann.cx!r} {ann.cy!r} {ann.w!r} {ann.h!r}")
        with open(os.path.join(root, "labels", f"{sid}.txt"), "w") as f:
            f.write("\n".join(lines) + "\n")
        doc = generate_description(scene, catalog)
        with open(os.path.join(root, "texts", f"{sid}.txt"), "w") as f:
            f.write(serialize_doc(doc))
    with open(os.path.join(root, "manifest.txt"), "w") as f:
        f.write(f"#catalog {catalog.name}\n")
        for sid, split in entries:
            f.write(f"{sid} {split}\n")
    return Dataset(root, catalog, entries)


class Dataset:
    """Loaded dataset handle; file reads are lazy and cached.

    Text files are only touched when descriptions or embeddings are
    requested, so purely visual training never depends on them.
    """

    def __init__(self, root: str, catalog: ClassCatalog, entries):
        self.root = root
        self.catalog = catalog
        self.entries = list(entries)
        self._images = {}
        self._annotations = {}
        self._docs = {}
        self._embeddings = {}
        self._external = None

    def ids(self, split: str) -> list:
        if split == "trainval":
            return [sid for sid, sp in self.entries if sp in ("train", "val")]
        if split == "all":
            return [sid for sid, _ in self.entries]
        return [sid for sid, sp in self.entries if sp == split]

    def canvas_size(self) -> int:
        return self.image(self.entries[0][0]).shape[1]

    def image(self, sid: str) -> np.ndarray:
        if sid not in self._images:
            self._images[sid] = read_ppm(os.path.join(self.root, "images", f"{sid}.ppm"))
        return canvas_to_tensor(self._images[sid])

    def annotations(self, sid: str) -> list:
        if sid not in self._annotations:
            path = os.path.join(self.root, "labels", f"{sid}.txt")
            anns = []
            with open(path) as f:
                for ln, line in enumerate(f, 1):
                    line = line.strip()
                    if not line:
                        continue
                    parts = line.split()
                    if len(parts) != 5:
                        raise DataError(f"{path}:{ln}: expected 5 fields, got {len(parts)}")
                    try:
                        cid = int(parts[0])
                        vals = [float(p) for p in parts[1:]]
                    except ValueError as e:
                        raise DataError(f"{path}:{ln}: {e}") from e
                    if cid < 0 or cid >= len(self.catalog.classes):
                        raise DataError(f"{path}:{ln}: class id {cid} out of range")
                    anns.append(Annotation(cid, *vals))
            self._annotations[sid] = anns
        return self._annotations[sid]

    def boxes_px(self, sid: str):
        """Ground truth as (boxes [N,4] x1y1x2y2 pixels, class ids [N])."""
        canvas = self.canvas_size()
        anns = self.annotations(sid)
        boxes = np.zeros((len(anns), 4), dtype=np.float64)
        cls = np.zeros(len(anns), dtype=np.int64)
        for i, a in enumerate(anns):
            cx, cy, w, h = a.cx * canvas, a.cy * canvas, a.w * canvas, a.h * canvas
            boxes[i] = (cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)
            cls[i] = a.class_id
        return boxes, cls

    def doc(self, sid: str):
        from .text import parse_doc

        if sid not in self._docs:
            path = os.path.join(self.root, "texts", f"{sid}.txt")
            with open(path, encoding="utf-8") as f:
                self._docs[sid] = parse_doc(f.read(), self.catalog, source=path)
        return self._docs[sid]

    def embedding(self, sid: str, dim: int) -> np.ndarray:
        """[T, dim] float32 embedding matrix for the image's description."""
        if self._external is not None and sid in self._external:
            seq = self._external[sid]
            if seq.shape[1] != dim:
                raise DataError(f"external embedding for {sid}: dim {seq.shape[1]} != {dim}")
            return seq
        key = (sid, dim)
        if key not in self._embeddings:
            from .text import embed_doc

            self._embeddings[key] = embed_doc(self.doc(sid), dim).vectors
        return self._embeddings[key]

    def use_external_embeddings(self, mapping):
        """Replace the surrogate embedder for every id in `mapping`."""
        self._external = {sid: np.asarray(seq.vectors if hasattr(seq, "vectors") else seq,
                                          dtype=np.float32) for sid, seq in mapping.items()}


def load_dataset(root: str) -> Dataset:
    path = os.path.join(root, "manifest.txt")
    if not os.path.exists(path):
        raise DataError(f"{path}: manifest not found")
    entries = []
    catalog = None
    with open(path) as f:
        for ln, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#catalog"):
                catalog = get_catalog(line.split()[1])
                continue
            parts = line.split()
            if len(parts) != 2 or parts[1] not in ("train", "val", "test"):
                raise DataError(f"{path}:{ln}: expected '<id> <split>', got {line!r}")
            entries.append((parts[0], parts[1]))
    if catalog is None:
        raise DataError(f"{path}: missing '#catalog <name>' header")
    if not entries:
        raise DataError(f"{path}: no samples listed")
    seen = set()
    for sid, _ in entries:
        if sid in seen:
            raise DataError(f"{path}: duplicate id {sid}")
        seen.add(sid)
    return Dataset(root, catalog, entries)


# ---------------------------------------------------------------------------
# anchors


def compute_anchors(catalog: ClassCatalog, n_scenes: int = 1000, seed: int = 0,
                    canvas: int = 256, k: int = 9, iters: int = 100):
    """Plain k-means over sampled box extents, quantile-initialized so the
    result is a pure function of its arguments. Returns 3 (w,h) pairs per
    scale, sorted by area."""
    boxes = []
    for i in range(n_scenes):
        scene = sample_scene(catalog, canvas, sample_rng(seed, i))
        boxes.extend((c.box[2], c.box[3]) for c in scene.controls)
    pts = np.array(boxes, dtype=np.float64)
    order = np.argsort(pts[:, 0] * pts[:, 1], kind="stable")
    centroids = pts[order[((np.arange(k) + 0.5) * len(pts) / k).astype(int)]].copy()
    for _ in range(iters):
        d = ((pts[:, None, :] - centroids[None]) ** 2).sum(-1)
        assign = d.argmin(1)
        for j in range(k):
            sel = pts[assign == j]
            if len(sel):
                centroids[j] = sel.mean(0)
    centroids = centroids[np.argsort(centroids[:, 0] * centroids[:, 1], kind="stable")]
    rounded = [(round(float(w), 1), round(float(h), 1)) for w, h in centroids]
    return tuple(tuple(rounded[s * 3 + i] for i in range(3)) for s in range(3))
