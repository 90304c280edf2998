"""Procedurally rendered captioned shapes, caption tokenisation and PPM files."""

import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

COLORS = ("red", "green", "blue", "yellow", "white", "purple")
SHAPES = ("circle", "square", "triangle", "cross")
SIZES = ("small", "large")
BACKGROUNDS = ("black", "gray")

RGB = {
    "red": (1.0, -1.0, -1.0),
    "green": (-1.0, 1.0, -1.0),
    "blue": (-1.0, -1.0, 1.0),
    "yellow": (1.0, 1.0, -1.0),
    "white": (1.0, 1.0, 1.0),
    "purple": (1.0, -1.0, 1.0),
    "black": (-1.0, -1.0, -1.0),
    "gray": (0.0, 0.0, 0.0),
}

PAD = "<pad>"
VOCAB = (PAD, "a", "on", "background") + SIZES + COLORS + SHAPES + BACKGROUNDS
TOKEN_ID = {w: i for i, w in enumerate(VOCAB)}
SEQ_LEN = 8
RESOLUTIONS = (16, 32, 64)

# target foreground fraction of the image area per size word
_AREA = {"small": 0.26, "large": 0.42}
_JITTER = 0.10


@dataclass(frozen=True, order=True)
class CaptionSpec:
    color: str
    shape: str
    size: str
    background: str

    def __post_init__(self):
        for value, allowed in ((self.color, COLORS), (self.shape, SHAPES),
                               (self.size, SIZES), (self.background, BACKGROUNDS)):
            if value not in allowed:
                raise ValueError(f"{value!r} not in {allowed}")

    @property
    def caption(self):
        return f"a {self.size} {self.color} {self.shape} on a {self.background} background"

    def tokens(self, seq_len=SEQ_LEN):
        return tokenize(self.caption, seq_len)


def all_specs():
    """The 96 attribute combinations in a fixed order."""
    return [CaptionSpec(c, s, z, b)
            for c, s, z, b in itertools.product(COLORS, SHAPES, SIZES, BACKGROUNDS)]


class VocabularyError(ValueError):
    pass


def tokenize(text, seq_len=SEQ_LEN):
    words = text.lower().split()
    unknown = [w for w in words if w not in TOKEN_ID or w == PAD]
    if unknown:
        raise VocabularyError(f"unknown word(s) {unknown}; vocabulary: "
                              f"{', '.join(VOCAB[1:])}")
    if len(words) > seq_len:
        raise VocabularyError(f"caption has {len(words)} words, limit is {seq_len}")
    ids = [TOKEN_ID[w] for w in words]
    return np.array(ids + [0] * (seq_len - len(ids)), dtype=np.int64)


def spec_from_tokens(tokens):
    words = [VOCAB[i] for i in tokens if i != 0]
    pick = {name: [w for w in words if w in allowed]
            for name, allowed in (("color", COLORS), ("shape", SHAPES), ("size", SIZES),
                                  ("background", BACKGROUNDS))}
    return CaptionSpec(**{k: v[0] for k, v in pick.items()})


@dataclass
class CaptionedSample:
    image: np.ndarray      # (3, R, R) in [-1, 1]
    tokens: np.ndarray     # (L,) int
    spec: CaptionSpec
    seed: int = 0


# ---------------------------------------------------------------------------
# rendering


def _mask(shape, size, res, rng):
    area = _AREA[size]
    cx, cy = 0.5 + rng.uniform(-_JITTER, _JITTER, size=2)
    theta = rng.uniform(0.0, 2.0 * np.pi)
    coords = (np.arange(res) + 0.5) / res
    x, y = np.meshgrid(coords, coords)
    dx, dy = x - cx, y - cy
    if shape == "circle":
        r = np.sqrt(area / np.pi)
        return dx * dx + dy * dy <= r * r
    if shape == "square":
        half = 0.5 * np.sqrt(area)
        return (np.abs(dx) <= half) & (np.abs(dy) <= half)
    # rotated shapes: express pixel offsets in the shape's frame
    u = np.cos(theta) * dx + np.sin(theta) * dy
    v = -np.sin(theta) * dx + np.cos(theta) * dy
    if shape == "triangle":
        rad = np.sqrt(area / (0.75 * np.sqrt(3.0)))
        inside = np.ones_like(u, dtype=bool)
        for k in range(3):
            a = 2.0 * np.pi * k / 3.0
            # half-plane facing away from each edge's outward normal
            inside &= np.cos(a) * u + np.sin(a) * v <= 0.5 * rad
        return inside
    if shape == "cross":
        arm = 0.40
        width = 2.0 * arm - np.sqrt(4.0 * arm * arm - area)
        return ((np.abs(u) <= arm) & (np.abs(v) <= 0.5 * width)) | (
            (np.abs(v) <= arm) & (np.abs(u) <= 0.5 * width))
    raise ValueError(f"unknown shape {shape!r}")


def render(spec, resolution=32, rng=None, seed=0):
    """Rasterise ``spec`` (no anti-aliasing) at ``resolution`` with jittered pose."""
    if resolution not in RESOLUTIONS:
        raise ValueError(f"unsupported resolution {resolution}; choose from {RESOLUTIONS}")
    if rng is None:
        rng = np.random.default_rng(seed)
    mask = _mask(spec.shape, spec.size, resolution, rng)
    image = np.empty((3, resolution, resolution))
    image[:] = np.asarray(RGB[spec.background])[:, None, None]
    image[:, mask] = np.asarray(RGB[spec.color])[:, None]
    return CaptionedSample(image=image, tokens=spec.tokens(), spec=spec, seed=seed)


# ---------------------------------------------------------------------------
# splits


@dataclass
class Dataset:
    samples: list
    resolution: int

    def __len__(self):
        return len(self.samples)

    def images(self, idx):
        return np.stack([self.samples[i].image for i in idx])

    def tokens(self, idx):
        return np.stack([self.samples[i].tokens for i in idx])

    def specs(self, idx):
        return [self.samples[i].spec for i in idx]

    def manifest(self):
        return "".join(f"{s.seed}\t{s.spec.color}\t{s.spec.shape}\t{s.spec.size}\t"
                       f"{s.spec.background}\n" for s in self.samples)


def _draw_specs(n, rng, stratified):
    specs = all_specs()
    if stratified:
        if n % len(specs):
            raise ValueError(f"stratified split needs a multiple of {len(specs)}, got {n}")
        return specs * (n // len(specs))
    return [specs[i] for i in rng.integers(0, len(specs), size=n)]


def make_split(n_train, n_test, rng, resolution=32, stratified=False):
    """Train/test datasets; test samples use jitter seeds never used in train."""
    if n_train < 1 or n_test < 1:
        raise ValueError("split sizes must be >= 1")
    train_specs = _draw_specs(n_train, rng, stratified)
    test_specs = _draw_specs(n_test, rng, stratified)
    seeds = rng.choice(2 ** 31, size=n_train + n_test, replace=False)
    train = Dataset([render(sp, resolution, seed=int(sd))
                     for sp, sd in zip(train_specs, seeds[:n_train])], resolution)
    test = Dataset([render(sp, resolution, seed=int(sd))
                    for sp, sd in zip(test_specs, seeds[n_train:])], resolution)
    return train, test


def parse_manifest(text, resolution=32):
    samples = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise ValueError(f"manifest line {lineno}: expected 5 tab-separated fields")
        seed = int(parts[0])
        samples.append(render(CaptionSpec(*parts[1:]), resolution, seed=seed))
    return Dataset(samples, resolution)


class MismatchError(ValueError):
    pass


def mismatch(specs):
    """Index permutation pairing every item with a different spec.

    Starts from a cyclic shift by one and repairs collisions by swapping
    partners with another position.
    """
    n = len(specs)
    if n < 2:
        raise MismatchError("mismatch needs a batch of at least 2")
    if all(sp == specs[0] for sp in specs):
        raise MismatchError("all specs in the batch are identical; cannot mismatch")
    perm = [(i + 1) % n for i in range(n)]
    for i in range(n):
        if specs[perm[i]] != specs[i]:
            continue
        for j in range(n):
            if j != i and specs[perm[j]] != specs[i] and specs[perm[i]] != specs[j]:
                perm[i], perm[j] = perm[j], perm[i]
                break
        else:
            raise MismatchError(f"no valid mismatch partner for position {i}")
    return perm


# ---------------------------------------------------------------------------
# colour oracle


def foreground_mask(image, threshold=0.5):
    """Pixels farther than ``threshold`` (RGB L2) from the border median colour."""
    border = np.concatenate([image[:, 0, :], image[:, -1, :], image[:, :, 0], image[:, :, -1]],
                            axis=1)
    bg = np.median(border, axis=1)
    dist = np.sqrt(((image - bg[:, None, None]) ** 2).sum(axis=0))
    return dist > threshold


def dominant_color(image):
    """Nearest palette colour to the mean foreground RGB of ``image`` (3, R, R)."""
    mask = foreground_mask(image)
    pixels = image[:, mask] if mask.any() else image.reshape(3, -1)
    mean = pixels.mean(axis=1)
    best = min(COLORS, key=lambda c: float(((mean - np.asarray(RGB[c])) ** 2).sum()))
    return best


# ---------------------------------------------------------------------------
# PPM


def _to_bytes(image):
    scaled = (np.clip(np.asarray(image, dtype=np.float64), -1.0, 1.0) + 1.0) * 127.5
    # round half away from zero
    return np.floor(scaled + 0.5).astype(np.uint8)


def write_image(image, path):
    """Binary P6 PPM of a (3, R, C) array in [-1, 1]; (R, C) arrays are gray."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = np.broadcast_to(image, (3,) + image.shape)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"write_image: expected (3, H, W), got {image.shape}")
    _, h, w = image.shape
    body = _to_bytes(image).transpose(1, 2, 0).tobytes()
    path = Path(path)
    try:
        path.write_bytes(f"P6\n{w} {h}\n255\n".encode() + body)
    except OSError as exc:
        raise OSError(f"write_image: cannot write {path}: {exc}") from exc
    return path


def read_image(path):
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise OSError(f"read_image: cannot read {path}: {exc}") from exc
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"read_image: truncated header in {path}")
        fields.append(raw[start:pos])
    if fields[0] != b"P6" or int(fields[3]) != 255:
        raise ValueError(f"read_image: {path} is not an 8-bit binary PPM")
    w, h = int(fields[1]), int(fields[2])
    body = raw[pos + 1:pos + 1 + 3 * w * h]
    if len(body) != 3 * w * h:
        raise ValueError(f"read_image: {path} has {len(body)} pixel bytes, expected {3 * w * h}")
    arr = np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3).transpose(2, 0, 1)
    return arr.astype(np.float64) / 127.5 - 1.0


def image_grid(images, cols=4, pad=1):
    """Tile (N, 3, R, R) images into one (3, H, W) array with ``-1`` gutters."""
    images = np.asarray(images)
    n, c, r, _ = images.shape
    rows = -(-n // cols)
    grid = -np.ones((c, rows * (r + pad) + pad, cols * (r + pad) + pad))
    for k in range(n):
        i, j = divmod(k, cols)
        y, x = pad + i * (r + pad), pad + j * (r + pad)
        grid[:, y:y + r, x:x + r] = images[k]
    return grid
