"""Region-objectness student network: encoder plus detachable extension.

The encoder U maps one 28x28x3 region to a 128-d feature; the extension V
maps that feature to an objectness posterior in (0,1). The split matters
because model updates can ship only the extension, which is roughly 44x
smaller than the full network, so the two halves serialize independently.

Default layout (conv_channels=(16, 32)):

    encoder:   conv 3x3x3x16 + relu -> pool2 -> conv 3x3x16x32 + relu
               -> pool2 -> flatten -> dense 1568x128 + relu
    extension: dense 128x32 + relu -> dense 32x16 + relu -> dense 16x1 + sigmoid

giving parameter counts 205920 / 4673 / 210593.
"""

from __future__ import annotations

import io
import struct

import numpy as np

from .errors import FormatError, ShapeError
from .nn import Conv2D, Dense, Flatten, MaxPool2D, Network

REGION_SIDE = 28
FEATURE_DIM = 128

CHECKPOINT_MAGIC = b"SSCK"
CHECKPOINT_VERSION = 1
SCOPE_FULL = 0
SCOPE_EXTENSION = 1
_SCOPE_NAMES = {SCOPE_FULL: "full", SCOPE_EXTENSION: "extension_only"}
_SCOPE_CODES = {v: k for k, v in _SCOPE_NAMES.items()}


def _build_encoder(conv_channels, rng, dtype):
    layers = []
    h = w = REGION_SIDE
    cin = 3
    for cout in conv_channels:
        layers.append(Conv2D(3, 3, cin, cout, activation="relu", rng=rng, dtype=dtype))
        cin = cout
        if h % 2 == 0 and w % 2 == 0:
            layers.append(MaxPool2D())
            h, w = h // 2, w // 2
    layers.append(Flatten())
    layers.append(Dense(h * w * cin, FEATURE_DIM, activation="relu", rng=rng, dtype=dtype))
    return Network(layers)


def _build_extension(rng, dtype):
    return Network([
        Dense(FEATURE_DIM, 32, activation="relu", rng=rng, dtype=dtype),
        Dense(32, 16, activation="relu", rng=rng, dtype=dtype),
        Dense(16, 1, activation="sigmoid", rng=rng, dtype=dtype),
    ])


class StudentNet:
    """Encoder/extension pair with versioned parameters.

    `version` increments on every parameter update so the transport layer can
    detect when source and server copies have diverged.
    """

    def __init__(self, seed=0, conv_channels=(16, 32), dtype=np.float32):
        if not conv_channels:
            raise ShapeError("need at least one convolution layer")
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        self.conv_channels = tuple(int(c) for c in conv_channels)
        self.dtype = np.dtype(dtype)
        self.encoder = _build_encoder(self.conv_channels, rng, self.dtype)
        self.extension = _build_extension(rng, self.dtype)
        self.version = 0

    # -- inference ---------------------------------------------------------

    def _check_regions(self, regions):
        regions = np.asarray(regions, dtype=self.dtype)
        if regions.ndim == 3:
            regions = regions[None]
        if regions.ndim != 4 or regions.shape[1:] != (REGION_SIDE, REGION_SIDE, 3):
            raise ShapeError(f"expected (B,{REGION_SIDE},{REGION_SIDE},3) regions, got {regions.shape}")
        return regions

    def encode(self, regions, chunk=1024):
        """Features for a batch of regions: (B,28,28,3) -> (B,128).

        A single (28,28,3) region yields a (128,) vector. Chunked so large
        region batches do not materialize huge im2col buffers.
        """
        single = np.asarray(regions).ndim == 3
        regions = self._check_regions(regions)
        parts = [
            self.encoder.forward(regions[i:i + chunk], keep_cache=False)
            for i in range(0, len(regions), chunk)
        ]
        feats = parts[0] if len(parts) == 1 else np.concatenate(parts)
        return feats[0] if single else feats

    def extend(self, features):
        """Posterior from features: (B,128) -> (B,) in (0,1); (128,) -> scalar."""
        features = np.asarray(features, dtype=self.dtype)
        single = features.ndim == 1
        if single:
            features = features[None]
        if features.ndim != 2 or features.shape[1] != FEATURE_DIM:
            raise ShapeError(f"expected (B,{FEATURE_DIM}) features, got {features.shape}")
        post = self.extension.forward(features, keep_cache=False)[:, 0]
        return float(post[0]) if single else post

    def infer(self, regions, chunk=1024):
        """Objectness posterior for regions; composition of encode and extend."""
        return self.extend(self.encode(regions, chunk=chunk))

    # -- training ----------------------------------------------------------

    def forward_train(self, regions):
        """Forward pass keeping caches; returns (B,) posteriors."""
        regions = self._check_regions(regions)
        feats = self.encoder.forward(regions, keep_cache=True)
        return self.extension.forward(feats, keep_cache=True)[:, 0]

    def backward(self, dpost):
        """Backprop from d(loss)/d(posterior), shape (B,)."""
        dfeat = self.extension.backward(np.asarray(dpost, dtype=self.dtype)[:, None])
        self.encoder.backward(dfeat)

    def apply_gradients(self, learning_rate, freeze_encoder=False):
        self.extension.apply_gradients(learning_rate)
        if not freeze_encoder:
            self.encoder.apply_gradients(learning_rate)

    # -- accounting --------------------------------------------------------

    def param_counts(self):
        """(encoder, extension, total) parameter counts."""
        enc = self.encoder.param_count()
        ext = self.extension.param_count()
        return enc, ext, enc + ext

    def layer_param_counts(self):
        """Per-layer counts in declaration order, parameterless layers skipped."""
        return [
            layer.param_count()
            for layer in self.encoder.layers + self.extension.layers
            if layer.params()
        ]

    # -- serialization -----------------------------------------------------

    def _tensor_table(self, scope):
        nets = [("ext", self.extension)] if scope == SCOPE_EXTENSION else \
            [("enc", self.encoder), ("ext", self.extension)]
        table = []
        for prefix, net in nets:
            for key, _, name, p in net.param_items():
                table.append((f"{prefix}.{key}.{name}", p))
        return table

    def save_checkpoint(self, scope="full"):
        """Serialize parameters to bytes; scope is 'full' or 'extension_only'."""
        if scope not in _SCOPE_CODES:
            raise ValueError(f"unknown scope {scope!r}")
        code = _SCOPE_CODES[scope]
        buf = io.BytesIO()
        buf.write(CHECKPOINT_MAGIC)
        buf.write(struct.pack("<HBI", CHECKPOINT_VERSION, code, self.version))
        buf.write(struct.pack("<H", len(self.conv_channels)))
        for c in self.conv_channels:
            buf.write(struct.pack("<H", c))
        table = self._tensor_table(code)
        buf.write(struct.pack("<I", len(table)))
        for name, p in table:
            raw = name.encode("ascii")
            buf.write(struct.pack("<H", len(raw)))
            buf.write(raw)
            buf.write(struct.pack("<B", p.ndim))
            for d in p.shape:
                buf.write(struct.pack("<I", d))
            buf.write(np.ascontiguousarray(p, dtype="<f4").tobytes())
        return buf.getvalue()

    @staticmethod
    def _read(buf, n):
        raw = buf.read(n)
        if len(raw) != n:
            raise FormatError("truncated checkpoint")
        return raw

    @classmethod
    def _parse(cls, payload):
        buf = io.BytesIO(payload)
        if cls._read(buf, 4) != CHECKPOINT_MAGIC:
            raise FormatError("bad checkpoint magic")
        fmt_version, code, net_version = struct.unpack("<HBI", cls._read(buf, 7))
        if fmt_version != CHECKPOINT_VERSION:
            raise FormatError(f"unsupported checkpoint format version {fmt_version}")
        if code not in _SCOPE_NAMES:
            raise FormatError(f"unknown checkpoint scope {code}")
        (n_conv,) = struct.unpack("<H", cls._read(buf, 2))
        channels = tuple(struct.unpack("<H", cls._read(buf, 2))[0] for _ in range(n_conv))
        (n_tensors,) = struct.unpack("<I", cls._read(buf, 4))
        tensors = {}
        for _ in range(n_tensors):
            (name_len,) = struct.unpack("<H", cls._read(buf, 2))
            name = cls._read(buf, name_len).decode("ascii")
            (ndim,) = struct.unpack("<B", cls._read(buf, 1))
            shape = tuple(struct.unpack("<I", cls._read(buf, 4))[0] for _ in range(ndim))
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(cls._read(buf, 4 * count), dtype="<f4").reshape(shape)
            tensors[name] = data.copy()
        if buf.read(1):
            raise FormatError("trailing bytes after checkpoint payload")
        return code, net_version, channels, tensors

    def _assign(self, tensors, nets):
        # Validate the full table before touching any parameter so a bad
        # payload cannot leave the network half-updated.
        plan = []
        for prefix, net in nets:
            for key, layer, name, p in net.param_items():
                full = f"{prefix}.{key}.{name}"
                if full not in tensors:
                    raise FormatError(f"checkpoint missing tensor {full}")
                t = tensors[full]
                if t.shape != p.shape:
                    raise FormatError(f"tensor {full} has shape {t.shape}, expected {p.shape}")
                plan.append((layer, name, t))
        expected = len(plan)
        if len(tensors) != expected:
            raise FormatError(f"checkpoint has {len(tensors)} tensors, expected {expected}")
        for layer, name, t in plan:
            setattr(layer, name, t.astype(self.dtype))

    @classmethod
    def load_checkpoint(cls, payload):
        """Rebuild a StudentNet from a full-scope checkpoint."""
        code, net_version, channels, tensors = cls._parse(payload)
        if code != SCOPE_FULL:
            raise FormatError("checkpoint is extension-only; apply it to an existing StudentNet")
        student = cls(seed=0, conv_channels=channels)
        student._assign(tensors, [("enc", student.encoder), ("ext", student.extension)])
        student.version = net_version
        return student

    def apply_update(self, payload):
        """Apply a checkpoint of either scope in place; adopts its version."""
        code, net_version, channels, tensors = self._parse(payload)
        if code == SCOPE_FULL and channels != self.conv_channels:
            raise FormatError(f"architecture mismatch: {channels} vs {self.conv_channels}")
        if code == SCOPE_EXTENSION:
            self._assign(tensors, [("ext", self.extension)])
        else:
            self._assign(tensors, [("enc", self.encoder), ("ext", self.extension)])
        self.version = net_version
        return _SCOPE_NAMES[code]

    def clone(self):
        """Deep copy sharing nothing; used for the server-side replica."""
        other = StudentNet.load_checkpoint(self.save_checkpoint("full"))
        return other

    def encoder_state(self):
        """Bit-exact snapshot of encoder parameters, for freeze checks."""
        return [p.copy() for p in self.encoder.param_arrays()]
