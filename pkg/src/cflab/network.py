"""The clustering/beamforming network: CSI conversion, residual conv stack,
adaptive per-(AP, user) gating, complex conversion and power projection.

Spatial maps are NHWC arrays (batch, Q, I, channels). A validated
architecture keeps every layer's Q x I footprint (stride-1 layers via
p = (k-1)/2, strided layers via p = (in*s - in - s + k)/2) and ends on
2M channels, so the residual output always splits into real and imaginary
beamformer halves.
"""

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from . import kernels
from .sysmodel import unstack_users

BN_EPS = 1e-5
BN_MOMENTUM = 0.9  # running = momentum * running + (1 - momentum) * batch
HARD_GATE_THRESHOLD = 0.5
_CHECKPOINT_VERSION = 1
_ACTIVATIONS = ("relu", "tanh")


@dataclass
class LayerSpec:
    kernel: tuple  # (k_w, k_h)
    padding: tuple  # (p_w, p_h)
    stride: tuple = (1, 1)
    out_channels: int = 8
    activation: str = "relu"


@dataclass
class NetworkSpec:
    layers: list
    gate_steepness: float = 50.0  # logistic amplification of the cluster gate

    @property
    def num_antennas(self):
        return self.layers[-1].out_channels // 2


@dataclass
class ArchitectureViolation:
    layer: object  # layer index, or None for network-level conditions
    condition: str
    detail: str


def same_layer(kernel, out_channels, activation="relu"):
    """Stride-1 layer with the footprint-preserving padding (k odd)."""
    return LayerSpec(
        kernel=(kernel, kernel),
        padding=((kernel - 1) // 2, (kernel - 1) // 2),
        stride=(1, 1),
        out_channels=out_channels,
        activation=activation,
    )


def default_spec(num_antennas, layers=5, kernel=5, channels=None, gate_steepness=50.0):
    """The reference architecture: L-1 relu layers plus a tanh output layer."""
    if channels is None:
        channels = 2 * num_antennas
    specs = [same_layer(kernel, channels) for _ in range(layers - 1)]
    specs.append(same_layer(kernel, 2 * num_antennas, activation="tanh"))
    return NetworkSpec(layers=specs, gate_steepness=gate_steepness)


def validate_architecture(spec, num_aps, num_users, num_antennas):
    """Check the footprint-preservation and final-channel conditions.

    Returns None when the architecture is valid, else the first violation
    (layer index plus the violated condition).
    """
    for l, layer in enumerate(spec.layers):
        k_w, k_h = layer.kernel
        p_w, p_h = layer.padding
        s_w, s_h = layer.stride
        ints = [k_w, k_h, p_w, p_h, s_w, s_h]
        if any(int(v) != v for v in ints) or min(k_w, k_h, s_w, s_h) < 1 or min(p_w, p_h) < 0:
            return ArchitectureViolation(
                l,
                "positive-parameters",
                f"layer {l}: kernel/stride must be positive integers, padding >= 0",
            )
        if layer.activation not in _ACTIVATIONS:
            return ArchitectureViolation(
                l, "activation", f"layer {l}: unknown activation {layer.activation!r}"
            )
        for name, in_dim, k, p, s in (
            ("width", num_aps, k_w, p_w, s_w),
            ("height", num_users, k_h, p_h, s_h),
        ):
            if s == 1:
                if 2 * p != k - 1:
                    return ArchitectureViolation(
                        l,
                        "same-padding",
                        f"layer {l} {name}: stride 1 needs p = (k-1)/2, got "
                        f"p={p} for k={k}",
                    )
            else:
                want = in_dim * s - in_dim - s + k
                if want < 0 or want % 2 != 0 or 2 * p != want:
                    return ArchitectureViolation(
                        l,
                        "strided-padding",
                        f"layer {l} {name}: stride {s} needs "
                        f"p = (in*s - in - s + k)/2 = {want / 2}, got p={p}",
                    )
    if spec.layers[-1].out_channels != 2 * num_antennas:
        return ArchitectureViolation(
            None,
            "final-channels",
            f"last layer must emit 2M = {2 * num_antennas} channels, got "
            f"{spec.layers[-1].out_channels}",
        )
    return None


def require_valid(spec, num_aps, num_users, num_antennas):
    violation = validate_architecture(spec, num_aps, num_users, num_antennas)
    if violation is not None:
        raise ValueError(f"invalid architecture [{violation.condition}]: {violation.detail}")


def random_valid_spec(num_aps, num_users, num_antennas, rng, max_layers=5):
    """Draw a random architecture satisfying the validation conditions."""
    n_layers = int(rng.integers(2, max_layers + 1))
    layers = []
    for l in range(n_layers):
        out_c = (
            2 * num_antennas
            if l == n_layers - 1
            else int(rng.integers(2, 2 * num_antennas + 4))
        )
        act = "tanh" if l == n_layers - 1 else "relu"
        dims = []
        for in_dim in (num_aps, num_users):
            if rng.random() < 0.7:
                k = int(rng.choice([1, 3, 5, 7]))
                dims.append((k, (k - 1) // 2, 1))
            else:
                s = int(rng.choice([2, 3]))
                base = in_dim * s - in_dim - s
                k = int(rng.integers(1, 6))
                if (base + k) % 2 != 0:
                    k += 1
                while base + k < 0:
                    k += 2
                dims.append((k, (base + k) // 2, s))
        (k_w, p_w, s_w), (k_h, p_h, s_h) = dims
        layers.append(
            LayerSpec(
                kernel=(k_w, k_h),
                padding=(p_w, p_h),
                stride=(s_w, s_h),
                out_channels=out_c,
                activation=act,
            )
        )
    return NetworkSpec(layers=layers)


@dataclass
class NetParams:
    """Trainable parameters plus batch-norm running buffers."""

    conv_w: list
    conv_b: list
    bn_scale: list
    bn_shift: list
    bn_mean: list
    bn_var: list
    identity_w: np.ndarray
    identity_b: np.ndarray
    attention_w: np.ndarray  # shared 1x1 threshold kernel (scalar)
    attention_b: np.ndarray


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(spec, num_antennas, rng):
    """Glorot-uniform weights, unit batch-norm, low initial thresholds.

    The attention weight starts positive (longer-range APs then get lower
    thresholds, the monotone behaviour the gate is built around) and the
    bias at -3, so training begins with most gates open instead of in the
    all-closed local minimum where the l1 term freezes the network.
    """
    conv_w, conv_b, bn_scale, bn_shift, bn_mean, bn_var = [], [], [], [], [], []
    c_in = num_antennas
    for layer in spec.layers:
        k_w, k_h = layer.kernel
        c_out = layer.out_channels
        shape = (k_w, k_h, c_in, c_out)
        conv_w.append(_glorot(rng, shape, k_w * k_h * c_in, k_w * k_h * c_out))
        conv_b.append(np.zeros(c_out))
        bn_scale.append(np.ones(c_out))
        bn_shift.append(np.zeros(c_out))
        bn_mean.append(np.zeros(c_out))
        bn_var.append(np.ones(c_out))
        c_in = c_out
    out_c = spec.layers[-1].out_channels
    identity_w = _glorot(rng, (1, 1, num_antennas, out_c), num_antennas, out_c)
    return NetParams(
        conv_w=conv_w,
        conv_b=conv_b,
        bn_scale=bn_scale,
        bn_shift=bn_shift,
        bn_mean=bn_mean,
        bn_var=bn_var,
        identity_w=identity_w,
        identity_b=np.zeros(out_c),
        attention_w=np.array(rng.uniform(0.0, np.sqrt(3.0))),
        attention_b=np.array(-3.0),
    )


def trainable(params):
    """Ordered name -> array views of everything the optimizer updates."""
    out = {}
    for l in range(len(params.conv_w)):
        out[f"conv{l}.weight"] = params.conv_w[l]
        out[f"conv{l}.bias"] = params.conv_b[l]
        out[f"bn{l}.scale"] = params.bn_scale[l]
        out[f"bn{l}.shift"] = params.bn_shift[l]
    out["identity.weight"] = params.identity_w
    out["identity.bias"] = params.identity_b
    out["attention.weight"] = params.attention_w
    out["attention.bias"] = params.attention_b
    return out


# ---------------------------------------------------------------------------
# numpy-level pipeline pieces


def csi_conversion(est_h, num_antennas):
    """(QM, I) complex estimate -> (Q, I, M) tensor of antenna magnitudes."""
    qm, _ = est_h.shape
    if qm % num_antennas != 0:
        raise ValueError("row count is not a multiple of the antenna count")
    return np.abs(unstack_users(est_h, qm // num_antennas))


def diff_threshold(pooled_value, threshold, steepness):
    """Logistic gate 1 / (1 + exp(-k (pv - t))), elementwise."""
    if steepness <= 0:
        raise ValueError("gate steepness must be positive")
    return 1.0 / (1.0 + np.exp(-steepness * (np.asarray(pooled_value) - threshold)))


def spatial_attention(x, attention_w, attention_b):
    """Per-(AP, user) thresholds: sigmoid of the shared 1x1 map of pooled CSI."""
    pooled = np.mean(x, axis=-1)
    return 1.0 / (1.0 + np.exp(-(attention_w * pooled + attention_b)))


def cluster_matrix(v_res, thresholds, steepness):
    """Soft cluster assignments: gate the channel-pooled beamformer values."""
    pooled = np.mean(v_res, axis=-1)
    return diff_threshold(pooled, thresholds, steepness)


def sparsify(v_res, cluster):
    """Broadcast the cluster matrix over the channel axis and multiply."""
    if cluster.shape != v_res.shape[:-1]:
        raise ValueError("cluster matrix does not match the beamformer grid")
    return v_res * cluster[..., None]


def to_complex(v_spa):
    """Split 2M real channels into an M-channel complex tensor."""
    channels = v_spa.shape[-1]
    if channels % 2 != 0:
        raise ValueError("channel count must be even")
    m = channels // 2
    return v_spa[..., :m] + 1j * v_spa[..., m:]


def power_project(v, p_max, norm_correct=False):
    """Per-AP projection: APs over budget are scaled by p_max / power.

    The default divides by the power itself (post-projection power becomes
    p_max^2 / power <= p_max); norm_correct=True scales by sqrt(p_max/power)
    instead, landing exactly on the budget. Both satisfy the constraint.
    """
    if p_max <= 0:
        raise ValueError("p_max must be positive")
    power = np.sum(np.abs(v) ** 2, axis=(1, 2))
    scale = np.ones_like(power)
    over = power > p_max
    if norm_correct:
        scale[over] = np.sqrt(p_max / power[over])
    else:
        scale[over] = p_max / power[over]
    return v * scale[:, None, None]


def ap_powers(v):
    """Per-AP transmit power of a (Q, I, M) beamformer."""
    return np.sum(np.abs(v) ** 2, axis=(1, 2))


# ---------------------------------------------------------------------------
# differentiable graph


def batchnorm_graph(x, scale, shift, running_mean, running_var, training):
    """Batch normalization over (batch, Q, I) per channel.

    Training mode normalizes with batch statistics and updates the running
    buffers in place; eval mode uses the buffers as constants.
    """
    if training:
        mu = ad.tmean(x, axis=(0, 1, 2), keepdims=True)
        centered = ad.sub(x, mu)
        var = ad.tmean(ad.square(centered), axis=(0, 1, 2), keepdims=True)
        running_mean *= BN_MOMENTUM
        running_mean += (1.0 - BN_MOMENTUM) * mu.value.reshape(-1)
        running_var *= BN_MOMENTUM
        running_var += (1.0 - BN_MOMENTUM) * var.value.reshape(-1)
        xhat = ad.div(centered, ad.sqrt(ad.add(var, BN_EPS)))
    else:
        xhat = ad.mul(
            ad.sub(x, running_mean), 1.0 / np.sqrt(running_var + BN_EPS)
        )
    return ad.add(ad.mul(xhat, scale), shift)


def _activation(h, tag):
    return ad.relu(h) if tag == "relu" else ad.tanh(h)


def residual_graph(x_t, spec, lifted, params, training):
    """Main conv chain plus the 1x1 identity branch, summed under tanh."""
    h = x_t
    for l, layer in enumerate(spec.layers):
        h = ad.conv2d(
            h, lifted[f"conv{l}.weight"], lifted[f"conv{l}.bias"],
            layer.stride, layer.padding,
        )
        h = batchnorm_graph(
            h, lifted[f"bn{l}.scale"], lifted[f"bn{l}.shift"],
            params.bn_mean[l], params.bn_var[l], training,
        )
        h = _activation(h, layer.activation)
    idm = ad.conv2d(x_t, lifted["identity.weight"], lifted["identity.bias"])
    return ad.tanh(ad.add(h, idm))


def forward_graph(
    est_batch,
    spec,
    params,
    p_max,
    training=False,
    hard_gate=False,
    normalize_input=True,
    norm_correct_power=False,
):
    """Build the full differentiable pipeline for a batch.

    est_batch: (B, QM, I) complex estimates. Returns a dict of graph nodes
    (x, v_res, thresholds, gate, v_spa, scale, re, im) plus the lifted
    parameter tensors under 'params'. With hard_gate=True the gate is the
    binarized constant, so zeroed blocks are exact.
    """
    m = spec.num_antennas
    batch, qm, users = est_batch.shape
    q = qm // m
    require_valid(spec, q, users, m)

    mags = np.abs(est_batch)  # (B, QM, I)
    x_val = np.stack([csi_conversion(mags[n], m) for n in range(batch)])
    if normalize_input:
        norm = np.maximum(mags.mean(axis=(1, 2)), 1e-300)
        x_val = x_val / norm[:, None, None, None]
    x_t = ad.as_tensor(x_val)

    lifted = {name: ad.parameter(arr) for name, arr in trainable(params).items()}
    v_res = residual_graph(x_t, spec, lifted, params, training)

    pooled_x = ad.tmean(x_t, axis=3)
    thresholds = ad.sigmoid(
        ad.add(ad.mul(pooled_x, lifted["attention.weight"]), lifted["attention.bias"])
    )
    pooled_v = ad.tmean(v_res, axis=3)
    gate = ad.sigmoid(
        ad.mul(ad.sub(pooled_v, thresholds), spec.gate_steepness)
    )
    if hard_gate:
        gate_used = ad.as_tensor(
            (gate.value >= HARD_GATE_THRESHOLD).astype(np.float64)
        )
    else:
        gate_used = gate
    v_spa = ad.mul(v_res, ad.reshape(gate_used, gate_used.value.shape + (1,)))

    power = ad.tsum(ad.square(v_spa), axis=(2, 3))  # (B, Q)
    ratio = ad.div(float(p_max), ad.add(power, 1e-300))
    if norm_correct_power:
        scale = ad.minimum(ad.sqrt(ratio), 1.0)
    else:
        scale = ad.minimum(ratio, 1.0)
    v_proj = ad.mul(v_spa, ad.reshape(scale, scale.value.shape + (1, 1)))

    return {
        "x": x_t,
        "v_res": v_res,
        "thresholds": thresholds,
        "gate": gate,
        "gate_used": gate_used,
        "v_spa": v_spa,
        "scale": scale,
        "re": v_proj[..., :m],
        "im": v_proj[..., m:],
        "params": lifted,
    }


@dataclass
class ForwardResult:
    beamformer: np.ndarray  # (Q, I, M) complex, power-feasible
    cluster_soft: np.ndarray  # (Q, I) in [0, 1]
    cluster_hard: np.ndarray  # (Q, I) in {0, 1}
    thresholds: np.ndarray  # (Q, I)


def forward(
    est_h,
    spec,
    params,
    p_max,
    hard_gate=False,
    normalize_input=True,
    norm_correct_power=False,
):
    """Run the pipeline on one (QM, I) estimate in inference mode."""
    graph = forward_graph(
        est_h[None, :, :],
        spec,
        params,
        p_max,
        training=False,
        hard_gate=hard_gate,
        normalize_input=normalize_input,
        norm_correct_power=norm_correct_power,
    )
    v = graph["re"].value[0] + 1j * graph["im"].value[0]
    soft = graph["gate"].value[0]
    return ForwardResult(
        beamformer=v,
        cluster_soft=soft,
        cluster_hard=(soft >= HARD_GATE_THRESHOLD).astype(float),
        thresholds=graph["thresholds"].value[0],
    )


# ---------------------------------------------------------------------------
# checkpoints


def _spec_to_dict(spec):
    return {
        "layers": [asdict(layer) for layer in spec.layers],
        "gate_steepness": spec.gate_steepness,
    }


def _spec_from_dict(d):
    layers = [
        LayerSpec(
            kernel=tuple(l["kernel"]),
            padding=tuple(l["padding"]),
            stride=tuple(l["stride"]),
            out_channels=l["out_channels"],
            activation=l["activation"],
        )
        for l in d["layers"]
    ]
    return NetworkSpec(layers=layers, gate_steepness=d["gate_steepness"])


def save_checkpoint(path, spec, params, extra=None):
    """Versioned .npz checkpoint with the architecture embedded as JSON."""
    meta = {
        "version": _CHECKPOINT_VERSION,
        "spec": _spec_to_dict(spec),
        "extra": extra or {},
    }
    arrays = dict(trainable(params))
    for l in range(len(params.bn_mean)):
        arrays[f"bn{l}.mean"] = params.bn_mean[l]
        arrays[f"bn{l}.var"] = params.bn_var[l]
    np.savez(path, meta=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path):
    """Returns (spec, params, extra) from a save_checkpoint file."""
    data = np.load(path, allow_pickle=False)
    meta = json.loads(str(data["meta"]))
    if meta["version"] != _CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {meta['version']}")
    spec = _spec_from_dict(meta["spec"])
    n_layers = len(spec.layers)
    params = NetParams(
        conv_w=[data[f"conv{l}.weight"] for l in range(n_layers)],
        conv_b=[data[f"conv{l}.bias"] for l in range(n_layers)],
        bn_scale=[data[f"bn{l}.scale"] for l in range(n_layers)],
        bn_shift=[data[f"bn{l}.shift"] for l in range(n_layers)],
        bn_mean=[data[f"bn{l}.mean"] for l in range(n_layers)],
        bn_var=[data[f"bn{l}.var"] for l in range(n_layers)],
        identity_w=data["identity.weight"],
        identity_b=data["identity.bias"],
        attention_w=data["attention.weight"],
        attention_b=data["attention.bias"],
    )
    return spec, params, meta["extra"]
