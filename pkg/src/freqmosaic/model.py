"""The dual-path frequency-enhancement demosaicking network.

Forward graph: a 3x3 stem over the rearranged CFA input plus noise map,
M residual frequency-enhancement groups, and a 3x3 head back to RGB.  Each
group runs N1 residual channel-attention blocks, then splits the coarse
feature spectrum through two learned binary frequency selectors: one set of
bins is refined spatially by N2 more blocks, the other is attenuated in the
fourier domain by a suppressor mask predicted from the difference between
the feature spectrum and the CFA input spectrum.  Per-group 1x1 restorers
map intermediate features to RGB for the multi-level frequency loss.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ComplexTensor, Tensor
from .bayer import CfaImage, make_noise_map, rearrange_input
from .errors import CheckpointError, ContractViolation


@dataclass
class ModelConfig:
    channels: int = 16            # feature width C
    groups: int = 2               # M
    n_coarse: int = 2             # N1, blocks before frequency selection
    n_refine: int = 2             # N2, blocks on the generation path
    selector_downscale: int = 8   # s, selectors live at (H/s, W/s)
    rcab_reduction: int = 4       # channel-attention bottleneck ratio
    train_height: int = 128
    train_width: int = 128
    kernel_size: int = 3

    def __post_init__(self):
        if self.channels % self.rcab_reduction:
            raise ContractViolation("channels must be divisible by rcab_reduction")
        if self.selector_downscale < 1:
            raise ContractViolation("selector_downscale must be >= 1")
        if self.kernel_size != 3:
            raise ContractViolation("kernel_size is fixed at 3")
        for d in (self.train_height, self.train_width):
            if d % 2 or d % self.selector_downscale:
                raise ContractViolation(
                    "train dims must be even and divisible by selector_downscale")

    @property
    def blocks_per_group(self):
        return self.n_coarse + self.n_refine


@dataclass
class Conv:
    weight: Tensor
    bias: Tensor

    @property
    def padding(self):
        return (self.weight.shape[2] - 1) // 2


@dataclass
class RcabParams:
    conv1: Conv
    conv2: Conv
    ca_down: Conv  # 1x1, C -> C/r
    ca_up: Conv    # 1x1, C/r -> C


@dataclass
class FfdParams:
    conv1: Conv  # 1x1, (2C+2) -> C
    conv2: Conv  # 1x1, C -> C


@dataclass
class GroupParams:
    rcabs: list          # N1 coarse blocks followed by N2 refine blocks
    s_lr_gn: Tensor      # [1, H/s, W/s] generation-path selector logits
    s_lr_sp: Tensor      # [1, H/s, W/s] suppression-path selector logits
    ffd: FfdParams
    fuse: Conv           # 3x3, 2C -> C
    restorer: Conv       # 1x1, C -> 3


@dataclass
class ModelParams:
    w_init: Conv         # 3x3, 4 -> C
    groups: list = field(default_factory=list)
    w_final: Conv = None  # 3x3, C -> 3


def _init_conv(rng, cout, cin, k) -> Conv:
    # uniform with Var = 1/fan_in; biases start at zero
    fan_in = cin * k * k
    bound = np.sqrt(3.0 / fan_in)
    w = Tensor(rng.uniform(-bound, bound, size=(cout, cin, k, k)), requires_grad=True)
    b = Tensor(np.zeros(cout), requires_grad=True)
    return Conv(w, b)


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Deterministic parameter initialization.

    Conv weights are fan-in-scaled uniform, biases zero; selector logits
    start at +0.1 so every initial mask passes all frequencies.
    """
    rng = np.random.default_rng(seed)
    c = config.channels
    k = config.kernel_size
    sel_h = config.train_height // config.selector_downscale
    sel_w = config.train_width // config.selector_downscale

    params = ModelParams(w_init=_init_conv(rng, c, 4, k))
    for _ in range(config.groups):
        rcabs = []
        for _ in range(config.blocks_per_group):
            rcabs.append(RcabParams(
                conv1=_init_conv(rng, c, c, k),
                conv2=_init_conv(rng, c, c, k),
                ca_down=_init_conv(rng, c // config.rcab_reduction, c, 1),
                ca_up=_init_conv(rng, c, c // config.rcab_reduction, 1),
            ))
        group = GroupParams(
            rcabs=rcabs,
            s_lr_gn=Tensor(np.full((1, sel_h, sel_w), 0.1), requires_grad=True),
            s_lr_sp=Tensor(np.full((1, sel_h, sel_w), 0.1), requires_grad=True),
            ffd=FfdParams(
                conv1=_init_conv(rng, c, 2 * c + 2, 1),
                conv2=_init_conv(rng, c, c, 1),
            ),
            fuse=_init_conv(rng, c, 2 * c, k),
            restorer=_init_conv(rng, 3, c, 1),
        )
        params.groups.append(group)
    params.w_final = _init_conv(rng, 3, c, k)
    return params


def named_parameters(params: ModelParams):
    """(name, Tensor) pairs in the canonical checkpoint order."""
    out = [("w_init.weight", params.w_init.weight), ("w_init.bias", params.w_init.bias)]
    for i, g in enumerate(params.groups):
        for j, r in enumerate(g.rcabs):
            for tag, conv in (("conv1", r.conv1), ("conv2", r.conv2),
                              ("ca_down", r.ca_down), ("ca_up", r.ca_up)):
                out.append((f"groups.{i}.rcabs.{j}.{tag}.weight", conv.weight))
                out.append((f"groups.{i}.rcabs.{j}.{tag}.bias", conv.bias))
        out.append((f"groups.{i}.s_lr_gn", g.s_lr_gn))
        out.append((f"groups.{i}.s_lr_sp", g.s_lr_sp))
        for tag, conv in (("conv1", g.ffd.conv1), ("conv2", g.ffd.conv2)):
            out.append((f"groups.{i}.ffd.{tag}.weight", conv.weight))
            out.append((f"groups.{i}.ffd.{tag}.bias", conv.bias))
        out.append((f"groups.{i}.fuse.weight", g.fuse.weight))
        out.append((f"groups.{i}.fuse.bias", g.fuse.bias))
        out.append((f"groups.{i}.restorer.weight", g.restorer.weight))
        out.append((f"groups.{i}.restorer.bias", g.restorer.bias))
    out.append(("w_final.weight", params.w_final.weight))
    out.append(("w_final.bias", params.w_final.bias))
    return out


def _apply_conv(x: Tensor, conv: Conv) -> Tensor:
    return ad.conv2d(x, conv.weight, conv.bias, conv.padding)


def rcab_forward(x: Tensor, p: RcabParams) -> Tensor:
    """Residual channel-attention block: x + CA(conv(relu(conv(x))))."""
    z = _apply_conv(x, p.conv1)
    z = ad.relu(z)
    z = _apply_conv(z, p.conv2)
    s = ad.global_avg_pool(z)
    s = ad.relu(_apply_conv(s, p.ca_down))
    s = ad.sigmoid(_apply_conv(s, p.ca_up))
    z = ad.channel_scale(z, s)
    return ad.add(x, z)


def selector_mask(s_lr: Tensor, h: int, w: int) -> Tensor:
    """Upsample low-resolution selector logits and binarize at zero."""
    return ad.binarize_ste(ad.bilinear_upsample(s_lr, h, w))


def select_frequencies(f_coarse: Tensor, s_lr: Tensor):
    """Mask the spectrum of f_coarse with a learned binary selector.

    Returns (mask, selected spectrum); the same [1,H,W] mask multiplies
    every channel.
    """
    _, h, w = f_coarse.shape
    mask = selector_mask(s_lr, h, w)
    return mask, ad.complex_mul(ad.fft2(f_coarse), mask)


def ffd_forward(f_sp_sel: ComplexTensor, f_cfa_sel: ComplexTensor, p: FfdParams) -> Tensor:
    """Predict a [0,1] suppressor from feature vs CFA spectrum differences.

    Real and imaginary parts of both selected spectra are stacked into
    (2C+2) channels and passed through two 1x1 convolutions with a relu in
    between; a sigmoid maps the result into [0,1].
    """
    stack = ad.concat_channels(f_sp_sel.re, f_sp_sel.im, f_cfa_sel.re, f_cfa_sel.im)
    h = ad.relu(_apply_conv(stack, p.conv1))
    return ad.sigmoid(_apply_conv(h, p.conv2))


def sfe_forward(f_coarse: Tensor, cfa_plane: Tensor, group: GroupParams,
                n_coarse: int, suppressor_override: Tensor | None = None):
    """Selective frequency enhancement: returns (f_gn, f_sp).

    Generation path: selected bins go back to the spatial domain and through
    the group's refine blocks.  Suppression path: selected bins are scaled
    by the suppressor predicted from the CFA spectrum, then inverted.  The
    suppressor_override hook replaces the predicted suppressor (diagnostics
    and limit tests only).
    """
    _, h, w = f_coarse.shape
    spec = ad.fft2(f_coarse)

    mask_gn = selector_mask(group.s_lr_gn, h, w)
    f_gn_sel = ad.complex_mul(spec, mask_gn)
    x = ad.complex_real(ad.ifft2(f_gn_sel))
    for p in group.rcabs[n_coarse:]:
        x = rcab_forward(x, p)
    f_gn = x

    mask_sp = selector_mask(group.s_lr_sp, h, w)
    f_sp_sel = ad.complex_mul(spec, mask_sp)
    f_cfa_sel = ad.complex_mul(ad.fft2(cfa_plane), mask_sp)
    suppressor = suppressor_override
    if suppressor is None:
        suppressor = ffd_forward(f_sp_sel, f_cfa_sel, group.ffd)
    f_sp = ad.complex_real(ad.ifft2(ad.complex_mul(f_sp_sel, suppressor)))
    return f_gn, f_sp


def rfeg_forward(f_prev: Tensor, cfa_plane: Tensor, group: GroupParams,
                 n_coarse: int, suppressor_override: Tensor | None = None) -> Tensor:
    """One residual frequency-enhancement group."""
    x = f_prev
    for p in group.rcabs[:n_coarse]:
        x = rcab_forward(x, p)
    f_gn, f_sp = sfe_forward(x, cfa_plane, group, n_coarse, suppressor_override)
    return _apply_conv(ad.concat_channels(f_gn, f_sp), group.fuse)


def dfenet_forward(cfa: CfaImage, sigma: float, params: ModelParams, config: ModelConfig,
                   suppressor_override: Tensor | None = None):
    """Full forward pass.

    Returns (i_dm, intermediates): the demosaicked [3,H,W] output and the
    per-group restorer outputs used by the frequency loss.  Nothing is
    clamped here; clamping to [0,1] happens only at image-export time.
    """
    h, w = cfa.shape
    s = config.selector_downscale
    if h % 2 or w % 2 or h % s or w % s:
        raise ContractViolation(
            f"input {h}x{w} must be even and divisible by selector_downscale={s}")

    inp = np.concatenate([rearrange_input(cfa), make_noise_map(sigma, h, w)], axis=0)
    x = _apply_conv(Tensor(inp), params.w_init)
    cfa_plane = Tensor(cfa.plane[None, :, :])

    intermediates = []
    for group in params.groups:
        x = rfeg_forward(x, cfa_plane, group, config.n_coarse, suppressor_override)
        intermediates.append(_apply_conv(x, group.restorer))
    i_dm = _apply_conv(x, params.w_final)
    return i_dm, intermediates


def demosaic_image(cfa: CfaImage, sigma: float, params: ModelParams, config: ModelConfig) -> np.ndarray:
    """Inference convenience: run the network and clamp to an [H,W,3] image."""
    i_dm, _ = dfenet_forward(cfa, sigma, params, config)
    return np.clip(i_dm.data.transpose(1, 2, 0), 0.0, 1.0)


# ---------------------------------------------------------------------------
# checkpoint format
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"DFEN"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: ModelParams, config: ModelConfig) -> None:
    """Write magic, version, config u32s, FMT1 tensor frames in canonical
    order, and a trailing CRC32 over every preceding byte."""
    import io

    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    buf.write(struct.pack(
        "<8I", config.channels, config.groups, config.n_coarse, config.n_refine,
        config.selector_downscale, config.rcab_reduction,
        config.train_height, config.train_width))
    for _, tensor in named_parameters(params):
        ad.write_tensor(buf, tensor)
    payload = buf.getvalue()
    with open(path, "wb") as fp:
        fp.write(payload)
        fp.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))


def load_checkpoint(path):
    """Read and CRC-verify a checkpoint; returns (config, params)."""
    import io

    with open(path, "rb") as fp:
        blob = fp.read()
    if len(blob) < 4 + 4 + 32 + 4:
        raise CheckpointError("checkpoint truncated")
    payload, (stored_crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != stored_crc:
        raise CheckpointError("checkpoint CRC32 mismatch")
    fp = io.BytesIO(payload)
    if fp.read(4) != CHECKPOINT_MAGIC:
        raise CheckpointError("bad checkpoint magic")
    (version,) = struct.unpack("<I", fp.read(4))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    c, m, n1, n2, s, r, th, tw = struct.unpack("<8I", fp.read(32))
    config = ModelConfig(channels=c, groups=m, n_coarse=n1, n_refine=n2,
                         selector_downscale=s, rcab_reduction=r,
                         train_height=th, train_width=tw)
    params = init_params(config, seed=0)
    try:
        for name, tensor in named_parameters(params):
            loaded = ad.read_tensor(fp)
            if loaded.shape != tensor.shape:
                raise CheckpointError(f"shape mismatch for {name}")
            tensor.data = loaded.data
    except (ValueError, struct.error) as exc:
        raise CheckpointError(f"malformed tensor stream: {exc}") from exc
    if fp.read(1):
        raise CheckpointError("trailing bytes after parameters")
    return config, params
