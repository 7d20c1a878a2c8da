"""CondNet, U-Net translator, generator and weight-shared discriminator.

Layer plan of the default bundle (3x3 kernels unless noted, leaky ReLU 0.2
after every conv except the output projection and the logit):

    cond_net      3->12 s2, 12->24 s2, 24->24 s2           (h/8, 24 ch)
    mcg           fc_in 48->24, fc_y 48->24, fc_out 24->48
    encoder       3->6, 6->6 | 6->12 s2, 12->12 | 12->24 s2, 24->24 | 24->48 s2, 48->48
    decoder x3    upsample x2, conv c_prev->c, PSM(skip, up), concat, conv 2c->c, CCM
    output        conv 6->3, CCM, sigmoid
    discriminator shared cond_net, 24->48 s2, 48->48 s2, 1x1 48->1, spatial mean, sigmoid

Every CCM composes its retouch curve three times; each composition owns a
two-layer coefficient head (code 48 -> hidden 679 -> 4c). The hidden width
is what brings the whole bundle to 892,060 scalars.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .blocks import (
    LEAKY_SLOPE,
    CCMParams,
    CCMStage,
    Conv,
    Linear,
    MCGParams,
    PSMParams,
    ccm_forward,
    mcg_forward,
    psm_forward,
)

DEFAULT_PARAM_COUNT = 892_060
TARGET_PARAM_COUNT = 891_527
SCALE_MODES = ("fan-in-scaled", "paper-literal")


@dataclass(frozen=True)
class ArchConfig:
    cond_channels: tuple[int, ...] = (12, 24, 24)
    enc_channels: tuple[int, ...] = (6, 12, 24, 48)
    d_code: int = 48
    ccm_depth: int = 3
    ccm_hidden: int = 679
    disc_channels: tuple[int, ...] = (48, 48)
    normalize_input: int = 1

    @property
    def d_feat(self) -> int:
        return self.cond_channels[-1]


@dataclass
class CondNetParams:
    convs: list[Conv]


@dataclass
class DecoderStage:
    up: Conv
    psm: PSMParams
    fuse: Conv
    ccm: CCMParams


@dataclass
class TranslatorParams:
    encoder: list[tuple[Conv, Conv]]
    decoder: list[DecoderStage]
    proj: Conv
    proj_ccm: CCMParams


@dataclass
class DiscriminatorParams:
    cond_net: CondNetParams
    convs: list[Conv]
    logit: Conv


@dataclass
class GeneratorBundle:
    cond_net: CondNetParams
    mcg: MCGParams
    translator: TranslatorParams
    discriminator: DiscriminatorParams
    arch: ArchConfig = field(default_factory=ArchConfig)

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        """Yield (dotted name, tensor); the shared CondNet appears once."""
        yield from _walk("cond_net", self.cond_net)
        yield from _walk("mcg", self.mcg)
        yield from _walk("translator", self.translator)
        d = self.discriminator
        yield from _walk("discriminator.convs", d.convs)
        yield from _walk("discriminator.logit", d.logit)

    def state_dict(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def generator_parameters(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.named_parameters()
                if not k.startswith("discriminator.")}

    def discriminator_parameters(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.named_parameters()
                if k.startswith(("discriminator.", "cond_net."))}

    def zero_grad(self) -> None:
        for _, p in self.named_parameters():
            p.grad = None

    def astype(self, dtype) -> "GeneratorBundle":
        """Cast every parameter in place (gradient checks run in float64)."""
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self


def _walk(prefix: str, obj) -> Iterator[tuple[str, Tensor]]:
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from _walk(f"{prefix}.{i}", item)
    elif isinstance(obj, (Conv, Linear)):
        for k, v in obj.parameters().items():
            yield f"{prefix}.{k}", v
    elif hasattr(obj, "__dataclass_fields__"):
        for k in obj.__dataclass_fields__:
            if k == "arch":
                continue
            yield from _walk(f"{prefix}.{k}", getattr(obj, k))


# -- initialisation ----------------------------------------------------------


class _Init:
    def __init__(self, rng: np.random.Generator, scale_mode: str, dtype):
        if scale_mode not in SCALE_MODES:
            raise ValueError(f"unknown scale_mode {scale_mode!r}; expected one of {SCALE_MODES}")
        self.rng = rng
        self.scale_mode = scale_mode
        self.dtype = dtype

    def _weight(self, shape, fan_in: int) -> Tensor:
        std = 1.0 if self.scale_mode == "paper-literal" else 1.0 / np.sqrt(fan_in)
        w = self.rng.standard_normal(shape) * std
        return Tensor(w.astype(self.dtype), requires_grad=True)

    def _bias(self, n: int) -> Tensor:
        return Tensor(np.zeros(n, dtype=self.dtype), requires_grad=True)

    def conv(self, cin: int, cout: int, k: int = 3, stride: int = 1) -> Conv:
        return Conv(self._weight((cout, cin, k, k), cin * k * k), self._bias(cout), stride)

    def linear(self, din: int, dout: int) -> Linear:
        return Linear(self._weight((dout, din), din), self._bias(dout))

    def ccm(self, d_code: int, hidden: int, channels: int, depth: int) -> CCMParams:
        return CCMParams([
            CCMStage(self.linear(d_code, hidden), self.linear(hidden, 4 * channels))
            for _ in range(depth)
        ])


def init_params(seed: int = 0, scale_mode: str = "fan-in-scaled",
                arch: ArchConfig | None = None, dtype=np.float32,
                rng: np.random.Generator | None = None) -> GeneratorBundle:
    """Draw a fresh bundle: normal weights, zero biases, deterministic per seed.

    ``fan-in-scaled`` uses std 1/sqrt(fan_in); ``paper-literal`` uses std 1.
    """
    arch = arch or ArchConfig()
    if rng is None:
        rng = np.random.Generator(np.random.Philox(seed))
    init = _Init(rng, scale_mode, dtype)

    cond = []
    cin = 3
    for cout in arch.cond_channels:
        cond.append(init.conv(cin, cout, stride=2))
        cin = cout
    cond_net = CondNetParams(cond)

    d = arch.d_feat
    mcg = MCGParams(init.linear(2 * d, d), init.linear(2 * d, d), init.linear(d, arch.d_code))

    encoder = []
    cin = 3
    for i, cout in enumerate(arch.enc_channels):
        encoder.append((init.conv(cin, cout, stride=1 if i == 0 else 2), init.conv(cout, cout)))
        cin = cout

    decoder = []
    widths = list(arch.enc_channels)
    for c_prev, c in zip(widths[::-1][:-1], widths[::-1][1:]):
        decoder.append(DecoderStage(
            up=init.conv(c_prev, c),
            psm=PSMParams(init.conv(c, c), init.conv(c, c)),
            fuse=init.conv(2 * c, c),
            ccm=init.ccm(arch.d_code, arch.ccm_hidden, c, arch.ccm_depth),
        ))
    translator = TranslatorParams(
        encoder=encoder,
        decoder=decoder,
        proj=init.conv(widths[0], 3),
        proj_ccm=init.ccm(arch.d_code, arch.ccm_hidden, 3, arch.ccm_depth),
    )

    head = []
    cin = d
    for cout in arch.disc_channels:
        head.append(init.conv(cin, cout, stride=2))
        cin = cout
    disc = DiscriminatorParams(cond_net=cond_net, convs=head, logit=init.conv(cin, 1, k=1))

    return GeneratorBundle(cond_net, mcg, translator, disc, arch)


def param_count(bundle) -> int:
    """Number of learnable scalars; shared weights are counted once."""
    if isinstance(bundle, GeneratorBundle):
        tensors = [p for _, p in bundle.named_parameters()]
    else:
        tensors = [p for _, p in _walk("", bundle)]
    seen: set[int] = set()
    total = 0
    for t in tensors:
        if id(t) not in seen:
            seen.add(id(t))
            total += t.data.size
    return total


# -- forward passes ------------------------------------------------------------


def _check_image(x: Tensor, name: str) -> None:
    if x.ndim != 4 or x.shape[1] != 3:
        raise ValueError(f"{name} must be (n, 3, h, w), got {x.shape}")
    if x.shape[2] % 8 or x.shape[3] % 8:
        raise ValueError(f"{name} spatial dims must be divisible by 8, got {x.shape[2:]}")


def condnet_forward(image: Tensor, params: CondNetParams) -> Tensor:
    """(n, 3, h, w) -> (n, d_feat, h/8, w/8)."""
    _check_image(image, "condnet input")
    h = image
    last = len(params.convs) - 1
    for i, conv in enumerate(params.convs):
        h = conv(h)
        if i < last:
            h = ad.leaky_relu(h, LEAKY_SLOPE)
    return h


def modulation_code(x: Tensor, y_ref: Tensor, bundle: GeneratorBundle) -> Tensor:
    x_c = ad.global_avg_pool(condnet_forward(x, bundle.cond_net))
    y_c = ad.global_avg_pool(condnet_forward(y_ref, bundle.cond_net))
    return mcg_forward(x_c, y_c, bundle.mcg)


def _standardize(x: Tensor, eps: float = 1e-5) -> Tensor:
    mean = x.mean(axis=(1, 2, 3), keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=(1, 2, 3), keepdims=True)
    return centered / ad.sqrt(var + eps)


def translate(x: Tensor, code: Tensor, params: TranslatorParams,
              normalize_input: bool = True) -> Tensor:
    """U-Net pass of ``x`` modulated by ``code``; returns pre-activation logits."""
    act = lambda t: ad.leaky_relu(t, LEAKY_SLOPE)  # noqa: E731
    skips = []
    x_in = _standardize(x) if normalize_input else x
    h = x_in
    for conv_a, conv_b in params.encoder:
        h = act(conv_b(act(conv_a(h))))
        skips.append(h)
    skips.pop()
    for stage in params.decoder:
        up = act(stage.up(ad.upsample_nearest(h, 2)))
        mod = psm_forward(skips.pop(), up, stage.psm)
        h = act(stage.fuse(ad.concat_channels(mod, up)))
        h = ccm_forward(h, code, stage.ccm)
    # image-level skip: the projection refines the (standardised) input
    out = params.proj(h) + x_in
    return ccm_forward(out, code, params.proj_ccm)


def generator(x: Tensor, y_ref: Tensor, bundle: GeneratorBundle) -> Tensor:
    """Enhance ``x`` in the style of ``y_ref``. Output lies in [0, 1]."""
    _check_image(x, "generator input")
    _check_image(y_ref, "reference")
    if x.shape[0] != y_ref.shape[0]:
        raise ValueError(f"batch mismatch: input {x.shape}, reference {y_ref.shape}")
    code = modulation_code(x, y_ref, bundle)
    return ad.sigmoid(translate(x, code, bundle.translator, bool(bundle.arch.normalize_input)))


def discriminator_logit(image: Tensor, bundle: GeneratorBundle) -> Tensor:
    d = bundle.discriminator
    h = condnet_forward(image, d.cond_net)
    for conv in d.convs:
        h = ad.leaky_relu(conv(ad.leaky_relu(h, LEAKY_SLOPE)), LEAKY_SLOPE)
    logit = d.logit(h)
    return logit.mean(axis=(1, 2, 3))


def discriminator(image: Tensor, bundle: GeneratorBundle) -> Tensor:
    """Probability per sample that ``image`` is a real normal-light image."""
    _check_image(image, "discriminator input")
    return ad.sigmoid(discriminator_logit(image, bundle))
