"""Statistic-matching style transfer: stats math, losses, and the networks.

Style is carried by per-channel feature statistics. The content encoder
produces feature maps; the style encoder regresses a (mean, std) vector per
channel; mixing re-normalizes the content features to carry the target
statistics; the decoder maps the mixed features back to an image. Losses
compare feature maps and their statistics through a fixed feature extractor.

The loss extractor here is a seeded, randomly initialized four-stage
convolutional network (taps after every stage, content tap at the last); a
pretrained extractor in the project checkpoint format can be loaded in its
place.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from stylemix.autodiff import (
    ChannelStats,
    ShapeError,
    Tensor,
    as_tensor,
    conv2d,
    fully_connected,
    global_avg_pool,
    leaky_relu,
    relu,
    sqrt,
    upsample_nearest,
)
from stylemix.fontnet import NetworkParams

STAT_EPSILON = 1e-8


# ---------------------------------------------------------------------------
# channel statistics and mixing
# ---------------------------------------------------------------------------


def channel_stats(f: Tensor, epsilon: float = 0.0) -> ChannelStats:
    """Spatial mean and population std per (batch, channel) of a [B,C,H,W] map.

    ``epsilon`` is added under the square root; with epsilon 0 a constant
    channel has std exactly 0.
    """
    f = as_tensor(f)
    if f.ndim != 4:
        raise ShapeError(f"channel_stats expects a [B,C,H,W] map, got {f.shape}")
    if epsilon < 0:
        raise ValueError(f"channel_stats: epsilon must be >= 0, got {epsilon}")
    mean = f.mean(axis=(2, 3))  # [B, C]
    centered = f - mean.reshape(f.shape[0], f.shape[1], 1, 1)
    var = (centered * centered).mean(axis=(2, 3))
    return ChannelStats(mean=mean, std=sqrt(var + epsilon))


def _stat_plane(value, channels: int, name: str) -> Tensor:
    """Lift a stat vector ([C] or [B,C], Tensor or array) to a [*,C,1,1] tensor."""
    t = as_tensor(value)
    if t.ndim == 1:
        if t.shape[0] != channels:
            raise ShapeError(f"{name}: expected {channels} channels, got {t.shape[0]}")
        return t.reshape(1, channels, 1, 1)
    if t.ndim == 2:
        if t.shape[1] != channels:
            raise ShapeError(f"{name}: expected {channels} channels, got {t.shape[1]}")
        return t.reshape(t.shape[0], channels, 1, 1)
    raise ShapeError(f"{name}: stat vector must be [C] or [B,C], got {t.shape}")


def statistic_match(f_con: Tensor, target: ChannelStats,
                    epsilon: float = STAT_EPSILON) -> Tensor:
    """Re-normalize content features to carry the target per-channel stats.

    out = (f - mean(f)) / std_eps(f) * target.std + target.mean, computed per
    channel across spatial positions; ``epsilon`` guards the denominator so
    constant channels map to the target mean.
    """
    f_con = as_tensor(f_con)
    if epsilon <= 0:
        raise ValueError(f"statistic_match: epsilon must be > 0, got {epsilon}")
    own = channel_stats(f_con, epsilon)
    c = f_con.shape[1]
    mean_t = _stat_plane(target.mean, c, "statistic_match target mean")
    std_t = _stat_plane(target.std, c, "statistic_match target std")
    mean_o = own.mean.reshape(f_con.shape[0], c, 1, 1)
    std_o = own.std.reshape(f_con.shape[0], c, 1, 1)
    return (f_con - mean_o) / std_o * std_t + mean_t


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    return alpha


def _blend(a, b, alpha: float) -> Tensor:
    return as_tensor(a) * (1.0 - alpha) + as_tensor(b) * alpha


def tradeoff_mix(f_con: Tensor, con_stats: ChannelStats, sty_stats: ChannelStats,
                 alpha: float, epsilon: float = STAT_EPSILON) -> Tensor:
    """Statistic match against a (1-alpha) content / alpha style stat blend.

    alpha 0 reproduces the content image's own style, alpha 1 is the fully
    stylized match.
    """
    alpha = _check_alpha(alpha)
    blended = ChannelStats(
        mean=_blend(con_stats.mean, sty_stats.mean, alpha),
        std=_blend(con_stats.std, sty_stats.std, alpha),
    )
    return statistic_match(f_con, blended, epsilon)


def style_interpolate(f_con: Tensor, stats1: ChannelStats, stats2: ChannelStats,
                      alpha: float, epsilon: float = STAT_EPSILON) -> Tensor:
    """Statistic match against an interpolation between two style stats."""
    alpha = _check_alpha(alpha)
    blended = ChannelStats(
        mean=_blend(stats1.mean, stats2.mean, alpha),
        std=_blend(stats1.std, stats2.std, alpha),
    )
    return statistic_match(f_con, blended, epsilon)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def content_loss(f_gen: Tensor, f_con: Tensor) -> Tensor:
    """Squared Euclidean distance between feature maps, normalized by size."""
    f_gen, f_con = as_tensor(f_gen), as_tensor(f_con)
    if f_gen.shape != f_con.shape:
        raise ShapeError(
            f"content_loss: feature shapes differ, {f_gen.shape} vs {f_con.shape}"
        )
    diff = f_gen - f_con
    return (diff * diff).sum() / f_gen.size


def style_loss(f_gen_layers, f_sty_layers, epsilon: float = 0.0) -> Tensor:
    """Sum over layers of squared distances between channel means and stds."""
    if len(f_gen_layers) != len(f_sty_layers):
        raise ShapeError(
            f"style_loss: {len(f_gen_layers)} generated layers vs "
            f"{len(f_sty_layers)} style layers"
        )
    total = Tensor(0.0)
    for f_gen, f_sty in zip(f_gen_layers, f_sty_layers):
        gen = channel_stats(f_gen, epsilon)
        sty = channel_stats(f_sty, epsilon)
        dm = gen.mean - sty.mean
        ds = gen.std - sty.std
        total = total + (dm * dm).sum() + (ds * ds).sum()
    return total


def tv_loss(image: Tensor) -> Tensor:
    """Anisotropic squared total variation, normalized by element count."""
    image = as_tensor(image)
    if image.ndim != 4:
        raise ShapeError(f"tv_loss expects a [B,C,H,W] image, got {image.shape}")
    total = Tensor(0.0)
    if image.shape[2] >= 2:
        dh = image[:, :, 1:, :] - image[:, :, :-1, :]
        total = total + (dh * dh).sum()
    if image.shape[3] >= 2:
        dw = image[:, :, :, 1:] - image[:, :, :, :-1]
        total = total + (dw * dw).sum()
    return total / image.size


@dataclass(frozen=True)
class LossWeights:
    content: float = 1.0
    style: float = 5.0
    tv: float = 1e-5

    def __post_init__(self):
        if self.content < 0 or self.style < 0 or self.tv < 0:
            raise ValueError(f"loss weights must be >= 0, got {self}")


def total_loss(content: Tensor, style: Tensor, tv: Tensor,
               weights: LossWeights = LossWeights()) -> Tensor:
    """Weighted combination of the content, style, and smoothness terms."""
    return (as_tensor(content) * weights.content
            + as_tensor(style) * weights.style
            + as_tensor(tv) * weights.tv)


# ---------------------------------------------------------------------------
# networks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NstConfig:
    """Desk-scale network plan.

    conv_plan lists the shared (kernel, stride, channels) convolution blocks
    of both encoders; the mixing layer width is the last entry's channel
    count and the style encoder's fully connected head emits twice that many
    values (mean then std).
    """

    conv_plan: tuple = ((3, 1, 16), (3, 2, 32), (3, 2, 64))
    n_style_res: int = 1
    n_content_res: int = 4
    leaky_slope: float = 0.2
    image_channels: int = 3
    stat_epsilon: float = STAT_EPSILON

    @property
    def mix_channels(self) -> int:
        return self.conv_plan[-1][2]

    @property
    def downsample_factor(self) -> int:
        factor = 1
        for _, stride, _ in self.conv_plan:
            factor *= stride
        return factor


def _he_std(cin: int, k: int) -> float:
    return float(np.sqrt(2.0 / (cin * k * k)))


class NstNet:
    """Style encoder + content encoder + statistic mixer + decoder."""

    def __init__(self, config: NstConfig, params: NetworkParams):
        self.config = config
        self.params = params

    @classmethod
    def initialize(cls, config: NstConfig, seed: int = 0) -> "NstNet":
        rng = np.random.default_rng([811, seed])
        params = NetworkParams()

        def conv(name, cin, cout, k):
            params.add(f"{name}.kernel",
                       rng.normal(0.0, _he_std(cin, k), size=(cout, cin, k, k)))
            params.add(f"{name}.bias", np.zeros(cout))

        def res_block(name, c, k):
            conv(f"{name}.conv0", c, c, k)
            conv(f"{name}.conv1", c, c, k)

        for prefix, n_res in (("style_enc", config.n_style_res),
                              ("content_enc", config.n_content_res)):
            cin = config.image_channels
            for i, (k, _, cout) in enumerate(config.conv_plan):
                conv(f"{prefix}.conv{i}", cin, cout, k)
                cin = cout
            for i in range(n_res):
                res_block(f"{prefix}.res{i}", cin, config.conv_plan[-1][0])

        c_mix = config.mix_channels
        fc_w = rng.normal(0.0, np.sqrt(1.0 / c_mix), size=(2 * c_mix, c_mix))
        params.add("style_enc.fc.weight", fc_w)
        # std head starts at 1 so the initial mixing is scale-preserving
        fc_b = np.zeros(2 * c_mix)
        fc_b[c_mix:] = 1.0
        params.add("style_enc.fc.bias", fc_b)

        for i in range(config.n_content_res):
            res_block(f"decoder.res{i}", c_mix, config.conv_plan[-1][0])
        strided = [i for i, (_, s, _) in enumerate(config.conv_plan) if s > 1]
        cin = c_mix
        for j, block_idx in enumerate(reversed(strided)):
            k = config.conv_plan[block_idx][0]
            cout = (config.conv_plan[block_idx - 1][2] if block_idx >= 1
                    else config.image_channels)
            conv(f"decoder.up{j}", cin, cout, k)
            cin = cout
        conv("decoder.out", cin, config.image_channels, config.conv_plan[0][0])
        return cls(config, params)

    # -- checkpoint state ----------------------------------------------------

    def state_arrays(self) -> dict:
        state = {name: t.data for name, t in self.params.items()}
        cfg = self.config
        meta = [len(cfg.conv_plan)]
        for k, s, c in cfg.conv_plan:
            meta.extend([k, s, c])
        meta.extend([cfg.n_style_res, cfg.n_content_res, cfg.image_channels])
        state["meta.nst"] = np.array(meta, dtype=np.float64)
        return state

    @classmethod
    def from_state(cls, arrays: dict) -> "NstNet":
        meta = arrays.get("meta.nst")
        if meta is None:
            raise ValueError("checkpoint does not describe a style transfer model (no meta.nst)")
        meta = [int(v) for v in meta]
        n_blocks = meta[0]
        plan = tuple(tuple(meta[1 + 3 * i: 4 + 3 * i]) for i in range(n_blocks))
        config = NstConfig(conv_plan=plan, n_style_res=meta[1 + 3 * n_blocks],
                           n_content_res=meta[2 + 3 * n_blocks],
                           image_channels=meta[3 + 3 * n_blocks])
        net = cls.initialize(config, seed=0)
        expected = set(net.state_arrays())
        if expected != set(arrays):
            raise ValueError("checkpoint tensors do not match the NST architecture")
        for name, tensor in net.params.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != tensor.shape:
                raise ValueError(
                    f"checkpoint tensor {name!r} has shape {arr.shape}, "
                    f"expected {tensor.shape}"
                )
            tensor.data = arr
        return net

    # -- forward -------------------------------------------------------------

    def _check_image(self, x, role: str) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
        cfg = self.config
        if x.ndim != 4 or x.shape[1] != cfg.image_channels:
            raise ShapeError(
                f"{role} image must be [B, {cfg.image_channels}, H, W], got {tuple(x.shape)}"
            )
        factor = cfg.downsample_factor
        if x.shape[2] < factor or x.shape[3] < factor:
            raise ShapeError(
                f"{role} image {tuple(x.shape)} smaller than the encoder's "
                f"downsampling factor {factor}"
            )
        return x

    def _conv_block(self, name: str, x: Tensor, stride: int, slope: float) -> Tensor:
        k = self.params[f"{name}.kernel"]
        out = conv2d(x, k, self.params[f"{name}.bias"], stride=stride,
                     padding=(k.shape[2] - 1) // 2)
        return leaky_relu(out, slope) if slope != 0.0 else relu(out)

    def _res_block(self, name: str, x: Tensor, slope: float) -> Tensor:
        out = self._conv_block(f"{name}.conv0", x, 1, slope)
        out = self._conv_block(f"{name}.conv1", out, 1, slope)
        return x + out

    def style_encode(self, x) -> ChannelStats:
        """Regress per-channel (mean, std) mixing targets from a style image."""
        x = self._check_image(x, "style")
        cfg = self.config
        out = x
        for i, (_, stride, _) in enumerate(cfg.conv_plan):
            out = self._conv_block(f"style_enc.conv{i}", out, stride, cfg.leaky_slope)
        for i in range(cfg.n_style_res):
            out = self._res_block(f"style_enc.res{i}", out, cfg.leaky_slope)
        pooled = global_avg_pool(out).reshape(out.shape[0], cfg.mix_channels)
        head = fully_connected(pooled, self.params["style_enc.fc.weight"],
                               self.params["style_enc.fc.bias"])
        return ChannelStats(mean=head[:, :cfg.mix_channels],
                            std=head[:, cfg.mix_channels:])

    def content_encode(self, x):
        """Content feature maps plus the spatial sizes eaten by each stride."""
        x = self._check_image(x, "content")
        cfg = self.config
        out = x
        sizes = []
        for i, (_, stride, _) in enumerate(cfg.conv_plan):
            if stride > 1:
                sizes.append((out.shape[2], out.shape[3]))
            out = self._conv_block(f"content_enc.conv{i}", out, stride, cfg.leaky_slope)
        for i in range(cfg.n_content_res):
            out = self._res_block(f"content_enc.res{i}", out, cfg.leaky_slope)
        return out, sizes

    def decode(self, f: Tensor, sizes) -> Tensor:
        """Map mixed features back to image space (linear output)."""
        cfg = self.config
        out = f
        for i in range(cfg.n_content_res):
            out = self._res_block(f"decoder.res{i}", out, 0.0)
        n_up = sum(1 for _, stride, _ in cfg.conv_plan if stride > 1)
        if len(sizes) != n_up:
            raise ShapeError(f"decode expects {n_up} recorded sizes, got {len(sizes)}")
        for i in range(n_up):
            out = upsample_nearest(out, 2)
            h, w = sizes[len(sizes) - 1 - i]
            out = out[:, :, :h, :w]
            out = self._conv_block(f"decoder.up{i}", out, 1, 0.0)
        k = self.params["decoder.out.kernel"]
        return conv2d(out, k, self.params["decoder.out.bias"], stride=1,
                      padding=(k.shape[2] - 1) // 2)

    def generate(self, content_img, stats: ChannelStats) -> Tensor:
        f, sizes = self.content_encode(content_img)
        mixed = statistic_match(f, stats, self.config.stat_epsilon)
        return self.decode(mixed, sizes)

    def forward(self, style_img, content_img) -> Tensor:
        """Stylize the content image with statistics from the style image."""
        return self.generate(content_img, self.style_encode(style_img))

    def forward_tradeoff(self, style_img, content_img, alpha: float) -> Tensor:
        """Blend the content image's own statistics against the style's."""
        con_stats = self.style_encode(content_img)
        sty_stats = self.style_encode(style_img)
        f, sizes = self.content_encode(content_img)
        mixed = tradeoff_mix(f, con_stats, sty_stats, alpha, self.config.stat_epsilon)
        return self.decode(mixed, sizes)

    def forward_interpolate(self, style1_img, style2_img, content_img,
                            alpha: float) -> Tensor:
        """Interpolate between two style statistics."""
        stats1 = self.style_encode(style1_img)
        stats2 = self.style_encode(style2_img)
        f, sizes = self.content_encode(content_img)
        mixed = style_interpolate(f, stats1, stats2, alpha, self.config.stat_epsilon)
        return self.decode(mixed, sizes)


# ---------------------------------------------------------------------------
# loss feature extractor
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExtractorConfig:
    stage_channels: tuple = (8, 16, 32, 64)
    kernel: int = 3
    stride: int = 2
    leaky_slope: float = 0.2
    image_channels: int = 3


class FeatureExtractor:
    """Fixed (non-trainable) staged conv network providing loss-layer taps.

    Style losses read all stage outputs; the content loss reads the last.
    Weights are seeded at construction or loaded from a checkpoint.
    """

    def __init__(self, config: ExtractorConfig = ExtractorConfig(), seed: int = 0,
                 weights: dict | None = None):
        self.config = config
        rng = np.random.default_rng([813, seed])
        self.weights: dict = {}
        cin = config.image_channels
        for i, cout in enumerate(config.stage_channels):
            k = config.kernel
            if weights is None:
                kernel = rng.normal(0.0, _he_std(cin, k), size=(cout, cin, k, k))
                bias = np.zeros(cout)
            else:
                kernel = np.asarray(weights[f"stage{i}.kernel"], dtype=np.float64)
                bias = np.asarray(weights[f"stage{i}.bias"], dtype=np.float64)
                if kernel.shape != (cout, cin, k, k) or bias.shape != (cout,):
                    raise ValueError(
                        f"extractor stage {i} weight shapes {kernel.shape}/{bias.shape} "
                        f"do not match the configuration"
                    )
            self.weights[f"stage{i}.kernel"] = Tensor(kernel)
            self.weights[f"stage{i}.bias"] = Tensor(bias)
            cin = cout

    @property
    def n_taps(self) -> int:
        return len(self.config.stage_channels)

    def taps(self, image) -> list:
        """All stage outputs, shallowest first."""
        out = image if isinstance(image, Tensor) else Tensor(np.asarray(image, dtype=np.float64))
        cfg = self.config
        results = []
        for i in range(self.n_taps):
            out = conv2d(out, self.weights[f"stage{i}.kernel"],
                         self.weights[f"stage{i}.bias"], stride=cfg.stride,
                         padding=(cfg.kernel - 1) // 2)
            out = leaky_relu(out, cfg.leaky_slope)
            results.append(out)
        return results

    def state_arrays(self) -> dict:
        state = {name: t.data for name, t in self.weights.items()}
        cfg = self.config
        state["meta.extractor"] = np.array(
            [cfg.kernel, cfg.stride, cfg.image_channels, *cfg.stage_channels],
            dtype=np.float64,
        )
        return state

    @classmethod
    def from_state(cls, arrays: dict) -> "FeatureExtractor":
        meta = arrays.get("meta.extractor")
        if meta is None:
            raise ValueError("checkpoint does not describe a feature extractor")
        meta = [int(v) for v in meta]
        config = ExtractorConfig(kernel=meta[0], stride=meta[1],
                                 image_channels=meta[2],
                                 stage_channels=tuple(meta[3:]))
        weights = {name: arr for name, arr in arrays.items() if name != "meta.extractor"}
        return cls(config, weights=weights)


def nst_objective(extractor: FeatureExtractor, generated: Tensor, content_img,
                  style_img, weights: LossWeights = LossWeights(),
                  stat_epsilon: float = STAT_EPSILON):
    """Total stylization objective and its (content, style, tv) parts."""
    gen_taps = extractor.taps(generated)
    con_taps = extractor.taps(as_tensor(content_img).detach())
    sty_taps = extractor.taps(as_tensor(style_img).detach())
    lc = content_loss(gen_taps[-1], con_taps[-1])
    ls = style_loss(gen_taps, sty_taps, epsilon=stat_epsilon)
    ltv = tv_loss(generated)
    return total_loss(lc, ls, ltv, weights), (lc, ls, ltv)
