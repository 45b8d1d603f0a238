"""The desk-scale finite-difference suite behind the grad-check command.

Runs central-difference checks on every differentiable operation, the
building blocks, and both training losses end-to-end.  Selector logits are
excluded wherever a path crosses the straight-through binarization (its
forward is intentionally flat, so finite differences do not apply).
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import bayer, model, train


def _op_checks(rng):
    x = ad.Tensor(rng.normal(size=(2, 6, 6)), requires_grad=True)
    m = ad.Tensor(rng.normal(size=(2, 6, 6)))
    mask1 = ad.Tensor(rng.normal(size=(1, 6, 6)), requires_grad=True)
    w = ad.Tensor(rng.normal(size=(3, 2, 3, 3)) * 0.5, requires_grad=True)
    b = ad.Tensor(rng.normal(size=3), requires_grad=True)
    s = ad.Tensor(rng.normal(size=(2, 1, 1)), requires_grad=True)
    small = ad.Tensor(rng.normal(size=(1, 3, 4)), requires_grad=True)
    up_mask = ad.Tensor(rng.normal(size=(1, 7, 9)))

    freq_mask = ad.Tensor((rng.standard_normal((1, 6, 6)) > 0).astype(float))

    def conv_loss(t):
        return ad.mean_all(ad.absolute(ad.conv2d(t, w, b, 1)))

    def fourier_chain(t):
        back = ad.ifft2(ad.complex_mul(ad.fft2(t), freq_mask))
        return ad.sum_all(ad.mul(ad.complex_real(back), m))

    checks = [
        ("add", lambda: ad.grad_check(lambda t: ad.sum_all(ad.mul(ad.add(t, m), m)), x)),
        ("sub", lambda: ad.grad_check(lambda t: ad.sum_all(ad.mul(ad.sub(t, m), m)), x)),
        ("mul", lambda: ad.grad_check(lambda t: ad.sum_all(ad.mul(ad.mul(t, m), m)), x)),
        ("mul_mask_broadcast", lambda: ad.grad_check(lambda t: ad.sum_all(ad.mul(ad.mul(x, t), m)), mask1)),
        ("scale", lambda: ad.grad_check(lambda t: ad.sum_all(ad.mul(ad.scale(t, -2.5), m)), x)),
        ("relu", lambda: ad.grad_check(lambda t: ad.sum_all(ad.mul(ad.relu(t), m)), x)),
        ("sigmoid", lambda: ad.grad_check(lambda t: ad.sum_all(ad.mul(ad.sigmoid(t), m)), x)),
        ("absolute", lambda: ad.grad_check(lambda t: ad.sum_all(ad.mul(ad.absolute(t), m)), x)),
        ("mean_all", lambda: ad.grad_check(lambda t: ad.mean_all(ad.mul(t, m)), x)),
        ("channel_scale", lambda: ad.grad_check(lambda t: ad.sum_all(ad.mul(ad.channel_scale(x, t), m)), s)),
        ("concat_channels", lambda: ad.grad_check(lambda t: ad.sum_all(ad.mul(ad.concat_channels(t, m), ad.concat_channels(m, m))), x)),
        ("conv2d", lambda: ad.grad_check(conv_loss, x)),
        ("global_avg_pool", lambda: ad.grad_check(lambda t: ad.sum_all(ad.mul(ad.global_avg_pool(t), s)), x)),
        ("bilinear_upsample", lambda: ad.grad_check(lambda t: ad.sum_all(ad.mul(ad.bilinear_upsample(t, 7, 9), up_mask)), small)),
        ("fft2_ifft2_masked", lambda: ad.grad_check(fourier_chain, x)),
        ("complex_abs", lambda: ad.grad_check(lambda t: ad.sum_all(ad.complex_abs(ad.fft2(t))), x)),
    ]
    return checks


def _model_checks(rng, config):
    params = model.init_params(config, 1234)
    img = rng.uniform(size=(config.train_height, config.train_width, 3))
    cfa = bayer.mosaic(img)
    target = ad.Tensor(img.transpose(2, 0, 1))
    backbone = [t for n, t in model.named_parameters(params) if "s_lr" not in n]
    frac = min(1.0, 60.0 / sum(t.size for t in backbone))
    sample_rng = np.random.default_rng(99)

    def rec_loss():
        out, _ = model.dfenet_forward(cfa, 3.0, params, config)
        return train.loss_rec(out, target)

    def fft_loss():
        _, inters = model.dfenet_forward(cfa, 3.0, params, config)
        return ad.scale(train.loss_fft(inters, target), 0.01)

    block = params.groups[0].rcabs[0]
    x_feat = ad.Tensor(rng.normal(size=(config.channels, 8, 8)), requires_grad=True)

    def rcab_loss(t):
        return ad.mean_all(ad.absolute(model.rcab_forward(t, block)))

    return [
        ("rcab_block", lambda: ad.grad_check(rcab_loss, x_feat)),
        ("loss_rec_end_to_end", lambda: ad.grad_check_params(rec_loss, backbone, fraction=frac, rng=sample_rng)),
        ("loss_fft_end_to_end", lambda: ad.grad_check_params(fft_loss, backbone, fraction=frac, rng=sample_rng)),
    ]


def run_gradcheck_suite(config: model.ModelConfig | None = None, tolerance: float = 1e-4):
    """Returns (results, worst, passed): per-check names and max rel errors."""
    if config is None:
        config = model.ModelConfig(channels=4, groups=1, n_coarse=1, n_refine=1,
                                   selector_downscale=4, rcab_reduction=4,
                                   train_height=16, train_width=16)
    rng = np.random.default_rng(7)
    results = []
    for name, fn in _op_checks(rng) + _model_checks(rng, config):
        results.append((name, float(fn())))
    worst = max(err for _, err in results)
    return results, worst, worst < tolerance
