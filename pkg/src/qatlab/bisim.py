"""Lockstep training of an estimator-carrying net against its
straight-through twin.

For SGD and momentum the twin starts from warped weights M(w) and trains with
learning rate alpha*eta (biases, which carry no estimator, keep eta); for
Adam it starts from identical weights and the identical learning rate. Both
nets consume one shared batch draw per step. Each step records the alignment
error E, the per-step bound terms, the worst-case bound slack over all
weights, quantized-weight agreement, and both losses.

Per-step bound bookkeeping by optimizer:
  sgd       gradient term eta*alpha*|df_qhat - df_ste|, convexity term
            (L'/2)*(eta*L+*df_qhat/L-)^2; their sum bounds the E increase.
  momentum  gradient term alpha*eta*|d_t| where d_t is the momentum-averaged
            gradient difference; convexity term (L'/2)*(eta*g+/L-)^2 with g+
            the running empirical max |update|/eta, as labeled in the trace.
  adam      both terms are exact update gaps measured through a shadow
            optimizer fed the raw (estimator-free) gradient history, so
            E(t+1) <= E(t) + grad + conv holds by the triangle inequality;
            the adaptive theory is instead verified through eta_sweep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .estimator import (EstimatorConstants, EstimatorSpec, clip_range,
                        derivative, lipschitz_constants)
from .net import (GradientBundle, Layer, NetworkState, backward, he_limit,
                  init_weights)
from .optim import (OptimizerState, Schedule, TrainingDiverged, apply_step,
                    lr_at, remap_state_for_ste)
from .quantizer import (QuantizerConfig, bin_code, quantize, range_length)
from .transform import WarpContext, make_warp_context, warp, warp_pwl_bounds

__all__ = [
    "ScalarToy",
    "BisimConfig",
    "Pair",
    "BisimTrace",
    "SweepResult",
    "build_pair",
    "warmup_handoff",
    "warmup_train",
    "lockstep_train",
    "alignment_error",
    "mean_alignment_error",
    "quantized_agreement",
    "sgd_bound_slack",
    "run_experiment",
    "run_toy",
    "eta_sweep",
    "dataset_source",
    "toy_source",
]


@dataclass(frozen=True)
class ScalarToy:
    """One-weight problem whose loss gradient is a fixed per-code lookup, so
    it depends on the weight only through its quantized value."""

    code_gradients: tuple
    w0: float
    code_losses: tuple | None = None

    def lookup(self, w, cfg: QuantizerConfig):
        """(loss, gradient) at the quantized value of w."""
        idx = bin_code(quantize(w, cfg), cfg) - cfg.l
        if not 0 <= idx < len(self.code_gradients):
            raise ValueError("lookup table does not cover the code grid")
        loss = 0.0 if self.code_losses is None else self.code_losses[idx]
        return loss, self.code_gradients[idx]


@dataclass(frozen=True)
class BisimConfig:
    optimizer: str  # sgd | momentum | adam
    estimator: EstimatorSpec
    schedule: Schedule
    seed: int
    steps: int
    quantizer: QuantizerConfig | None = None  # None: per-layer delta = init bound
    auto_delta_bits: int = 2
    adjusted: bool = True
    warmup_handoff_fraction: float = 0.0
    momentum_beta: float = 0.9
    adam_beta1: float = 0.9
    adam_beta2: float = 0.95
    adam_eps: float = 1e-8
    toy: ScalarToy | None = None

    def __post_init__(self):
        if self.optimizer not in ("sgd", "momentum", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.optimizer == "adam" and not self.adjusted:
            raise ValueError("the unadjusted ablation only applies to non-adaptive optimizers")
        if self.steps < 1:
            raise ValueError("steps must be positive")
        if not 0.0 <= self.warmup_handoff_fraction < 1.0:
            raise ValueError("warmup_handoff_fraction must be in [0, 1)")
        if self.schedule.total_steps != self.steps:
            raise ValueError("schedule length must equal the step count")


@dataclass
class Pair:
    """The two nets plus everything lockstep_train needs to advance them."""

    cfg: BisimConfig
    qhat: NetworkState
    ste: NetworkState
    opt_qhat: list  # [layer][0]=weights state, [1]=bias state
    opt_ste: list
    contexts: list[WarpContext]
    constants: list[EstimatorConstants]
    shadow: list | None = None  # adam probe states, weights only
    diff_momentum: list | None = None  # momentum-averaged gradient gap
    steps_done: int = 0
    g_plus_running: float = 0.0


@dataclass
class BisimTrace:
    """Per-step records plus run-level header data. Row t holds the terms of
    training step t and the alignment state after applying it."""

    t: np.ndarray
    e_mean: np.ndarray
    e_norm_mean: np.ndarray
    grad_err: np.ndarray
    conv_err: np.ndarray
    slack_min: np.ndarray
    agreement: np.ndarray
    loss_qhat: np.ndarray
    loss_ste: np.ndarray
    lr: np.ndarray
    initial_e_mean: float
    initial_agreement: float
    alphas: list[float]
    constants: list[EstimatorConstants]
    deltas: list[float]
    range_lengths: list[float]
    warmup_steps: int
    diverged: bool
    g_plus_empirical: float | None
    final_weights_qhat: np.ndarray
    final_weights_ste: np.ndarray


@dataclass(frozen=True)
class SweepResult:
    etas: tuple
    final_e: tuple
    flagged: tuple  # agreement fell below 1.0 during that run
    slope: float | None  # log-log fit over clean runs; None when E hit 0


# ---------------------------------------------------------------------------
# pair construction

def _norm_length(cfg: QuantizerConfig) -> float:
    # binary has no representable range; report E unnormalized there
    return 1.0 if cfg.binary else range_length(cfg)


def _layer_quantizer(cfg: BisimConfig, fan_in: int) -> QuantizerConfig:
    if cfg.quantizer is not None:
        return cfg.quantizer
    return QuantizerConfig.symmetric(cfg.auto_delta_bits, he_limit(fan_in))


def _fresh_state(cfg: BisimConfig, shape) -> OptimizerState:
    if cfg.optimizer == "sgd":
        return OptimizerState.sgd()
    if cfg.optimizer == "momentum":
        return OptimizerState.momentum(shape, beta=cfg.momentum_beta)
    return OptimizerState.adam(shape, beta1=cfg.adam_beta1, beta2=cfg.adam_beta2,
                               eps=cfg.adam_eps)


def _ste_estimator(cfg: BisimConfig, ctx: WarpContext) -> EstimatorSpec:
    """Twin-side estimator: plain ste, except that a clip-style source
    estimator is replaced by a clip estimator with warped bounds (identical
    bounds under Adam, where no warp is applied)."""
    if cfg.estimator.kind != "pwl":
        return EstimatorSpec.ste()
    lo, hi = clip_range(cfg.estimator, ctx.cfg)
    if cfg.optimizer != "adam" and cfg.adjusted:
        lo, hi = warp_pwl_bounds(lo, hi, ctx)
    return EstimatorSpec.pwl(lo, hi)


def _warp_weights(cfg: BisimConfig) -> bool:
    # a pwl source needs no reinitialization: its warp is the identity on the
    # clip range, and weights outside it are untrainable on both sides
    return cfg.optimizer != "adam" and cfg.adjusted and cfg.estimator.kind != "pwl"


def _derive_pair(cfg: BisimConfig, qhat: NetworkState, opt_qhat=None,
                 steps_done: int = 0) -> Pair:
    """Build the twin (and all bookkeeping state) from the current qhat net.
    Handles both the step-0 construction and the warm hand-off: optimizer
    buffers are remapped through the current estimator derivatives, which is
    the identity on fresh zero state."""
    contexts = [make_warp_context(layer.estimator, layer.quantizer)
                for layer in qhat.layers]
    if cfg.estimator.kind == "pwl":
        constants = [EstimatorConstants(1.0, 1.0, 0.0)  # clip interior is the ste
                     for _ in qhat.layers]
    else:
        constants = [lipschitz_constants(layer.estimator, layer.quantizer)
                     for layer in qhat.layers]

    if opt_qhat is None:
        opt_qhat = [[_fresh_state(cfg, layer.weights.shape),
                     _fresh_state(cfg, layer.bias.shape)] for layer in qhat.layers]

    ste_layers = []
    opt_ste = []
    shadow = [] if cfg.optimizer == "adam" else None
    for layer, ctx, states in zip(qhat.layers, contexts, opt_qhat):
        w = warp(layer.weights, ctx) if _warp_weights(cfg) else layer.weights.copy()
        ste_layers.append(Layer(weights=w, bias=layer.bias.copy(),
                                activation=layer.activation,
                                quantizer=layer.quantizer,
                                estimator=_ste_estimator(cfg, ctx)))
        factors = derivative(layer.weights, layer.estimator, layer.quantizer)
        if layer.estimator.kind == "pwl":
            # clipped-out weights receive no updates on either side; carry
            # their buffers over unscaled
            factors = np.where(factors > 0.0, factors, 1.0)
        opt_ste.append([remap_state_for_ste(states[0], factors),
                        remap_state_for_ste(states[1], np.ones_like(layer.bias))])
        if shadow is not None:
            shadow.append(remap_state_for_ste(states[0], factors))

    diff = None
    if cfg.optimizer == "momentum":
        diff = [np.zeros_like(layer.weights) for layer in qhat.layers]

    return Pair(cfg=cfg, qhat=qhat, ste=NetworkState(ste_layers),
                opt_qhat=opt_qhat, opt_ste=opt_ste, contexts=contexts,
                constants=constants, shadow=shadow, diff_momentum=diff,
                steps_done=steps_done)


def build_pair(cfg: BisimConfig, shapes) -> Pair:
    """Initialize the estimator net and derive its straight-through twin."""
    quantizers = [_layer_quantizer(cfg, shapes[i]) for i in range(len(shapes) - 1)]
    qhat = init_weights(shapes, cfg.seed, quantizers=quantizers,
                        estimators=cfg.estimator)
    return _derive_pair(cfg, qhat)


def warmup_handoff(pair: Pair) -> Pair:
    """Spawn a fresh twin from the (already trained) qhat side: warped weights
    for non-adaptive optimizers, copied for Adam or the unadjusted ablation,
    with optimizer state remapped and the step position preserved."""
    return _derive_pair(pair.cfg, pair.qhat, opt_qhat=pair.opt_qhat,
                        steps_done=pair.steps_done)


# ---------------------------------------------------------------------------
# metrics and bound terms

def alignment_error(w_qhat, w_ste, ctx: WarpContext, optimizer_kind: str):
    """Per-weight E: |M(w_qhat) - w_ste| for non-adaptive optimizers,
    |w_qhat - w_ste| for Adam."""
    if optimizer_kind == "adam":
        return np.abs(np.asarray(w_qhat) - np.asarray(w_ste))
    return np.abs(warp(w_qhat, ctx) - np.asarray(w_ste))


def mean_alignment_error(net_qhat: NetworkState, net_ste: NetworkState,
                         contexts, optimizer_kind: str) -> float:
    """alignment_error averaged over every weight of the pair."""
    total = 0.0
    count = 0
    for lq, ls, ctx in zip(net_qhat.layers, net_ste.layers, contexts):
        e = alignment_error(lq.weights, ls.weights, ctx, optimizer_kind)
        total += float(e.sum())
        count += e.size
    return total / count


def quantized_agreement(net_a: NetworkState, net_b: NetworkState) -> float:
    """Fraction of weight positions whose quantized values coincide."""
    same = 0
    total = 0
    for la, lb in zip(net_a.layers, net_b.layers):
        same += int(np.sum(la.quantized_weights() == lb.quantized_weights()))
        total += la.weights.size
    return same / total


def sgd_bound_slack(e_next, e_cur, grad_qhat, grad_ste, lr: float,
                    alpha_factor: float, constants: EstimatorConstants):
    """Per-weight slack of the one-step alignment bound for plain SGD:
    E_cur + eta*alpha*|df_qhat - df_ste| + (L'/2)*(eta*L+*df_qhat/L-)^2 - E_next.
    Nonnegative (to float tolerance) whenever the bound holds."""
    grad_term = lr * alpha_factor * np.abs(np.asarray(grad_qhat) - np.asarray(grad_ste))
    conv_term = 0.5 * constants.l_prime * (
        lr * constants.l_plus * np.asarray(grad_qhat) / constants.l_minus) ** 2
    return np.asarray(e_cur) + grad_term + conv_term - np.asarray(e_next)


def _per_weight_E(pair: Pair):
    return [alignment_error(lq.weights, ls.weights, ctx, pair.cfg.optimizer)
            for lq, ls, ctx in zip(pair.qhat.layers, pair.ste.layers, pair.contexts)]


# ---------------------------------------------------------------------------
# gradient sources

def dataset_source(x, y, batch_size: int, seed: int):
    """Shared-stream source: one index draw per step, same batch fed to every
    net passed in."""
    rng = np.random.Generator(np.random.Philox(
        np.random.SeedSequence(entropy=seed, spawn_key=(1,))))
    n = x.shape[0]

    def source(nets):
        idx = rng.integers(0, n, size=batch_size)
        return [backward(net, x[idx], y[idx]) for net in nets]

    return source


def toy_source(toy: ScalarToy):
    """Gradient source for the one-weight lookup problem."""

    def source(nets):
        bundles = []
        for net in nets:
            layer = net.layers[0]
            w = float(layer.weights[0, 0])
            loss, grad = toy.lookup(w, layer.quantizer)
            bundles.append(GradientBundle(
                weight_grads=[np.array([[grad]])],
                bias_grads=[np.zeros(1)],
                estimator_factors=[derivative(layer.weights, layer.estimator,
                                              layer.quantizer)],
                loss=loss))
        return bundles

    return source


# ---------------------------------------------------------------------------
# training loops

def _apply_net_step(net: NetworkState, states, bundle: GradientBundle,
                    lr: float, weight_lr_scales=None):
    """One optimizer step over every tensor; returns per-layer weight deltas."""
    deltas = []
    for i, layer in enumerate(net.layers):
        scale = 1.0 if weight_lr_scales is None else weight_lr_scales[i]
        g = bundle.weight_grads[i] * bundle.estimator_factors[i]
        dw = apply_step(g, lr * scale, states[i][0])
        layer.weights += dw
        layer.bias += apply_step(bundle.bias_grads[i], lr, states[i][1])
        deltas.append(dw)
    return deltas


def warmup_train(pair: Pair, source, n_steps: int):
    """The identical initial training period: advance only the qhat net; the
    twin is rebuilt from it at hand-off."""
    for t in range(pair.steps_done, pair.steps_done + n_steps):
        (bundle,) = source([pair.qhat])
        _apply_net_step(pair.qhat, pair.opt_qhat, bundle, lr_at(t, pair.cfg.schedule))
    pair.steps_done += n_steps


def lockstep_train(pair: Pair, source) -> BisimTrace:
    """Advance both nets together from pair.steps_done to cfg.steps and record
    the trace. On divergence the trace is truncated and flagged."""
    cfg = pair.cfg
    warmup_steps = pair.steps_done
    alphas = [ctx.alpha for ctx in pair.contexts]
    norm_lens = [_norm_length(layer.quantizer) for layer in pair.qhat.layers]
    ste_scales = [a if cfg.optimizer != "adam" else 1.0 for a in alphas]
    n_weights = pair.qhat.weight_count()

    e_cur = _per_weight_E(pair)
    initial_e_mean = float(sum(e.sum() for e in e_cur)) / n_weights
    initial_agreement = quantized_agreement(pair.qhat, pair.ste)

    rows = {name: [] for name in ("t", "e_mean", "e_norm_mean", "grad_err",
                                  "conv_err", "slack_min", "agreement",
                                  "loss_qhat", "loss_ste", "lr")}
    diverged = False
    for t in range(pair.steps_done, cfg.steps):
        lr = lr_at(t, cfg.schedule)
        try:
            bq, bs = source([pair.qhat, pair.ste])
            dq = _apply_net_step(pair.qhat, pair.opt_qhat, bq, lr)
            ds = _apply_net_step(pair.ste, pair.opt_ste, bs, lr,
                                 weight_lr_scales=ste_scales)
            d_shadow = None
            if pair.shadow is not None:
                d_shadow = [apply_step(bq.weight_grads[i], lr, pair.shadow[i])
                            for i in range(len(pair.qhat.layers))]
        except TrainingDiverged:
            diverged = True
            break

        if cfg.optimizer == "momentum":
            step_mag = max(float(np.max(np.abs(d))) for d in dq)
            pair.g_plus_running = max(pair.g_plus_running, step_mag / lr)

        slack_min = math.inf
        grad_sum = 0.0
        conv_sum = 0.0
        e_next = _per_weight_E(pair)
        for i in range(len(pair.qhat.layers)):
            c = pair.constants[i]
            gq = bq.weight_grads[i]
            gs = bs.weight_grads[i]
            if cfg.optimizer == "sgd":
                grad_term = lr * alphas[i] * np.abs(gq - gs)
                conv_term = 0.5 * c.l_prime * (lr * c.l_plus * gq / c.l_minus) ** 2
            elif cfg.optimizer == "momentum":
                d = pair.diff_momentum[i]
                d *= cfg.momentum_beta
                d += (1.0 - cfg.momentum_beta) * (gq - gs)
                grad_term = alphas[i] * lr * np.abs(d)
                conv_term = np.full_like(gq, 0.5 * c.l_prime
                                         * (lr * pair.g_plus_running / c.l_minus) ** 2)
            else:  # adam: exact update gaps through the shadow optimizer
                grad_term = np.abs(d_shadow[i] - ds[i])
                conv_term = np.abs(dq[i] - d_shadow[i])
            slack = e_cur[i] + grad_term + conv_term - e_next[i]
            slack_min = min(slack_min, float(slack.min()))
            grad_sum += float(grad_term.sum())
            conv_sum += float(conv_term.sum())

        e_mean = float(sum(e.sum() for e in e_next)) / n_weights
        e_norm_mean = float(sum((e / nl).sum()
                                for e, nl in zip(e_next, norm_lens))) / n_weights
        if not np.isfinite(e_mean):
            diverged = True
            break
        rows["t"].append(t)
        rows["e_mean"].append(e_mean)
        rows["e_norm_mean"].append(e_norm_mean)
        rows["grad_err"].append(grad_sum / n_weights)
        rows["conv_err"].append(conv_sum / n_weights)
        rows["slack_min"].append(slack_min)
        rows["agreement"].append(quantized_agreement(pair.qhat, pair.ste))
        rows["loss_qhat"].append(bq.loss)
        rows["loss_ste"].append(bs.loss)
        rows["lr"].append(lr)
        e_cur = e_next
        pair.steps_done = t + 1

    wq = np.concatenate([l.weights.ravel() for l in pair.qhat.layers])
    ws = np.concatenate([l.weights.ravel() for l in pair.ste.layers])
    return BisimTrace(
        t=np.array(rows["t"], dtype=np.int64),
        e_mean=np.array(rows["e_mean"]),
        e_norm_mean=np.array(rows["e_norm_mean"]),
        grad_err=np.array(rows["grad_err"]),
        conv_err=np.array(rows["conv_err"]),
        slack_min=np.array(rows["slack_min"]),
        agreement=np.array(rows["agreement"]),
        loss_qhat=np.array(rows["loss_qhat"]),
        loss_ste=np.array(rows["loss_ste"]),
        lr=np.array(rows["lr"]),
        initial_e_mean=initial_e_mean,
        initial_agreement=initial_agreement,
        alphas=alphas,
        constants=pair.constants,
        deltas=[layer.quantizer.delta for layer in pair.qhat.layers],
        range_lengths=norm_lens,
        warmup_steps=warmup_steps,
        diverged=diverged,
        g_plus_empirical=(pair.g_plus_running if cfg.optimizer == "momentum" else None),
        final_weights_qhat=wq,
        final_weights_ste=ws,
    )


def run_experiment(cfg: BisimConfig, shapes, x, y, batch_size: int) -> BisimTrace:
    """Full protocol: optional identical warmup on the qhat net, hand-off to
    spawn the twin, then lockstep training to cfg.steps."""
    source = dataset_source(x, y, batch_size, cfg.seed)
    warmup_steps = int(cfg.warmup_handoff_fraction * cfg.steps)
    pair = build_pair(cfg, shapes)
    if warmup_steps > 0:
        warmup_train(pair, source, warmup_steps)
        pair = warmup_handoff(pair)
    return lockstep_train(pair, source)


def run_toy(cfg: BisimConfig) -> BisimTrace:
    """Lockstep run of the one-weight lookup problem."""
    if cfg.toy is None:
        raise ValueError("config carries no scalar toy problem")
    if cfg.quantizer is None:
        raise ValueError("the toy needs an explicit quantizer")
    source = toy_source(cfg.toy)
    qhat = NetworkState([Layer(weights=np.array([[cfg.toy.w0]], dtype=np.float64),
                               bias=np.zeros(1), activation="identity",
                               quantizer=cfg.quantizer, estimator=cfg.estimator)])
    warmup_steps = int(cfg.warmup_handoff_fraction * cfg.steps)
    pair = _derive_pair(cfg, qhat)
    if warmup_steps > 0:
        warmup_train(pair, source, warmup_steps)
        pair = warmup_handoff(pair)
    return lockstep_train(pair, source)


def eta_sweep(cfg: BisimConfig, etas) -> SweepResult:
    """Final mean alignment error of the toy run per learning rate, plus the
    fitted log-log slope over runs whose quantized agreement stayed at 1."""
    etas = [float(e) for e in etas]
    if len(etas) < 4:
        raise ValueError("need at least 4 learning rates")
    if max(etas) / min(etas) < 10 ** 1.5:
        raise ValueError("learning rates must span at least 1.5 decades")
    finals = []
    flagged = []
    for eta in etas:
        trace = run_toy(replace(cfg, schedule=replace(cfg.schedule, base_lr=eta)))
        finals.append(float(trace.e_mean[-1]))
        flagged.append(bool(np.any(trace.agreement < 1.0)) or trace.diverged)
    clean = [(e, f) for e, f, fl in zip(etas, finals, flagged)
             if not fl and f > 0.0]
    slope = None  # undefined when E collapses to 0 (ste twin of itself)
    if len(clean) >= 2:
        xs = np.log([c[0] for c in clean])
        ys = np.log([c[1] for c in clean])
        slope = float(np.polyfit(xs, ys, 1)[0])
    return SweepResult(etas=tuple(etas), final_e=tuple(finals),
                       flagged=tuple(flagged), slope=slope)
