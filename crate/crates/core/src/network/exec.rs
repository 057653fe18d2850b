//! Layer-major execution. Time-steps (or ANN frames) are stacked into the
//! batch axis, `index = t * batch + n`, so convolutions see every step at
//! once; only normalization and the membrane recurrence loop over time.

use std::borrow::Cow;

use super::params::{channel_of, Gradients, LayerGrads, LayerParams, ModelParams, Mode, Norm, SpikeGain};
use super::spec::{LayerKind, LayerSpec, NetworkSpec};
use crate::encoding::SpikeTrain;
use crate::energy::{LayerActivity, SpikeTrace};
use crate::error::{Error, Result};
use crate::neuron::{fires, relaxed_activation, soft_reset, surrogate};
use crate::ops::{
    avg_pool2, avg_pool2_backward, bilinear_upsample, bilinear_upsample_backward, conv2d_backward_impl,
    conv2d_forward, transpose_conv_backward, transpose_conv_forward,
};
use crate::real::Real;
use crate::tensor::{Shape4, Tensor4};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ForwardOptions {
    /// Normalize with batch statistics (and report them) instead of running
    /// statistics.
    pub training: bool,
    /// Keep intermediates for [`backward`].
    pub keep_cache: bool,
}

impl ForwardOptions {
    pub fn train() -> Self {
        ForwardOptions {
            training: true,
            keep_cache: true,
        }
    }

    pub fn eval() -> Self {
        ForwardOptions::default()
    }
}

/// Batch statistics of one normalized layer, `groups x channels`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats<F> {
    pub mean: Vec<F>,
    /// Unbiased.
    pub var: Vec<F>,
}

pub struct ForwardOutput<F> {
    /// Class scores, `(batch, classes, H, W)`.
    pub logits: Tensor4<F>,
    pub trace: SpikeTrace,
    /// Per layer, when normalized with batch statistics.
    pub norm_stats: Vec<Option<NormStats<F>>>,
    cache: Option<Cache<F>>,
}

struct NormCache<F> {
    xhat: Tensor4<F>,
    inv_std: Vec<F>,
    groups: usize,
    batch_stats: bool,
}

#[derive(Default)]
struct BranchCache<F> {
    reduced_input: Option<Tensor4<F>>,
    norm: Option<NormCache<F>>,
    /// Membrane before reset (spiking, relaxed) or normalized current (ANN).
    pre_act: Option<Tensor4<F>>,
}

struct Cache<F> {
    mode: Mode,
    groups: usize,
    /// `vals[0]` is the network input, `vals[i + 1]` the output of layer `i`.
    vals: Vec<Tensor4<F>>,
    branches: Vec<Option<BranchCache<F>>>,
}

fn check_frame(spec: &NetworkSpec, s: Shape4) -> Result<()> {
    let i = spec.input;
    for (axis, want, got) in [("c", i.channels, s.c), ("h", i.height, s.h), ("w", i.width, s.w)] {
        if want != got {
            return Err(Error::dim(format!("input axis {axis}"), want, got));
        }
    }
    Ok(())
}

fn expect_mode<F: Real>(params: &ModelParams<F>, mode: Mode) -> Result<()> {
    if params.mode != mode {
        return Err(Error::Mode(format!(
            "{} executor given {} parameters",
            mode.name(),
            params.mode.name()
        )));
    }
    Ok(())
}

/// Runs a spiking network on a `(T, N, C, H, W)` spike train; the logits are
/// the classifier membranes after the last step.
pub fn forward_spiking<F: Real>(
    spec: &NetworkSpec,
    params: &ModelParams<F>,
    input: &SpikeTrain<F>,
    opts: ForwardOptions,
) -> Result<ForwardOutput<F>> {
    expect_mode(params, Mode::Spiking)?;
    run_train(spec, params, input, opts)
}

/// Spiking graph with the differentiable relaxed activation.
pub fn forward_relaxed<F: Real>(
    spec: &NetworkSpec,
    params: &ModelParams<F>,
    input: &SpikeTrain<F>,
    opts: ForwardOptions,
) -> Result<ForwardOutput<F>> {
    expect_mode(params, Mode::Relaxed)?;
    run_train(spec, params, input, opts)
}

fn run_train<F: Real>(
    spec: &NetworkSpec,
    params: &ModelParams<F>,
    input: &SpikeTrain<F>,
    opts: ForwardOptions,
) -> Result<ForwardOutput<F>> {
    let frame = input
        .frame_shape()
        .ok_or_else(|| Error::Validation("spike train has no time-steps".into()))?;
    check_frame(spec, frame)?;
    forward(spec, params, input.stacked()?, input.steps(), frame.n, opts)
}

/// Runs the non-spiking twin. Several frames per sample (an event recording)
/// share the feature extractor and are averaged before the classifier.
pub fn forward_ann<F: Real>(
    spec: &NetworkSpec,
    params: &ModelParams<F>,
    frames: &[Tensor4<F>],
    opts: ForwardOptions,
) -> Result<ForwardOutput<F>> {
    expect_mode(params, Mode::Ann)?;
    let first = frames
        .first()
        .ok_or_else(|| Error::Validation("no input frames".into()))?;
    check_frame(spec, first.shape())?;
    let stacked = Tensor4::concat_batch(frames)?;
    forward(spec, params, stacked, frames.len(), first.shape().n, opts)
}

/// Dispatches on the parameter mode: images for ANN, spike trains otherwise.
pub fn forward_any<F: Real>(
    spec: &NetworkSpec,
    params: &ModelParams<F>,
    input: &SpikeTrain<F>,
    opts: ForwardOptions,
) -> Result<ForwardOutput<F>> {
    match params.mode {
        Mode::Ann => forward_ann(spec, params, input.frames(), opts),
        _ => run_train(spec, params, input, opts),
    }
}

/// Whether layer `i`'s output still has a time (frame) axis.
fn node_temporal(spec: &NetworkSpec, mode: Mode, i: usize) -> bool {
    match mode {
        Mode::Ann => i < spec.head_start,
        _ => !spec.reduced_in_time(i),
    }
}

/// Collapses the stacked time axis: a sum of membranes for spiking nets, the
/// mean embedding for ANN frames.
fn reduce_time<F: Real>(x: &Tensor4<F>, groups: usize, mode: Mode) -> Tensor4<F> {
    let s = x.shape();
    let n = s.n / groups;
    let len = n * s.item_len();
    let mut out = Tensor4::zeros(s.with_n(n));
    for g in 0..groups {
        for (o, &v) in out.data_mut().iter_mut().zip(&x.data()[g * len..(g + 1) * len]) {
            *o += v;
        }
    }
    if mode == Mode::Ann && groups > 1 {
        out.scale(F::one() / F::of(groups as f64));
    }
    out
}

/// Adjoint of [`reduce_time`].
fn expand_time<F: Real>(g: &Tensor4<F>, groups: usize, mode: Mode) -> Tensor4<F> {
    let s = g.shape();
    let mut data = Vec::with_capacity(s.len() * groups);
    for _ in 0..groups {
        data.extend_from_slice(g.data());
    }
    let mut out = Tensor4::from_vec(s.with_n(s.n * groups), data).expect("consistent length");
    if mode == Mode::Ann && groups > 1 {
        out.scale(F::one() / F::of(groups as f64));
    }
    out
}

fn linear_forward<F: Real>(l: &LayerSpec, p: &LayerParams<F>, x: &Tensor4<F>, bias_scale: F) -> Result<Tensor4<F>> {
    let conv = l.conv().expect("weighted layer");
    let mut z = if l.is_transpose() {
        transpose_conv_forward(x, &p.weight, conv)?
    } else {
        conv2d_forward(x, &p.weight, conv)?
    };
    if let Some(b) = &p.bias {
        let s = z.shape();
        let plane = s.plane();
        for (i, chunk) in z.data_mut().chunks_mut(plane).enumerate() {
            let add = b[i % s.c] * bias_scale;
            chunk.iter_mut().for_each(|v| *v += add);
        }
    }
    Ok(z)
}

/// Per-(group, channel) slices of a stacked tensor: calls `f(g, c, plane)`.
fn for_planes<F: Real>(x: &Tensor4<F>, groups: usize, mut f: impl FnMut(usize, usize, &[F])) {
    let s = x.shape();
    let per = s.n / groups;
    for (i, plane) in x.data().chunks(s.plane()).enumerate() {
        let item = i / s.c;
        f(item / per, i % s.c, plane);
    }
}

fn for_planes_mut<F: Real>(x: &mut Tensor4<F>, groups: usize, mut f: impl FnMut(usize, usize, &mut [F])) {
    let s = x.shape();
    let per = s.n / groups;
    for (i, plane) in x.data_mut().chunks_mut(s.plane()).enumerate() {
        let item = i / s.c;
        f(item / per, i % s.c, plane);
    }
}

/// Returns `(y, cache, batch stats)`.
#[allow(clippy::type_complexity)]
fn norm_forward<F: Real>(
    norm: &Norm<F>,
    z: Tensor4<F>,
    groups: usize,
    training: bool,
) -> Result<(Tensor4<F>, Option<NormCache<F>>, Option<NormStats<F>>)> {
    let s = z.shape();
    let (ng, gamma, beta, rmean, rvar): (usize, &[F], Option<&[F]>, &[F], &[F]) = match norm {
        Norm::None => return Ok((z, None, None)),
        Norm::Bntt(b) => {
            if b.steps != groups {
                return Err(Error::State(format!(
                    "BNTT holds statistics for {} steps, input has {groups}",
                    b.steps
                )));
            }
            (groups, &b.gamma, None, &b.running_mean, &b.running_var)
        }
        Norm::Batch(b) => (1, &b.gamma, Some(&b.beta), &b.running_mean, &b.running_var),
    };
    let c = s.c;
    let eps = F::of(super::params::NORM_EPS);
    let mut mean = vec![F::zero(); ng * c];
    let mut var = vec![F::zero(); ng * c];
    let count = (s.n / ng * s.plane()) as f64;
    let stats = if training {
        let mut acc = vec![0.0f64; ng * c];
        for_planes(&z, ng, |g, ch, p| acc[g * c + ch] += p.iter().map(|v| v.as_f64()).sum::<f64>());
        for (m, a) in mean.iter_mut().zip(&acc) {
            *m = F::of(a / count);
        }
        let mut acc = vec![0.0f64; ng * c];
        for_planes(&z, ng, |g, ch, p| {
            let m = mean[g * c + ch].as_f64();
            acc[g * c + ch] += p.iter().map(|v| (v.as_f64() - m).powi(2)).sum::<f64>();
        });
        for (v, a) in var.iter_mut().zip(&acc) {
            *v = F::of(a / count);
        }
        let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
        Some(NormStats {
            mean: mean.clone(),
            var: var.iter().map(|v| F::of(v.as_f64() * unbias)).collect(),
        })
    } else {
        mean.copy_from_slice(rmean);
        var.copy_from_slice(rvar);
        None
    };
    let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
    let mut xhat = z;
    for_planes_mut(&mut xhat, ng, |g, ch, p| {
        let (m, k) = (mean[g * c + ch], inv_std[g * c + ch]);
        p.iter_mut().for_each(|v| *v = (*v - m) * k);
    });
    let mut y = xhat.clone();
    for_planes_mut(&mut y, ng, |g, ch, p| {
        let gm = gamma[g * c + ch];
        let bt = beta.map_or(F::zero(), |b| b[ch]);
        p.iter_mut().for_each(|v| *v = *v * gm + bt);
    });
    Ok((
        y,
        Some(NormCache {
            xhat,
            inv_std,
            groups: ng,
            batch_stats: training,
        }),
        stats,
    ))
}

/// Returns `dz` and accumulates `dgamma`, `dbeta`.
fn norm_backward<F: Real>(
    norm: &Norm<F>,
    cache: &NormCache<F>,
    mut dy: Tensor4<F>,
    grads: &mut LayerGrads<F>,
) -> Tensor4<F> {
    let gamma: &[F] = match norm {
        Norm::None => return dy,
        Norm::Bntt(b) => &b.gamma,
        Norm::Batch(b) => &b.gamma,
    };
    let s = dy.shape();
    let c = s.c;
    let ng = cache.groups;
    let m = (s.n / ng * s.plane()) as f64;
    let mut sum_dy = vec![0.0f64; ng * c];
    let mut sum_dy_xhat = vec![0.0f64; ng * c];
    {
        let planes = s.plane();
        let per = s.n / ng;
        for (i, (p, xh)) in dy
            .data()
            .chunks(planes)
            .zip(cache.xhat.data().chunks(planes))
            .enumerate()
        {
            let k = (i / c) / per * c + i % c;
            sum_dy[k] += p.iter().map(|v| v.as_f64()).sum::<f64>();
            sum_dy_xhat[k] += p.iter().zip(xh).map(|(a, b)| a.as_f64() * b.as_f64()).sum::<f64>();
        }
    }
    if let Some(gg) = grads.gamma.as_mut() {
        for (g, v) in gg.iter_mut().zip(&sum_dy_xhat) {
            *g += F::of(*v);
        }
    }
    if let Some(gb) = grads.beta.as_mut() {
        for (k, g) in gb.iter_mut().enumerate() {
            *g += F::of(sum_dy[k]);
        }
    }
    let planes = s.plane();
    let per = s.n / ng;
    let xhat = cache.xhat.data();
    for (i, p) in dy.data_mut().chunks_mut(planes).enumerate() {
        let k = (i / c) / per * c + i % c;
        let scale = gamma[k] * cache.inv_std[k];
        if cache.batch_stats {
            let md = F::of(sum_dy[k] / m);
            let mdx = F::of(sum_dy_xhat[k] / m);
            let xh = &xhat[i * planes..(i + 1) * planes];
            for (v, &x) in p.iter_mut().zip(xh) {
                *v = scale * (*v - md - x * mdx);
            }
        } else {
            p.iter_mut().for_each(|v| *v *= scale);
        }
    }
    dy
}

fn gain_of<F: Real>(p: &LayerParams<F>, gain: SpikeGain, c: usize) -> F {
    match gain {
        SpikeGain::Unit => F::one(),
        SpikeGain::Threshold => p.threshold.channel(c),
    }
}

/// Membrane recurrence over stacked steps. Returns output, pre-reset membranes
/// and the number of emitted spikes.
fn lif_forward<F: Real>(
    p: &LayerParams<F>,
    y: &Tensor4<F>,
    steps: usize,
    mode: Mode,
    gain: SpikeGain,
) -> (Tensor4<F>, Tensor4<F>, u64) {
    let s = y.shape();
    let step_len = s.len() / steps;
    let item = s.with_n(1);
    let mut v = vec![F::zero(); step_len];
    let mut out = Tensor4::zeros(s);
    let mut mem = Tensor4::zeros(s);
    let mut count = 0u64;
    let cur = y.data().chunks(step_len);
    let mems = mem.data_mut().chunks_mut(step_len);
    for ((ys, us), os) in cur.zip(mems).zip(out.data_mut().chunks_mut(step_len)) {
        for (e, vv) in v.iter_mut().enumerate() {
            let c = channel_of(e, item);
            let theta = p.threshold.channel(c);
            let u = p.leak * *vv + ys[e];
            us[e] = u;
            let a = match mode {
                Mode::Relaxed => relaxed_activation(u, theta),
                _ if fires(u, theta) => {
                    count += 1;
                    F::one()
                }
                _ => F::zero(),
            };
            *vv = soft_reset(u, a, theta);
            os[e] = a * gain_of(p, gain, c);
        }
    }
    (out, mem, count)
}

/// Backpropagation through the recurrence: `du_t = do_t * gain * sg(u_t) +
/// dv_t * (1 - theta * sg(u_t))`, `dv_{t-1} = leak * du_t`.
fn lif_backward<F: Real>(p: &LayerParams<F>, mem: &Tensor4<F>, go: &Tensor4<F>, steps: usize, gain: SpikeGain) -> Tensor4<F> {
    let s = mem.shape();
    let step_len = s.len() / steps;
    let item = s.with_n(1);
    let mut dv = vec![F::zero(); step_len];
    let mut du = Tensor4::zeros(s);
    for t in (0..steps).rev() {
        let range = t * step_len..(t + 1) * step_len;
        let us = &mem.data()[range.clone()];
        let gs = &go.data()[range.clone()];
        let ds = &mut du.data_mut()[range];
        for e in 0..step_len {
            let c = channel_of(e, item);
            let theta = p.threshold.channel(c);
            let sg = surrogate(us[e], theta);
            let carry = if sg == F::zero() { F::one() } else { F::one() - theta * sg };
            let d = gs[e] * gain_of(p, gain, c) * sg + dv[e] * carry;
            ds[e] = d;
            dv[e] = p.leak * d;
        }
    }
    du
}

/// Layer input as seen by a node with (`want_t`) or without a time axis.
fn fetch_view<'a, F: Real>(
    x: &'a Tensor4<F>,
    has_t: bool,
    want_t: bool,
    groups: usize,
    mode: Mode,
    name: &str,
) -> Result<Cow<'a, Tensor4<F>>> {
    match (has_t, want_t) {
        (true, false) => Ok(Cow::Owned(reduce_time(x, groups, mode))),
        (false, true) => Err(Error::State(format!(
            "layer `{name}` needs a time axis its input no longer has"
        ))),
        _ => Ok(Cow::Borrowed(x)),
    }
}

fn forward<F: Real>(
    spec: &NetworkSpec,
    params: &ModelParams<F>,
    input: Tensor4<F>,
    groups: usize,
    batch: usize,
    opts: ForwardOptions,
) -> Result<ForwardOutput<F>> {
    params.validate(spec)?;
    let mode = params.mode;
    let nl = spec.layers.len();
    let mut vals: Vec<Tensor4<F>> = Vec::with_capacity(nl + 1);
    vals.push(input);
    let mut temporal = vec![true];
    let mut branches: Vec<Option<BranchCache<F>>> = Vec::with_capacity(nl);
    let mut norm_stats = Vec::with_capacity(nl);
    let mut trace = SpikeTrace::default();

    for (i, l) in spec.layers.iter().enumerate() {
        let want_t = node_temporal(spec, mode, i);
        let fetch = |j: usize| fetch_view(&vals[j], temporal[j], want_t, groups, mode, &l.name);
        let mut stats = None;
        let mut branch_cache = None;
        let out = match &l.kind {
            LayerKind::AvgPool => avg_pool2(fetch(i)?.as_ref())?,
            LayerKind::BilinearHead { height, width } => bilinear_upsample(fetch(i)?.as_ref(), *height, *width)?,
            _ => {
                let src = l.skip_source().map_or(i, |s| s + 1);
                let p = params.layer(i).expect("validated");
                let x = fetch(src)?;
                let mut bc = BranchCache::<F>::default();
                let bias_scale = if mode.is_temporal() && l.accumulate {
                    F::of(groups as f64)
                } else {
                    F::one()
                };
                let z = linear_forward(l, p, &x, bias_scale)?;
                let branch = if l.accumulate {
                    z
                } else {
                    let ng = if want_t { groups } else { 1 };
                    let (y, nc, st) = norm_forward(&p.norm, z, ng, opts.training)?;
                    stats = st;
                    bc.norm = nc;
                    match mode {
                        Mode::Ann => {
                            let out = y.map(|v| v.max(F::zero()));
                            bc.pre_act = Some(y);
                            out
                        }
                        _ => {
                            let (out, mem, count) = lif_forward(p, &y, groups, mode, params.spike_gain);
                            let ys = y.shape();
                            trace.layers.push(LayerActivity {
                                layer: i,
                                name: l.name.clone(),
                                spikes: count,
                                neurons: ys.item_len() as u64,
                                samples: batch as u64,
                                steps: groups as u64,
                            });
                            bc.pre_act = Some(mem);
                            out
                        }
                    }
                };
                if let Cow::Owned(r) = x {
                    bc.reduced_input = Some(r);
                }
                branch_cache = Some(bc);
                if l.skip_source().is_some() {
                    let mut base = fetch(i)?.into_owned();
                    base.add_assign(&branch)?;
                    base
                } else {
                    branch
                }
            }
        };
        norm_stats.push(stats);
        branches.push(if opts.keep_cache { branch_cache } else { None });
        vals.push(out);
        temporal.push(want_t);
    }
    if *temporal.last().expect("non-empty") && groups > 1 {
        return Err(Error::State("network output still carries a time axis".into()));
    }
    let logits = vals.last().expect("non-empty").clone();
    let cache = opts.keep_cache.then(|| Cache {
            mode,
            groups,
            vals,
            branches,
    });
    Ok(ForwardOutput {
        logits,
        trace,
        norm_stats,
        cache,
    })
}

/// Exact gradients of a loss with respect to all trainable parameters, given
/// its gradient with respect to the logits. In spiking mode the firing
/// nonlinearity is replaced by its surrogate derivative; in relaxed mode the
/// result is the true gradient.
pub fn backward<F: Real>(
    spec: &NetworkSpec,
    params: &ModelParams<F>,
    fwd: &ForwardOutput<F>,
    grad_logits: &Tensor4<F>,
) -> Result<Gradients<F>> {
    let cache = fwd
        .cache
        .as_ref()
        .ok_or_else(|| Error::State("forward pass ran without keep_cache".into()))?;
    if cache.mode != params.mode {
        return Err(Error::Mode("parameters changed mode since the forward pass".into()));
    }
    grad_logits.expect_shape(fwd.logits.shape(), "grad_logits")?;
    let mode = cache.mode;
    let groups = cache.groups;
    let nl = spec.layers.len();
    let temporal: Vec<bool> = std::iter::once(true)
        .chain((0..nl).map(|i| node_temporal(spec, mode, i)))
        .collect();
    let mut grads = Gradients::zeros_like(params);
    let mut g: Vec<Option<Tensor4<F>>> = vec![None; nl + 1];
    g[nl] = Some(grad_logits.clone());

    // Routes a gradient computed for layer `i`'s (possibly reduced) view of
    // `vals[j]` back onto `vals[j]`.
    let push = |g: &mut Vec<Option<Tensor4<F>>>, j: usize, i: usize, gin: Tensor4<F>| -> Result<()> {
        if j == 0 {
            return Ok(());
        }
        let gin = if temporal[j] && !temporal[i + 1] {
            expand_time(&gin, groups, mode)
        } else {
            gin
        };
        match &mut g[j] {
            Some(acc) => acc.add_assign(&gin)?,
            slot => *slot = Some(gin),
        }
        Ok(())
    };

    for i in (0..nl).rev() {
        let Some(go) = g[i + 1].take() else { continue };
        let l = &spec.layers[i];
        let in_shape = |j: usize| {
            let s = cache.vals[j].shape();
            if temporal[j] && !temporal[i + 1] {
                s.with_n(s.n / groups)
            } else {
                s
            }
        };
        match &l.kind {
            LayerKind::AvgPool => {
                let gin = avg_pool2_backward(&go, in_shape(i))?;
                push(&mut g, i, i, gin)?;
            }
            LayerKind::BilinearHead { .. } => {
                let gin = bilinear_upsample_backward(&go, in_shape(i))?;
                push(&mut g, i, i, gin)?;
            }
            _ => {
                let src = l.skip_source().map_or(i, |s| s + 1);
                if l.skip_source().is_some() {
                    push(&mut g, i, i, go.clone())?;
                }
                let p = params.layer(i).expect("validated");
                let bc = cache.branches[i]
                    .as_ref()
                    .ok_or_else(|| Error::State(format!("no cache for layer `{}`", l.name)))?;
                let lg = grads.layers[i].as_mut().expect("weighted layer has grads");
                let dz = if l.accumulate {
                    go
                } else {
                    let pre = bc.pre_act.as_ref().expect("firing layer caches activation");
                    let dy = match mode {
                        Mode::Ann => go.zip_map(pre, |d, y| if y > F::zero() { d } else { F::zero() })?,
                        _ => lif_backward(p, pre, &go, groups, params.spike_gain),
                    };
                    match &bc.norm {
                        Some(nc) => norm_backward(&p.norm, nc, dy, lg),
                        None => dy,
                    }
                };
                if let Some(gb) = lg.bias.as_mut() {
                    let scale = if mode.is_temporal() && l.accumulate {
                        groups as f64
                    } else {
                        1.0
                    };
                    let s = dz.shape();
                    let mut acc = vec![0.0f64; s.c];
                    for (k, plane) in dz.data().chunks(s.plane()).enumerate() {
                        acc[k % s.c] += plane.iter().map(|v| v.as_f64()).sum::<f64>();
                    }
                    for (b, a) in gb.iter_mut().zip(acc) {
                        *b += F::of(a * scale);
                    }
                }
                let x = bc.reduced_input.as_ref().unwrap_or(&cache.vals[src]);
                let conv = l.conv().expect("weighted");
                let (gin, gw) = if l.is_transpose() {
                    let (gi, gw) = transpose_conv_backward(x, &p.weight, &dz, conv)?;
                    (Some(gi), gw)
                } else {
                    conv2d_backward_impl(x, &p.weight, &dz, conv, src > 0)?
                };
                lg.weight.add_assign(&gw)?;
                if let Some(gin) = gin {
                    push(&mut g, src, i, gin)?;
                }
            }
        }
    }
    Ok(grads)
}

impl<F: Real> ModelParams<F> {
    /// Folds batch statistics from a training forward pass into the running
    /// estimates: `r = (1 - m) r + m * batch`.
    pub fn update_running_stats(&mut self, stats: &[Option<NormStats<F>>]) {
        let m = F::of(super::params::NORM_MOMENTUM);
        let blend = |r: &mut [F], b: &[F]| {
            for (r, &b) in r.iter_mut().zip(b) {
                *r = (F::one() - m) * *r + m * b;
            }
        };
        for (p, st) in self.layers.iter_mut().zip(stats) {
            let (Some(p), Some(st)) = (p, st) else { continue };
            match &mut p.norm {
                Norm::None => {}
                Norm::Bntt(b) => {
                    blend(&mut b.running_mean, &st.mean);
                    blend(&mut b.running_var, &st.var);
                }
                Norm::Batch(b) => {
                    blend(&mut b.running_mean, &st.mean);
                    blend(&mut b.running_var, &st.var);
                }
            }
        }
    }
}

impl<F: Real> ForwardOutput<F> {
    /// Output of layer `i` as the next layer sees it; for a fused skip node,
    /// only the branch it adds. Requires `keep_cache`.
    pub fn activation(&self, spec: &NetworkSpec, i: usize) -> Result<Tensor4<F>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("forward pass ran without keep_cache".into()))?;
        let out = cache
            .vals
            .get(i + 1)
            .ok_or_else(|| Error::Validation(format!("no layer {i}")))?;
        if spec.layers[i].skip_source().is_some() {
            out.zip_map(&cache.vals[i], |a, b| a - b)
        } else {
            Ok(out.clone())
        }
    }
}
