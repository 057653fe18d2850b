//! Leaky integrate-and-fire dynamics with soft reset.
//!
//! Per step: `u = leak * v + I`, spike where `u > theta`, then `v = u - theta * spike`.
//! The continuous-time membrane constant and input resistance are folded into
//! `leak` and the synaptic weights respectively.
//!
//! The relaxed variant replaces the step function by its piecewise-quadratic
//! primitive so that the analytic backward pass can be checked against finite
//! differences. It is never used for spiking inference.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Shape4, Tensor4};

/// `u_t = leak * v_{t-1} + current`.
#[inline]
pub fn integrate<F: Real>(leak: F, v_prev: F, current: F) -> F {
    leak * v_prev + current
}

/// Strict comparison: a membrane exactly at threshold does not fire.
#[inline]
pub fn fires<F: Real>(u: F, theta: F) -> bool {
    u > theta
}

/// Piecewise-linear pseudo-derivative `max(0, 1 - |(u - theta)/theta|)`.
#[inline]
pub fn surrogate<F: Real>(u: F, theta: F) -> F {
    (F::one() - ((u - theta) / theta).abs()).max(F::zero())
}

/// Primitive of [`surrogate`] with value 0 for `u <= 0`, saturating at `theta`
/// for `u >= 2 theta`.
#[inline]
pub fn relaxed_activation<F: Real>(u: F, theta: F) -> F {
    let two = F::of(2.0);
    if u <= F::zero() {
        F::zero()
    } else if u <= theta {
        u * u / (two * theta)
    } else if u < two * theta {
        let d = u - theta;
        theta / two + d - d * d / (two * theta)
    } else {
        theta
    }
}

/// `u - a * theta`, exact for an infinite threshold (which never fires).
#[inline]
pub fn soft_reset<F: Real>(u: F, a: F, theta: F) -> F {
    if a == F::zero() {
        u
    } else {
        u - a * theta
    }
}

/// Elementwise [`surrogate`] over a tensor.
pub fn surrogate_grad<F: Real>(u: &Tensor4<F>, theta: F) -> Tensor4<F> {
    u.map(|v| surrogate(v, theta))
}

/// Firing thresholds, either shared by a layer or one per channel.
#[derive(Clone, Debug, PartialEq)]
pub enum Threshold<F> {
    Uniform(F),
    PerChannel(Vec<F>),
}

impl<F: Real> Threshold<F> {
    pub fn from_values(values: &[F]) -> Self {
        match values {
            [v] => Threshold::Uniform(*v),
            vs => Threshold::PerChannel(vs.to_vec()),
        }
    }

    #[inline]
    pub fn channel(&self, c: usize) -> F {
        match self {
            Threshold::Uniform(v) => *v,
            Threshold::PerChannel(vs) => vs[c],
        }
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        let ok = match self {
            Threshold::Uniform(v) => *v > F::zero() && !v.is_nan(),
            Threshold::PerChannel(vs) => {
                if vs.len() != channels {
                    return Err(Error::dim("threshold channels", channels, vs.len()));
                }
                vs.iter().all(|v| *v > F::zero() && !v.is_nan())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Validation("firing thresholds must be > 0".into()))
        }
    }
}

#[derive(Clone, Debug)]
pub struct LifLayerState<F = f32> {
    pub membrane: Tensor4<F>,
    pub leak: F,
    pub threshold: Threshold<F>,
}

impl<F: Real> LifLayerState<F> {
    /// Membrane starts at rest (0).
    pub fn new(shape: Shape4, leak: F, theta: F) -> Result<Self> {
        Self::with_threshold(shape, leak, Threshold::Uniform(theta))
    }

    pub fn with_threshold(shape: Shape4, leak: F, threshold: Threshold<F>) -> Result<Self> {
        shape.validate()?;
        if !(leak >= F::zero() && leak <= F::one()) {
            return Err(Error::Validation(format!("leak must lie in [0, 1], got {leak}")));
        }
        threshold.validate(shape.c)?;
        Ok(LifLayerState {
            membrane: Tensor4::zeros(shape),
            leak,
            threshold,
        })
    }

    pub fn reset(&mut self) {
        self.membrane.data_mut().fill(F::zero());
    }

    /// One integrate / fire / soft-reset step; returns binary spikes.
    pub fn step(&mut self, current: &Tensor4<F>) -> Result<Tensor4<F>> {
        self.advance(current, |u, theta| {
            if fires(u, theta) {
                F::one()
            } else {
                F::zero()
            }
        })
    }

    /// Same membrane update as [`step`](Self::step) but emits the continuous
    /// [`relaxed_activation`] and resets by `activation * theta`.
    pub fn relaxed_step(&mut self, current: &Tensor4<F>) -> Result<Tensor4<F>> {
        self.advance(current, relaxed_activation)
    }

    fn advance(&mut self, current: &Tensor4<F>, out: impl Fn(F, F) -> F) -> Result<Tensor4<F>> {
        let s = self.membrane.shape();
        current.expect_shape(s, "input current")?;
        let mut spikes = Tensor4::zeros(s);
        let plane = s.plane();
        let leak = self.leak;
        for (i, ((v, &x), o)) in self
            .membrane
            .data_mut()
            .iter_mut()
            .zip(current.data())
            .zip(spikes.data_mut())
            .enumerate()
        {
            let theta = self.threshold.channel((i / plane) % s.c);
            let u = integrate(leak, *v, x);
            let a = out(u, theta);
            *o = a;
            *v = soft_reset(u, a, theta);
        }
        Ok(spikes)
    }
}
