//! Piecewise-linear curve algebra.
//!
//! A [`Curve`] is a nondecreasing piecewise-linear function on `t >= 0`. It
//! holds arrival curves (token buckets), reprofiling curves and the
//! two-slope rate-latency service curves assigned to flows at every hop.
//! Values are right-continuous at jumps, with one exception: `f(0) = 0`
//! always, and a jump at the origin is kept separately as the right-limit
//! `f(0+)`. This is what lets a token bucket be `0` at `t = 0` and `b + rt`
//! for every `t > 0`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance used for time and value comparisons, scaled by the
/// magnitude of the operands where that makes sense.
pub const TOLERANCE: f64 = 1e-9;

/// Default number of samples used by [`convolve_on_grid`] when called through
/// [`min_plus_convolve`].
pub const DEFAULT_GRID_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CurveError {
    #[error("negative time {0}")]
    NegativeTime(f64),
    #[error("curve needs at least one breakpoint, the first at t = 0 with value 0")]
    BadOrigin,
    #[error("breakpoint times must be strictly increasing (at index {0})")]
    NonIncreasingTimes(usize),
    #[error("curve is not nondecreasing (at index {0})")]
    Decreasing(usize),
    #[error("non-finite curve parameter")]
    NonFinite,
    #[error("invalid token bucket (rate {rate}, burst {burst})")]
    InvalidTokenBucket { rate: f64, burst: f64 },
    #[error("invalid two-slope reprofiler (peak {peak}, offset {offset}, rate {rate})")]
    InvalidReprofiler { peak: f64, offset: f64, rate: f64 },
    #[error("negative latency {0}")]
    NegativeLatency(f64),
    #[error("reprofiling delay {delay} outside (0, {max}]")]
    DelayOutOfRange { delay: f64, max: f64 },
    #[error("cannot concatenate service curves with different long-term rates")]
    RateMismatch,
    #[error("cannot concatenate an empty list of service curves")]
    EmptyConcatenation,
}

pub type Result<T, E = CurveError> = std::result::Result<T, E>;

/// Start of a linear segment: the curve equals `value + slope * (t - time)`
/// on `[time, next.time)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Breakpoint {
    pub time: f64,
    pub value: f64,
    pub slope: f64,
}

impl Breakpoint {
    pub fn new(time: f64, value: f64, slope: f64) -> Self {
        Self { time, value, slope }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    points: Vec<Breakpoint>,
    origin_jump: f64,
}

impl Curve {
    /// Builds a curve from breakpoints and the right-limit at the origin.
    ///
    /// The first breakpoint must sit at `t = 0` with value `0`. The value
    /// stored at a later breakpoint is the right-continuous value there, so
    /// it may exceed the left limit (an upward jump).
    pub fn new(points: Vec<Breakpoint>, origin_jump: f64) -> Result<Self> {
        let first = points.first().ok_or(CurveError::BadOrigin)?;
        if first.time != 0.0 || first.value != 0.0 {
            return Err(CurveError::BadOrigin);
        }
        if !origin_jump.is_finite() || origin_jump < 0.0 {
            return Err(CurveError::Decreasing(0));
        }
        for (k, p) in points.iter().enumerate() {
            if !(p.time.is_finite() && p.value.is_finite() && p.slope.is_finite()) {
                return Err(CurveError::NonFinite);
            }
            if p.slope < 0.0 {
                return Err(CurveError::Decreasing(k));
            }
            if k > 0 {
                let prev = &points[k - 1];
                if p.time <= prev.time {
                    return Err(CurveError::NonIncreasingTimes(k));
                }
                let left = prev.value + if k == 1 { origin_jump } else { 0.0 } + prev.slope * (p.time - prev.time);
                if p.value < left - TOLERANCE * left.abs().max(1.0) {
                    return Err(CurveError::Decreasing(k));
                }
            }
        }
        Ok(Self { points, origin_jump })
    }

    pub(crate) fn from_parts(points: Vec<Breakpoint>, origin_jump: f64) -> Self {
        let mut curve = Self { points, origin_jump };
        curve.simplify();
        curve
    }

    /// `f(t) = rate * t`.
    pub fn rate_line(rate: f64) -> Self {
        Self {
            points: vec![Breakpoint::new(0.0, 0.0, rate)],
            origin_jump: 0.0,
        }
    }

    pub fn zero() -> Self {
        Self::rate_line(0.0)
    }

    pub fn breakpoints(&self) -> &[Breakpoint] {
        &self.points
    }

    /// Right-limit `f(0+)`.
    pub fn origin_jump(&self) -> f64 {
        self.origin_jump
    }

    /// Slope of the last segment.
    pub fn long_term_rate(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.slope)
    }

    /// Time of the last breakpoint.
    pub fn last_breakpoint(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.time)
    }

    fn segment(&self, t: f64) -> usize {
        // Last index with time <= t.
        self.points.partition_point(|p| p.time <= t).saturating_sub(1)
    }

    // Segment 0 stores value 0 at t = 0; the origin jump only applies inside
    // segment 0. Later breakpoints store absolute values.
    fn segment_start_value(&self, k: usize) -> f64 {
        if k == 0 {
            self.origin_jump
        } else {
            self.points[k].value
        }
    }

    /// Right-continuous value at `t`; rejects negative times.
    pub fn evaluate(&self, t: f64) -> Result<f64> {
        if t < 0.0 || t.is_nan() {
            return Err(CurveError::NegativeTime(t));
        }
        Ok(self.value(t))
    }

    /// Right-continuous value at `t`, with `f(0) = 0`. Negative times
    /// evaluate to `0`.
    pub fn value(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let k = self.segment(t);
        let p = &self.points[k];
        self.segment_start_value(k) + p.slope * (t - p.time)
    }

    /// `f(t+)`; differs from [`Curve::value`] only at the origin.
    pub fn right_limit(&self, t: f64) -> f64 {
        if t <= 0.0 {
            self.origin_jump
        } else {
            self.value(t)
        }
    }

    /// `f(t-)`; equals [`Curve::value`] except at jump points.
    pub fn left_limit(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let k = self.points.partition_point(|p| p.time < t).saturating_sub(1);
        let p = &self.points[k];
        self.segment_start_value(k) + p.slope * (t - p.time)
    }

    /// Smallest `t >= 0` with `f(t) >= y` (the infimum when `f` jumps over
    /// `y` at the origin). Infinite when the curve never reaches `y`.
    pub fn lower_inverse(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        let n = self.points.len();
        for k in 0..n {
            let p = &self.points[k];
            let start = self.segment_start_value(k);
            if y <= start {
                return p.time;
            }
            match self.points.get(k + 1) {
                Some(next) => {
                    let end = start + p.slope * (next.time - p.time);
                    if p.slope > 0.0 && y <= end {
                        return (p.time + (y - start) / p.slope).min(next.time);
                    }
                }
                None => {
                    if p.slope > 0.0 {
                        return p.time + (y - start) / p.slope;
                    }
                }
            }
        }
        f64::INFINITY
    }

    /// Largest `t` with `f(t) <= y`, i.e. the right limit of the lower inverse
    /// at `y`. Infinite when the curve stays at or below `y` forever.
    pub fn upper_inverse(&self, y: f64) -> f64 {
        if y < 0.0 {
            return 0.0;
        }
        if self.origin_jump > y {
            return 0.0;
        }
        let n = self.points.len();
        for k in 0..n {
            let p = &self.points[k];
            let start = self.segment_start_value(k);
            if k > 0 && start > y {
                return p.time;
            }
            match self.points.get(k + 1) {
                Some(next) => {
                    let end = start + p.slope * (next.time - p.time);
                    if end > y {
                        // slope > 0 here, since start <= y < end
                        return p.time + (y - start) / p.slope;
                    }
                }
                None => {
                    if p.slope > 0.0 {
                        return p.time + (y - start) / p.slope;
                    }
                }
            }
        }
        f64::INFINITY
    }

    /// Concave on `(0, inf)` and continuous there: no jumps after the origin
    /// and nonincreasing slopes. The origin jump is allowed.
    pub fn is_concave(&self) -> bool {
        self.points.windows(2).enumerate().all(|(k, w)| {
            let left = self.segment_start_value(k) + w[0].slope * (w[1].time - w[0].time);
            let scale = left.abs().max(1.0);
            (w[1].value - left).abs() <= TOLERANCE * scale
                && w[1].slope <= w[0].slope + TOLERANCE * w[0].slope.abs().max(1.0)
        })
    }

    /// The curve delayed by `delay`: zero on `[0, delay]`, then the original
    /// shape. This is the min-plus convolution with a delay element.
    pub fn shifted(&self, delay: f64) -> Curve {
        if delay <= 0.0 {
            return self.clone();
        }
        let mut points = Vec::with_capacity(self.points.len() + 1);
        points.push(Breakpoint::new(0.0, 0.0, 0.0));
        for (k, p) in self.points.iter().enumerate() {
            points.push(Breakpoint::new(p.time + delay, self.segment_start_value(k), p.slope));
        }
        Curve::from_parts(points, 0.0)
    }

    fn merged_times(&self, other: &Curve) -> Vec<f64> {
        let mut times: Vec<f64> = self.points.iter().chain(other.points.iter()).map(|p| p.time).collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        times
    }

    fn slope_at(&self, t: f64) -> f64 {
        self.points[self.segment(t)].slope
    }

    /// Pointwise minimum.
    pub fn pointwise_min(&self, other: &Curve) -> Curve {
        let times = self.merged_times(other);
        let mut points = Vec::with_capacity(times.len() * 2);
        for (idx, &a) in times.iter().enumerate() {
            let (fa, ga) = (self.right_limit(a), other.right_limit(a));
            let (sf, sg) = (self.slope_at(a), other.slope_at(a));
            let value = if a == 0.0 { 0.0 } else { fa.min(ga) };
            let lower_slope = if fa < ga || (fa == ga && sf <= sg) { sf } else { sg };
            points.push(Breakpoint::new(a, value, lower_slope));
            // Crossing strictly inside (a, b).
            if sf != sg {
                let cross = a + (ga - fa) / (sf - sg);
                let b = times.get(idx + 1).copied().unwrap_or(f64::INFINITY);
                if cross > a && cross < b && cross.is_finite() {
                    let v = fa + sf * (cross - a);
                    points.push(Breakpoint::new(cross, v, sf.min(sg)));
                }
            }
        }
        let jump = self.origin_jump.min(other.origin_jump);
        Curve::from_parts(points, jump)
    }

    /// Pointwise sum.
    pub fn add(&self, other: &Curve) -> Curve {
        let times = self.merged_times(other);
        let points = times
            .iter()
            .map(|&a| {
                let value = if a == 0.0 { 0.0 } else { self.value(a) + other.value(a) };
                Breakpoint::new(a, value, self.slope_at(a) + other.slope_at(a))
            })
            .collect();
        Curve::from_parts(points, self.origin_jump + other.origin_jump)
    }

    /// Merges consecutive collinear segments.
    fn simplify(&mut self) {
        if self.points.len() < 2 {
            return;
        }
        let mut out: Vec<Breakpoint> = Vec::with_capacity(self.points.len());
        for (k, p) in self.points.iter().enumerate() {
            if let Some(last) = out.last() {
                let start = if out.len() == 1 { self.origin_jump } else { last.value };
                let left = start + last.slope * (p.time - last.time);
                let scale = left.abs().max(p.value.abs()).max(1.0);
                let slope_scale = last.slope.abs().max(p.slope.abs()).max(1.0);
                if (p.value - left).abs() <= TOLERANCE * scale
                    && (p.slope - last.slope).abs() <= TOLERANCE * slope_scale
                {
                    continue;
                }
                if p.time - last.time <= TOLERANCE * p.time.abs().max(1.0) && k > 0 {
                    // Coincident breakpoint from rounding: keep the later one.
                    let len = out.len();
                    if len > 1 {
                        out[len - 1] = Breakpoint::new(last.time, p.value, p.slope);
                    } else {
                        out[0].slope = p.slope;
                    }
                    continue;
                }
            }
            out.push(*p);
        }
        self.points = out;
    }
}

impl fmt::Display for Curve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "curve[jump0={}", self.origin_jump)?;
        for p in &self.points {
            write!(f, "; ({}, {}, slope {})", p.time, p.value, p.slope)?;
        }
        write!(f, "]")
    }
}

/// Token bucket arrival curve `(r, b)`: `0` at `t = 0`, `b + rt` after.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenBucket {
    pub rate: f64,
    pub burst: f64,
}

impl TokenBucket {
    pub fn new(rate: f64, burst: f64) -> Result<Self> {
        if !(rate.is_finite() && burst.is_finite()) || rate <= 0.0 || burst < 0.0 {
            return Err(CurveError::InvalidTokenBucket { rate, burst });
        }
        Ok(Self { rate, burst })
    }

    pub fn curve(&self) -> Curve {
        Curve {
            points: vec![Breakpoint::new(0.0, 0.0, self.rate)],
            origin_jump: self.burst,
        }
    }

    /// Largest admissible reprofiling delay, `b / r`.
    pub fn max_reprofiling_delay(&self) -> f64 {
        self.burst / self.rate
    }
}

/// Two-slope reprofiling curve `min(R t, B + r t)` with `R >= r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoSlopeReprofiler {
    pub peak_rate: f64,
    pub offset: f64,
    pub rate: f64,
}

impl TwoSlopeReprofiler {
    pub fn new(peak_rate: f64, offset: f64, rate: f64) -> Result<Self> {
        let bad = || CurveError::InvalidReprofiler {
            peak: peak_rate,
            offset,
            rate,
        };
        if !(peak_rate.is_finite() && offset.is_finite() && rate.is_finite()) {
            return Err(bad());
        }
        if rate <= 0.0 || offset < 0.0 || peak_rate < rate * (1.0 - TOLERANCE) {
            return Err(bad());
        }
        if peak_rate <= rate && offset > TOLERANCE * rate.max(1.0) {
            return Err(bad());
        }
        Ok(Self {
            peak_rate: peak_rate.max(rate),
            offset,
            rate,
        })
    }

    /// Time at which the curve switches from the peak to the long-term rate.
    pub fn knee_time(&self) -> f64 {
        if self.peak_rate > self.rate {
            self.offset / (self.peak_rate - self.rate)
        } else {
            0.0
        }
    }

    pub fn curve(&self) -> Curve {
        let knee = self.knee_time();
        if knee > 0.0 {
            Curve {
                points: vec![
                    Breakpoint::new(0.0, 0.0, self.peak_rate),
                    Breakpoint::new(knee, self.peak_rate * knee, self.rate),
                ],
                origin_jump: 0.0,
            }
        } else {
            Curve::rate_line(self.rate)
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        if t <= 0.0 {
            0.0
        } else {
            (self.peak_rate * t).min(self.offset + self.rate * t)
        }
    }
}

/// Pure delay element: no service before `delay`, unbounded service after.
/// Never materialized as a finite curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayElement {
    pub delay: f64,
}

impl DelayElement {
    pub fn new(delay: f64) -> Result<Self> {
        if !delay.is_finite() || delay < 0.0 {
            return Err(CurveError::NegativeLatency(delay));
        }
        Ok(Self { delay })
    }

    pub fn convolve(&self, curve: &Curve) -> Curve {
        curve.shifted(self.delay)
    }
}

/// Two-slope rate-latency service curve `(T, R, B, r)`: a delay element of
/// latency `T` followed by a two-slope reprofiler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoSlopeRateLatency {
    pub latency: f64,
    pub reprofiler: TwoSlopeReprofiler,
}

impl TwoSlopeRateLatency {
    pub fn new(latency: f64, reprofiler: TwoSlopeReprofiler) -> Result<Self> {
        if !latency.is_finite() || latency < 0.0 {
            return Err(CurveError::NegativeLatency(latency));
        }
        Ok(Self { latency, reprofiler })
    }

    pub fn from_params(latency: f64, peak_rate: f64, offset: f64, rate: f64) -> Result<Self> {
        Self::new(latency, TwoSlopeReprofiler::new(peak_rate, offset, rate)?)
    }

    pub fn curve(&self) -> Curve {
        self.reprofiler.curve().shifted(self.latency)
    }

    /// End of the peak-rate segment, `T + B / (R - r)`.
    pub fn inflection(&self) -> f64 {
        self.latency + self.reprofiler.knee_time()
    }
}

/// The bandwidth-minimal two-slope reprofiler that delays `alpha` by exactly
/// `delay`: `R = b / D`, `B = b - r D`.
///
/// `delay = 0` is rejected; callers treat it as "no reprofiling" and keep the
/// token bucket itself (see [`reprofiled_curve`]).
pub fn optimal_reprofiler(alpha: &TokenBucket, delay: f64) -> Result<TwoSlopeReprofiler> {
    let max = alpha.max_reprofiling_delay();
    if !(delay > 0.0) || delay > max * (1.0 + TOLERANCE) + TOLERANCE * f64::MIN_POSITIVE {
        return Err(CurveError::DelayOutOfRange { delay, max });
    }
    let delay = delay.min(max);
    let peak = alpha.burst / delay;
    let offset = (alpha.burst - alpha.rate * delay).max(0.0);
    if peak <= alpha.rate {
        return TwoSlopeReprofiler::new(alpha.rate, 0.0, alpha.rate);
    }
    TwoSlopeReprofiler::new(peak, offset, alpha.rate)
}

/// Curve of the flow after ingress reprofiling by `delay`: the token bucket
/// itself when `delay == 0`, the optimal reprofiler otherwise.
pub fn reprofiled_curve(alpha: &TokenBucket, delay: f64) -> Result<Curve> {
    if delay == 0.0 {
        Ok(alpha.curve())
    } else {
        Ok(optimal_reprofiler(alpha, delay)?.curve())
    }
}

/// Closed-form concatenation of two-slope rate-latency curves sharing one
/// long-term rate: latencies add, peak rates and offsets take the minimum.
pub fn concat_2srlsc(list: &[TwoSlopeRateLatency]) -> Result<TwoSlopeRateLatency> {
    let first = list.first().ok_or(CurveError::EmptyConcatenation)?;
    let rate = first.reprofiler.rate;
    let mut latency = 0.0;
    let mut peak = f64::INFINITY;
    let mut offset = f64::INFINITY;
    for beta in list {
        if (beta.reprofiler.rate - rate).abs() > TOLERANCE * rate.abs().max(1.0) {
            return Err(CurveError::RateMismatch);
        }
        latency += beta.latency;
        peak = peak.min(beta.reprofiler.peak_rate);
        offset = offset.min(beta.reprofiler.offset);
    }
    if peak <= rate {
        offset = 0.0;
    }
    TwoSlopeRateLatency::from_params(latency, peak, offset, rate)
}

/// `(f ⊗ g)(t) = inf_{0 <= s <= t} f(s) + g(t - s)`.
///
/// Two concave curves through the origin convolve to their pointwise minimum.
/// Anything else falls back to [`convolve_on_grid`] with a horizon of four
/// times the latest breakpoint.
pub fn min_plus_convolve(f: &Curve, g: &Curve) -> Curve {
    if f.is_concave() && g.is_concave() {
        return f.pointwise_min(g);
    }
    let horizon = 4.0 * f.last_breakpoint().max(g.last_breakpoint()).max(0.25);
    convolve_on_grid(f, g, horizon, DEFAULT_GRID_SAMPLES)
}

/// Brute-force min-plus convolution sampled on `samples` uniform steps over
/// `[0, horizon]`, returned as the piecewise-linear interpolation of the
/// samples (extended past the horizon with the smaller long-term rate).
pub fn convolve_on_grid(f: &Curve, g: &Curve, horizon: f64, samples: usize) -> Curve {
    let samples = samples.max(1);
    let step = horizon / samples as f64;
    let fv: Vec<f64> = (0..=samples).map(|k| f.value(k as f64 * step)).collect();
    let gv: Vec<f64> = (0..=samples).map(|k| g.value(k as f64 * step)).collect();
    let mut conv = vec![f64::INFINITY; samples + 1];
    for (k, c) in conv.iter_mut().enumerate() {
        let mut best = f64::INFINITY;
        for i in 0..=k {
            let v = fv[i] + gv[k - i];
            if v < best {
                best = v;
            }
        }
        *c = best;
    }
    let mut points = Vec::with_capacity(samples + 1);
    points.push(Breakpoint::new(
        0.0,
        0.0,
        ((conv[1] - f.origin_jump().min(g.origin_jump())) / step).max(0.0),
    ));
    for k in 1..samples {
        let t = k as f64 * step;
        points.push(Breakpoint::new(t, conv[k], ((conv[k + 1] - conv[k]) / step).max(0.0)));
    }
    let tail = f.long_term_rate().min(g.long_term_rate());
    points.push(Breakpoint::new(horizon, conv[samples], tail));
    Curve::from_parts(points, f.origin_jump().min(g.origin_jump()))
}

/// Horizontal deviation `sup_t inf { d >= 0 : alpha(t) <= beta(t + d) }`,
/// the worst-case delay of `alpha` served by `beta`. Exact for
/// piecewise-linear inputs; infinite when `beta` grows slower than `alpha`.
pub fn horizontal_deviation(alpha: &Curve, beta: &Curve) -> f64 {
    let (ra, rb) = (alpha.long_term_rate(), beta.long_term_rate());
    if rb < ra - TOLERANCE * ra.abs().max(1.0) {
        return f64::INFINITY;
    }
    // h(t) = beta^-1(alpha(t)) - t is piecewise linear between the times in
    // `candidates`; its sup is attained (or approached) at one of them.
    let mut candidates: Vec<f64> = alpha.breakpoints().iter().map(|p| p.time).collect();
    for p in beta.breakpoints() {
        for y in [beta.left_limit(p.time), beta.right_limit(p.time)] {
            let t = alpha.lower_inverse(y);
            if t.is_finite() {
                candidates.push(t);
            }
        }
    }
    let mut best: f64 = 0.0;
    for &t in &candidates {
        let y = alpha.right_limit(t);
        let mut d = beta.lower_inverse(y) - t;
        let rising = alpha.breakpoints()[alpha.segment(t)].slope > 0.0;
        if rising {
            // Values just above y may jump past a flat piece of beta.
            d = d.max(beta.upper_inverse(y) - t);
        }
        if d.is_nan() {
            continue;
        }
        best = best.max(d);
    }
    best
}

/// Vertical deviation `sup_t { alpha(t) - beta(t) }`, the worst-case backlog.
/// Infinite when `alpha` grows faster than `beta` in the long run.
pub fn vertical_deviation(alpha: &Curve, beta: &Curve) -> f64 {
    let (ra, rb) = (alpha.long_term_rate(), beta.long_term_rate());
    if ra > rb + TOLERANCE * rb.abs().max(1.0) {
        return f64::INFINITY;
    }
    let times = alpha.merged_times(beta);
    let mut best: f64 = 0.0;
    for &t in &times {
        best = best
            .max(alpha.right_limit(t) - beta.right_limit(t))
            .max(alpha.left_limit(t) - beta.left_limit(t));
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tb(r: f64, b: f64) -> Curve {
        TokenBucket::new(r, b).unwrap().curve()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
    }

    // Dense-grid oracle for the horizontal deviation.
    fn grid_hdev(alpha: &Curve, beta: &Curve, horizon: f64, step: f64) -> f64 {
        let n = (horizon / step) as usize;
        let mut best: f64 = 0.0;
        for k in 0..=n {
            let t = if k == 0 { 1e-12 } else { k as f64 * step };
            let a = alpha.value(t);
            let mut j = 0usize;
            while beta.value(t + j as f64 * step) < a - 1e-12 {
                j += 1;
            }
            best = best.max(j as f64 * step);
        }
        best
    }

    #[test]
    fn evaluate_examples() {
        let alpha = tb(1.0, 2.0);
        assert_eq!(alpha.evaluate(0.0).unwrap(), 0.0);
        assert_eq!(alpha.evaluate(3.0).unwrap(), 5.0);
        let sigma = TwoSlopeReprofiler::new(2.0, 1.0, 1.0).unwrap().curve();
        assert_eq!(sigma.evaluate(1.0).unwrap(), 2.0);
        assert!(matches!(alpha.evaluate(-1.0), Err(CurveError::NegativeTime(_))));
    }

    #[test]
    fn rejects_malformed_curves() {
        assert!(Curve::new(vec![], 0.0).is_err());
        assert!(Curve::new(vec![Breakpoint::new(1.0, 0.0, 1.0)], 0.0).is_err());
        let dec = vec![Breakpoint::new(0.0, 0.0, 1.0), Breakpoint::new(1.0, 0.5, 1.0)];
        assert_eq!(Curve::new(dec, 0.0), Err(CurveError::Decreasing(1)));
        let same_time = vec![Breakpoint::new(0.0, 0.0, 1.0), Breakpoint::new(0.0, 0.0, 1.0)];
        assert!(Curve::new(same_time, 0.0).is_err());
        assert!(TokenBucket::new(0.0, 1.0).is_err());
        assert!(TwoSlopeReprofiler::new(1.0, 0.5, 1.0).is_err());
        assert!(TwoSlopeReprofiler::new(0.5, 0.0, 1.0).is_err());
    }

    #[test]
    fn jump_convention() {
        let beta = tb(1.0, 2.0).shifted(1.0);
        assert_eq!(beta.value(1.0), 2.0);
        assert_eq!(beta.left_limit(1.0), 0.0);
        assert_eq!(beta.value(0.5), 0.0);
        assert_eq!(beta.value(2.0), 3.0);
    }

    #[test]
    fn convolution_of_token_buckets_is_pointwise_min() {
        let (a, b) = (tb(1.0, 2.0), tb(2.0, 1.0));
        let conv = min_plus_convolve(&a, &b);
        for k in 1..=1000 {
            let t = k as f64 * 0.01;
            let expected = if t <= 1.0 { 1.0 + 2.0 * t } else { 2.0 + t };
            assert!(close(conv.value(t), expected, 1e-12), "t={t}");
        }
        let grid = convolve_on_grid(&a, &b, 10.0, 10_000);
        for k in 1..10_000 {
            let t = k as f64 * 1e-3;
            assert!((grid.value(t) - conv.value(t)).abs() <= 1e-9, "t={t}");
        }
    }

    #[test]
    fn delay_element_identity() {
        let c = tb(3.0, 1.5);
        let z = DelayElement::new(0.0).unwrap();
        assert_eq!(z.convolve(&c), c);
        let shifted = DelayElement::new(2.0).unwrap().convolve(&c);
        assert_eq!(shifted.value(2.0), 1.5);
        assert_eq!(shifted.value(3.0), 4.5);
    }

    #[test]
    fn concatenation_closed_form() {
        let a = TwoSlopeRateLatency::from_params(1.0, 3.0, 2.0, 1.0).unwrap();
        let b = TwoSlopeRateLatency::from_params(2.0, 2.0, 3.0, 1.0).unwrap();
        let c = concat_2srlsc(&[a, b]).unwrap();
        assert_eq!(c, TwoSlopeRateLatency::from_params(3.0, 2.0, 2.0, 1.0).unwrap());
        assert_eq!(concat_2srlsc(&[a]).unwrap(), a);
        let doubled = concat_2srlsc(&[a, a]).unwrap();
        assert_eq!(doubled.latency, 2.0);
        assert_eq!(doubled.reprofiler, a.reprofiler);
        let other = TwoSlopeRateLatency::from_params(0.0, 3.0, 1.0, 2.0).unwrap();
        assert_eq!(concat_2srlsc(&[a, other]), Err(CurveError::RateMismatch));
        assert_eq!(concat_2srlsc(&[]), Err(CurveError::EmptyConcatenation));
    }

    #[test]
    fn horizontal_deviation_examples() {
        let alpha = tb(1.0, 2.0);
        let sigma = TwoSlopeReprofiler::new(2.0, 1.0, 1.0).unwrap().curve();
        assert!(close(horizontal_deviation(&alpha, &sigma), 1.0, 1e-12));
        assert_eq!(horizontal_deviation(&alpha, &alpha), 0.0);
        let alpha4 = tb(1.0, 4.0);
        let beta = TwoSlopeRateLatency::from_params(1.0, 4.0, 3.0, 1.0).unwrap().curve();
        let exact = horizontal_deviation(&alpha4, &beta);
        assert!(close(exact, 2.0, 1e-12));
        let grid = grid_hdev(&alpha4, &beta, 20.0, 1e-3);
        assert!((grid - exact).abs() <= 1e-3 + 1e-9);
        assert!(horizontal_deviation(&tb(2.0, 1.0), &Curve::rate_line(1.0)).is_infinite());
    }

    #[test]
    fn vertical_deviation_examples() {
        let alpha = tb(1.0, 2.0);
        assert!(close(vertical_deviation(&alpha, &Curve::rate_line(2.0)), 2.0, 1e-12));
        assert_eq!(vertical_deviation(&alpha, &alpha), 0.0);
        let sigma = TwoSlopeReprofiler::new(2.0, 1.0, 1.0).unwrap().curve();
        assert_eq!(vertical_deviation(&sigma, &Curve::rate_line(2.0)), 0.0);
        assert!(vertical_deviation(&alpha, &Curve::rate_line(0.5)).is_infinite());
    }

    #[test]
    fn optimal_reprofiler_examples() {
        let alpha = TokenBucket::new(1.0, 2.0).unwrap();
        let s = optimal_reprofiler(&alpha, 1.0).unwrap();
        assert_eq!((s.peak_rate, s.offset, s.rate), (2.0, 1.0, 1.0));
        let full = optimal_reprofiler(&alpha, 2.0).unwrap();
        assert_eq!((full.peak_rate, full.offset, full.rate), (1.0, 0.0, 1.0));
        assert!(optimal_reprofiler(&alpha, 0.0).is_err());
        assert!(optimal_reprofiler(&alpha, 2.5).is_err());

        let expt1 = TokenBucket::new(98.75, 88.18).unwrap();
        let s = optimal_reprofiler(&expt1, 0.10).unwrap();
        assert!(close(s.peak_rate, 881.8, 1e-12));
        assert!(close(s.offset, 78.305, 1e-12));
        assert!(close(horizontal_deviation(&expt1.curve(), &s.curve()), 0.10, 1e-12));
    }

    #[test]
    fn reprofiled_curve_without_delay_is_the_token_bucket() {
        let alpha = TokenBucket::new(1.0, 2.0).unwrap();
        assert_eq!(reprofiled_curve(&alpha, 0.0).unwrap(), alpha.curve());
    }

    #[test]
    fn inverses() {
        let c = tb(1.0, 2.0).shifted(1.0);
        assert_eq!(c.lower_inverse(1.0), 1.0);
        assert_eq!(c.lower_inverse(3.0), 2.0);
        assert_eq!(c.upper_inverse(0.0), 1.0);
        assert_eq!(Curve::zero().lower_inverse(1.0), f64::INFINITY);
    }

    fn concave_curve() -> impl Strategy<Value = Curve> {
        (0.0..5.0f64, prop::collection::vec((0.01..2.0f64, 0.1..10.0f64), 1..5)).prop_map(|(jump, segs)| {
            let mut slopes: Vec<f64> = segs.iter().map(|s| s.1).collect();
            slopes.sort_by(|a, b| b.total_cmp(a));
            let mut points = Vec::new();
            let (mut t, mut v) = (0.0, 0.0);
            for (k, (len, _)) in segs.iter().enumerate() {
                points.push(Breakpoint::new(t, v, slopes[k]));
                v = if k == 0 { jump } else { v } + slopes[k] * len;
                t += len;
            }
            Curve::new(points, jump).unwrap()
        })
    }

    proptest! {
        #[test]
        fn concave_convolution_commutes(f in concave_curve(), g in concave_curve()) {
            let fg = min_plus_convolve(&f, &g);
            let gf = min_plus_convolve(&g, &f);
            let grid = convolve_on_grid(&f, &g, 12.0, 2_000);
            for k in 1..2_000 {
                let t = k as f64 * 0.006;
                prop_assert!(close(fg.value(t), gf.value(t), 1e-9));
                prop_assert!((grid.value(t) - fg.value(t)).abs() <= 1e-6 * fg.value(t).max(1.0));
            }
        }

        #[test]
        fn concave_convolution_associates(
            f in concave_curve(), g in concave_curve(), h in concave_curve()
        ) {
            let left = min_plus_convolve(&min_plus_convolve(&f, &g), &h);
            let right = min_plus_convolve(&f, &min_plus_convolve(&g, &h));
            for k in 1..500 {
                let t = k as f64 * 0.03;
                prop_assert!(close(left.value(t), right.value(t), 1e-9));
            }
        }

        #[test]
        fn reprofiler_delay_is_exact(r in 0.1..100.0f64, b in 0.1..100.0f64, frac in 0.001..1.0f64) {
            let alpha = TokenBucket::new(r, b).unwrap();
            let delay = frac * alpha.max_reprofiling_delay();
            let sigma = optimal_reprofiler(&alpha, delay).unwrap();
            let d = horizontal_deviation(&alpha.curve(), &sigma.curve());
            prop_assert!(close(d, delay, 1e-9), "d={d} delay={delay}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn deviations_match_dense_grid(
            r in 0.5..5.0f64, b in 0.5..5.0f64, latency in 0.0..2.0f64, frac in 0.05..1.0f64
        ) {
            let alpha = TokenBucket::new(r, b).unwrap();
            let sigma = optimal_reprofiler(&alpha, frac * alpha.max_reprofiling_delay()).unwrap();
            let beta = TwoSlopeRateLatency::new(latency, sigma).unwrap().curve();
            let step = 1e-3;
            let exact = horizontal_deviation(&alpha.curve(), &beta);
            let grid = grid_hdev(&alpha.curve(), &beta, 10.0, step);
            prop_assert!((exact - grid).abs() <= step + 1e-9, "exact={exact} grid={grid}");

            let vexact = vertical_deviation(&alpha.curve(), &beta);
            let mut vgrid: f64 = 0.0;
            for k in 0..=10_000 {
                let t = if k == 0 { 1e-12 } else { k as f64 * step };
                vgrid = vgrid.max(alpha.curve().value(t) - beta.value(t));
            }
            prop_assert!(vexact >= vgrid - 1e-9);
            prop_assert!(vexact - vgrid <= step * (r + sigma.peak_rate) + 1e-9);
        }
    }
}
