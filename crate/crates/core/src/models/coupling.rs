//! Monotone coupling transformers: the invertible per-dimension maps of the
//! quantile flows. Two families are implemented, affine and NLSQ
//! (nonlinear-squared, tau(z) = a + b z + c / (1 + (d z + g)^2)).
//!
//! Every transformer is produced from *raw* conditioner outputs through a
//! smooth reparameterization that enforces strict monotonicity, so the
//! constraint can never be violated during training — no projection step
//! exists or is needed.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

/// sqrt(3), spelled out since f64::sqrt is not const.
const SQRT_3: f64 = 1.732_050_807_568_877_2;

/// max_t |t / (1 + t^2)^2| = 9 / (16 sqrt(3)), attained at t = 1/sqrt(3).
const PEAK_BUMP_SLOPE: f64 = 9.0 / (16.0 * SQRT_3);

/// Bound such that |c d| <= margin * NLSQ_BUMP_BOUND * b implies
/// tau'(z) >= (1 - margin) * b everywhere. Equals 8 sqrt(3) / 9.
pub const NLSQ_BUMP_BOUND: f64 = 0.5 / PEAK_BUMP_SLOPE;

/// Fraction of the monotonicity budget the bump may use; the remaining 1%
/// keeps tau'(z) >= 0.01 b strictly positive.
const NLSQ_MARGIN: f64 = 0.99;

/// Minimum of the reparameterized t-scale (softplus(raw) + this).
const NLSQ_MIN_SCALE: f64 = 1e-3;

/// Which coupling family a flow uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CouplingKind {
    Affine,
    Nlsq,
}

impl CouplingKind {
    /// Number of raw conditioner outputs the transformer consumes.
    pub fn raw_param_count(self) -> usize {
        match self {
            CouplingKind::Affine => 2,
            CouplingKind::Nlsq => 5,
        }
    }
}

/// tau(z) = shift + exp(log_scale) * z. Strictly increasing since the scale
/// is an exponential.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineParams {
    pub shift: f64,
    pub log_scale: f64,
}

impl AffineParams {
    pub fn from_raw(raw: &[f64]) -> Self {
        AffineParams {
            shift: raw[0],
            log_scale: raw[1],
        }
    }

    #[inline]
    pub fn forward(&self, z: f64) -> f64 {
        self.shift + self.log_scale.exp() * z
    }

    #[inline]
    pub fn inverse(&self, y: f64) -> f64 {
        (y - self.shift) * (-self.log_scale).exp()
    }

    #[inline]
    pub fn derivative(&self) -> f64 {
        self.log_scale.exp()
    }
}

/// Realized NLSQ parameters: tau(z) = offset + slope * z + bump / (1 + t^2)
/// with t = scale * z + center.
///
/// The realization from raw conditioner outputs (r0..r4) is
///   offset = r0
///   slope  = exp(r1)
///   bump   = 0.99 * (8 sqrt(3) / 9) * (slope / scale) * tanh(r2)
///   scale  = softplus(r3) + 1e-3
///   center = r4
/// which guarantees tau'(z) >= 0.01 * slope > 0 for every raw input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NlsqParams {
    offset: f64,
    slope: f64,
    bump: f64,
    scale: f64,
    center: f64,
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

impl NlsqParams {
    pub fn from_raw(raw: &[f64]) -> Self {
        let slope = raw[1].exp();
        let scale = softplus(raw[3]) + NLSQ_MIN_SCALE;
        let bump = NLSQ_MARGIN * NLSQ_BUMP_BOUND * (slope / scale) * raw[2].tanh();
        NlsqParams {
            offset: raw[0],
            slope,
            bump,
            scale,
            center: raw[4],
        }
    }

    pub fn slope(&self) -> f64 {
        self.slope
    }

    #[inline]
    pub fn forward(&self, z: f64) -> f64 {
        let t = self.scale * z + self.center;
        self.offset + self.slope * z + self.bump / (1.0 + t * t)
    }

    /// tau'(z) = slope - 2 bump scale t / (1 + t^2)^2; positive by the
    /// parameterization.
    #[inline]
    pub fn derivative(&self, z: f64) -> f64 {
        let t = self.scale * z + self.center;
        let denom = 1.0 + t * t;
        self.slope - 2.0 * self.bump * self.scale * t / (denom * denom)
    }

    /// z where tau'(z) attains its global minimum (t = sign(bump)/sqrt(3)).
    pub fn derivative_argmin(&self) -> f64 {
        let t_star = if self.bump >= 0.0 { 1.0 } else { -1.0 } / SQRT_3;
        (t_star - self.center) / self.scale
    }

    /// Bracketed bisection from the affine-part estimate, then Newton polish.
    pub fn inverse(&self, y: f64) -> Result<f64> {
        if !(self.offset.is_finite()
            && self.slope.is_finite()
            && self.bump.is_finite()
            && self.scale.is_finite()
            && self.center.is_finite()
            && y.is_finite())
        {
            return Err(Error::BracketFailure {
                reason: format!("non-finite transformer parameters or target: {self:?}, y = {y}"),
            });
        }
        let z0 = (y - self.offset) / self.slope;
        let mut step = 1.0 + 0.5 * z0.abs();
        let (mut lo, mut hi) = (z0 - step, z0 + step);
        let mut guard = 0;
        while self.forward(lo) > y {
            lo -= step;
            step *= 2.0;
            guard += 1;
            if guard > 200 {
                return Err(Error::BracketFailure {
                    reason: "lower bracket expansion did not terminate".to_string(),
                });
            }
        }
        step = 1.0 + 0.5 * z0.abs();
        while self.forward(hi) < y {
            hi += step;
            step *= 2.0;
            guard += 1;
            if guard > 400 {
                return Err(Error::BracketFailure {
                    reason: "upper bracket expansion did not terminate".to_string(),
                });
            }
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.forward(mid) < y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mut z = 0.5 * (lo + hi);
        for _ in 0..5 {
            z -= (self.forward(z) - y) / self.derivative(z);
        }
        Ok(z)
    }
}

/// One monotone coupling transformer of either family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transformer {
    Affine(AffineParams),
    Nlsq(NlsqParams),
}

impl Transformer {
    pub fn from_raw(kind: CouplingKind, raw: &[f64]) -> Self {
        match kind {
            CouplingKind::Affine => Transformer::Affine(AffineParams::from_raw(raw)),
            CouplingKind::Nlsq => Transformer::Nlsq(NlsqParams::from_raw(raw)),
        }
    }

    #[inline]
    pub fn forward(&self, z: f64) -> f64 {
        match self {
            Transformer::Affine(p) => p.forward(z),
            Transformer::Nlsq(p) => p.forward(z),
        }
    }

    pub fn inverse(&self, y: f64) -> Result<f64> {
        match self {
            Transformer::Affine(p) => Ok(p.inverse(y)),
            Transformer::Nlsq(p) => p.inverse(y),
        }
    }

    #[inline]
    pub fn derivative(&self, z: f64) -> f64 {
        match self {
            Transformer::Affine(p) => p.derivative(),
            Transformer::Nlsq(p) => p.derivative(z),
        }
    }
}

// ---------------------------------------------------------------------------
// Tape replays. Raw parameters enter as tape vars so the loss head can chain
// through the realization and the transform.
// ---------------------------------------------------------------------------

/// Realized NLSQ parameters as tape expressions.
struct NlsqVars {
    offset: Var,
    slope: Var,
    bump: Var,
    scale: Var,
    center: Var,
}

fn realize_nlsq(tape: &mut Tape, raw: &[Var]) -> NlsqVars {
    let slope = tape.exp(raw[1]);
    let sp = tape.softplus(raw[3]);
    let scale = tape.add_const(sp, NLSQ_MIN_SCALE);
    let tanh_c = tape.tanh(raw[2]);
    let ratio = tape.div(slope, scale);
    let scaled = tape.mul(ratio, tanh_c);
    let bump = tape.mul_const(scaled, NLSQ_MARGIN * NLSQ_BUMP_BOUND);
    NlsqVars {
        offset: raw[0],
        slope,
        bump,
        scale,
        center: raw[4],
    }
}

fn nlsq_forward_vars(tape: &mut Tape, p: &NlsqVars, z: Var) -> Var {
    let sz = tape.mul(p.scale, z);
    let t = tape.add(sz, p.center);
    let t2 = tape.square(t);
    let denom = tape.add_const(t2, 1.0);
    let bump_term = tape.div(p.bump, denom);
    let lin = tape.mul(p.slope, z);
    let head = tape.add(p.offset, lin);
    tape.add(head, bump_term)
}

/// tau(z) on the tape; gradients flow into `raw` and `z`.
pub fn forward_on_tape(tape: &mut Tape, kind: CouplingKind, raw: &[Var], z: Var) -> Var {
    match kind {
        CouplingKind::Affine => {
            let scale = tape.exp(raw[1]);
            let sz = tape.mul(scale, z);
            tape.add(raw[0], sz)
        }
        CouplingKind::Nlsq => {
            let p = realize_nlsq(tape, raw);
            nlsq_forward_vars(tape, &p, z)
        }
    }
}

/// ln tau'(z) on the tape (the change-of-variables term of the NLL).
pub fn log_derivative_on_tape(tape: &mut Tape, kind: CouplingKind, raw: &[Var], z: Var) -> Var {
    match kind {
        // ln exp(r1) = r1 exactly.
        CouplingKind::Affine => raw[1],
        CouplingKind::Nlsq => {
            let p = realize_nlsq(tape, raw);
            let sz = tape.mul(p.scale, z);
            let t = tape.add(sz, p.center);
            let t2 = tape.square(t);
            let denom = tape.add_const(t2, 1.0);
            let denom2 = tape.square(denom);
            let bs = tape.mul(p.bump, p.scale);
            let bst = tape.mul(bs, t);
            let neg2 = tape.mul_const(bst, -2.0);
            let dip = tape.div(neg2, denom2);
            let deriv = tape.add(p.slope, dip);
            tape.ln(deriv)
        }
    }
}

/// tau^-1(y) on the tape.
///
/// The affine case is closed-form. The NLSQ case solves numerically at the
/// value level, then expresses the solution as one differentiable Newton
/// correction around the solved point, which realizes the implicit-function
/// derivative: dz/d(param) = -(d tau/d param) / tau'(z).
pub fn inverse_on_tape(tape: &mut Tape, kind: CouplingKind, raw: &[Var], y: Var) -> Result<Var> {
    match kind {
        CouplingKind::Affine => {
            let diff = tape.sub(y, raw[0]);
            let neg = tape.neg(raw[1]);
            let inv_scale = tape.exp(neg);
            Ok(tape.mul(diff, inv_scale))
        }
        CouplingKind::Nlsq => {
            let raw_vals: Vec<f64> = raw.iter().map(|&r| tape.value(r)).collect();
            let params = NlsqParams::from_raw(&raw_vals);
            let z_hat = params.inverse(tape.value(y))?;
            let inv_slope = 1.0 / params.derivative(z_hat);
            let z_const = tape.constant(z_hat);
            let p = realize_nlsq(tape, raw);
            let tau = nlsq_forward_vars(tape, &p, z_const);
            let resid = tape.sub(tau, y);
            let corr = tape.mul_const(resid, inv_slope);
            Ok(tape.sub(z_const, corr))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn affine_forward_example() {
        let t = AffineParams {
            shift: 2.0,
            log_scale: 3.0_f64.ln(),
        };
        assert!((t.forward(0.5) - 3.5).abs() < 1e-15);
        assert!((t.inverse(3.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn nlsq_with_zero_bump_is_affine() {
        // raw = [offset, ln(slope), 0 -> bump 0, *, *]
        let p = NlsqParams::from_raw(&[1.0, 2.0_f64.ln(), 0.0, 0.3, -0.7]);
        assert!((p.forward(2.0) - 5.0).abs() < 1e-12);
        // Inverse is exact in the degenerate case.
        let z = p.inverse(5.0).unwrap();
        assert!((z - 2.0).abs() < 1e-12);
    }

    #[test]
    fn nlsq_derivative_lower_bound_on_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let raw: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let p = NlsqParams::from_raw(&raw);
            let dip = p.derivative_argmin();
            let width = 5.0 / p.scale + 5.0;
            let mut min_d = f64::INFINITY;
            for k in 0..=2000 {
                let z = dip - width + 2.0 * width * k as f64 / 2000.0;
                min_d = min_d.min(p.derivative(z));
            }
            assert!(
                min_d >= 0.009 * p.slope(),
                "min derivative {min_d} vs bound {}",
                0.009 * p.slope()
            );
        }
    }

    #[test]
    fn nlsq_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..500 {
            let raw: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let p = NlsqParams::from_raw(&raw);
            let z = rng.gen_range(-10.0..10.0);
            let y = p.forward(z);
            let z_back = p.inverse(y).unwrap();
            assert!((z - z_back).abs() < 1e-6, "z {z} back {z_back}");
            assert!((p.forward(z_back) - y).abs() <= 1e-10);
        }
    }

    #[test]
    fn non_finite_params_rejected() {
        let p = NlsqParams::from_raw(&[f64::NAN, 0.0, 0.0, 0.0, 0.0]);
        assert!(p.inverse(1.0).is_err());
    }

    #[test]
    fn tape_forward_matches_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for kind in [CouplingKind::Affine, CouplingKind::Nlsq] {
            for _ in 0..50 {
                let raw: Vec<f64> = (0..kind.raw_param_count())
                    .map(|_| rng.gen_range(-2.0..2.0))
                    .collect();
                let z = rng.gen_range(-3.0..3.0);
                let plain = Transformer::from_raw(kind, &raw).forward(z);
                let mut tape = Tape::new();
                let raw_vars: Vec<Var> = raw.iter().map(|&r| tape.leaf(r)).collect();
                let zv = tape.constant(z);
                let out = forward_on_tape(&mut tape, kind, &raw_vars, zv);
                assert!((tape.value(out) - plain).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tape_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for kind in [CouplingKind::Affine, CouplingKind::Nlsq] {
            for _ in 0..25 {
                let raw: Vec<f64> = (0..kind.raw_param_count())
                    .map(|_| rng.gen_range(-1.5..1.5))
                    .collect();
                let z = rng.gen_range(-2.0..2.0);

                let mut tape = Tape::new();
                let raw_vars: Vec<Var> = raw.iter().map(|&r| tape.leaf(r)).collect();
                let zv = tape.leaf(z);
                let out = forward_on_tape(&mut tape, kind, &raw_vars, zv);
                tape.backward(out).unwrap();

                let f = |raw: &[f64], z: f64| Transformer::from_raw(kind, raw).forward(z);
                let h = 1e-6;
                for i in 0..raw.len() {
                    let mut up = raw.clone();
                    let mut dn = raw.clone();
                    up[i] += h;
                    dn[i] -= h;
                    let fd = (f(&up, z) - f(&dn, z)) / (2.0 * h);
                    let ad = tape.grad(raw_vars[i]);
                    assert!(
                        (fd - ad).abs() <= 1e-5 * (1.0 + fd.abs()),
                        "{kind:?} raw[{i}]: fd {fd} vs ad {ad}"
                    );
                }
                let fd_z = (f(&raw, z + h) - f(&raw, z - h)) / (2.0 * h);
                assert!((fd_z - tape.grad(zv)).abs() <= 1e-5 * (1.0 + fd_z.abs()));
            }
        }
    }

    #[test]
    fn tape_inverse_round_trips_and_differentiates() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for kind in [CouplingKind::Affine, CouplingKind::Nlsq] {
            for _ in 0..25 {
                let raw: Vec<f64> = (0..kind.raw_param_count())
                    .map(|_| rng.gen_range(-1.5..1.5))
                    .collect();
                let y = rng.gen_range(-4.0..4.0);

                let mut tape = Tape::new();
                let raw_vars: Vec<Var> = raw.iter().map(|&r| tape.leaf(r)).collect();
                let yv = tape.leaf(y);
                let z = inverse_on_tape(&mut tape, kind, &raw_vars, yv).unwrap();
                let z_val = tape.value(z);
                assert!(
                    (Transformer::from_raw(kind, &raw).forward(z_val) - y).abs() < 1e-9,
                    "inverse not consistent"
                );
                tape.backward(z).unwrap();

                let inv = |raw: &[f64], y: f64| {
                    Transformer::from_raw(kind, raw).inverse(y).unwrap()
                };
                let h = 1e-6;
                for i in 0..raw.len() {
                    let mut up = raw.clone();
                    let mut dn = raw.clone();
                    up[i] += h;
                    dn[i] -= h;
                    let fd = (inv(&up, y) - inv(&dn, y)) / (2.0 * h);
                    let ad = tape.grad(raw_vars[i]);
                    assert!(
                        (fd - ad).abs() <= 1e-4 * (1.0 + fd.abs()),
                        "{kind:?} raw[{i}]: fd {fd} vs ad {ad}"
                    );
                }
                let fd_y = (inv(&raw, y + h) - inv(&raw, y - h)) / (2.0 * h);
                assert!((fd_y - tape.grad(yv)).abs() <= 1e-4 * (1.0 + fd_y.abs()));
            }
        }
    }

    #[test]
    fn log_derivative_on_tape_matches_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for kind in [CouplingKind::Affine, CouplingKind::Nlsq] {
            for _ in 0..50 {
                let raw: Vec<f64> = (0..kind.raw_param_count())
                    .map(|_| rng.gen_range(-1.5..1.5))
                    .collect();
                let z = rng.gen_range(-2.0..2.0);
                let plain = Transformer::from_raw(kind, &raw).derivative(z).ln();
                let mut tape = Tape::new();
                let raw_vars: Vec<Var> = raw.iter().map(|&r| tape.leaf(r)).collect();
                let zv = tape.constant(z);
                let ld = log_derivative_on_tape(&mut tape, kind, &raw_vars, zv);
                assert!((tape.value(ld) - plain).abs() < 1e-10);
            }
        }
    }
}
