//! Adaptive Dormand–Prince 5(4) integrator with continuous output.
//!
//! Systems can project the state after each accepted step (used to keep the
//! speed on its level set), supply their own error weights, and request early
//! termination.

use crate::error::{MagflowError, Result};

/// An explicit first-order system `y' = f(t, y)`.
pub trait OdeSystem {
    fn len(&self) -> usize;

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()>;

    /// Maps an accepted state back onto the constraint manifold.
    fn project(&self, _y: &mut [f64]) {}

    /// Error weights for the components of `y1`.
    fn error_scale(&self, y0: &[f64], y1: &[f64], atol: f64, rtol: f64, scale: &mut [f64]) {
        for i in 0..scale.len() {
            scale[i] = atol + rtol * y0[i].abs().max(y1[i].abs());
        }
    }

    /// Whether an accepted state is still admissible.
    fn admissible(&self, _y: &[f64]) -> bool {
        true
    }

    /// Requests termination after an accepted step.
    fn stop(&self, _t: f64, _y: &[f64]) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub atol: f64,
    pub rtol: f64,
}

impl Tolerance {
    pub fn new(tol: f64) -> Self {
        Tolerance { atol: tol, rtol: tol }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Termination {
    Completed,
    /// The state left the chart domain (or the metric degenerated) at `t`.
    DomainExit { t: f64 },
    /// The system's stop hook fired at `t`.
    Stopped { t: f64 },
}

#[derive(Debug, Clone)]
struct Segment {
    t0: f64,
    h: f64,
    /// Five coefficient blocks of length `dim`.
    rcont: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, serde::Serialize)]
pub struct Stats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

/// Discrete nodes plus continuous extension of an integration.
#[derive(Debug, Clone)]
pub struct DenseSolution {
    dim: usize,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    segments: Vec<Segment>,
    pub termination: Termination,
    pub stats: Stats,
}

impl DenseSolution {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn t_start(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Whether `t` lies in the integrated window.
    pub fn covers(&self, t: f64) -> bool {
        let (a, b) = (self.t_start(), self.t_end());
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        t >= lo - 1e-12 * (1.0 + lo.abs()) && t <= hi + 1e-12 * (1.0 + hi.abs())
    }

    fn segment(&self, t: f64) -> &Segment {
        let forward = self.t_end() >= self.t_start();
        let idx = if forward {
            self.segments.partition_point(|s| s.t0 + s.h <= t)
        } else {
            self.segments.partition_point(|s| s.t0 + s.h >= t)
        };
        &self.segments[idx.min(self.segments.len() - 1)]
    }

    /// State at `t` from the continuous extension.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(t, &mut out);
        out
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        if self.segments.is_empty() {
            out.copy_from_slice(&self.states[0]);
            return;
        }
        let seg = self.segment(t);
        let th = (t - seg.t0) / seg.h;
        let th1 = 1.0 - th;
        let d = self.dim;
        let r = &seg.rcont;
        for i in 0..d {
            out[i] = r[i] + th * (r[d + i] + th1 * (r[2 * d + i] + th * (r[3 * d + i] + th1 * r[4 * d + i])));
        }
    }

    /// Time derivative of the continuous extension.
    pub fn eval_derivative(&self, t: f64) -> Vec<f64> {
        let d = self.dim;
        if self.segments.is_empty() {
            return vec![0.0; d];
        }
        let seg = self.segment(t);
        let th = (t - seg.t0) / seg.h;
        let th1 = 1.0 - th;
        let r = &seg.rcont;
        (0..d)
            .map(|i| {
                let a = r[3 * d + i] + th1 * r[4 * d + i];
                let b = r[2 * d + i] + th * a;
                let db = a - th * r[4 * d + i];
                let c = r[d + i] + th1 * b;
                let dc = -b + th1 * db;
                (c + th * dc) / seg.h
            })
            .collect()
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

#[derive(Debug, Clone, Copy)]
pub struct Options {
    pub tol: Tolerance,
    pub max_steps: usize,
    /// Upper bound on `|h|`; `None` means the whole interval.
    pub h_max: Option<f64>,
    pub h_init: Option<f64>,
}

impl Options {
    pub fn new(tol: f64) -> Self {
        Options {
            tol: Tolerance::new(tol),
            max_steps: 2_000_000,
            h_max: None,
            h_init: None,
        }
    }
}

fn is_soft_failure(e: &MagflowError) -> bool {
    matches!(e, MagflowError::Domain { .. } | MagflowError::SingularMetric { .. })
}

/// Integrates `sys` from `(t0, y0)` to `t1` (which may precede `t0`).
pub fn integrate<S: OdeSystem + ?Sized>(sys: &S, t0: f64, y0: &[f64], t1: f64, opts: &Options) -> Result<DenseSolution> {
    let d = sys.len();
    assert_eq!(y0.len(), d, "initial state has wrong length");
    let dir = if t1 >= t0 { 1.0 } else { -1.0 };
    let span = (t1 - t0).abs();
    let mut sol = DenseSolution {
        dim: d,
        times: vec![t0],
        states: vec![y0.to_vec()],
        segments: Vec::new(),
        termination: Termination::Completed,
        stats: Stats::default(),
    };
    if span == 0.0 {
        return Ok(sol);
    }
    let h_max = opts.h_max.unwrap_or(span).min(span);
    let Tolerance { atol, rtol } = opts.tol;

    let mut t = t0;
    let mut y = y0.to_vec();
    let mut k = vec![vec![0.0; d]; 7];
    let mut tmp = vec![0.0; d];
    let mut y1 = vec![0.0; d];
    let mut err = vec![0.0; d];
    let mut scale = vec![0.0; d];
    match sys.rhs(t, &y, &mut k[0]) {
        Ok(()) => {}
        Err(e) if is_soft_failure(&e) => {
            sol.termination = Termination::DomainExit { t };
            return Ok(sol);
        }
        Err(e) => return Err(e),
    }
    sol.stats.evaluations += 1;

    let mut h = match opts.h_init {
        Some(h) => h.min(h_max),
        None => initial_step(sys, t, &y, &k[0], dir, atol, rtol, h_max).unwrap_or(1e-3 * span),
    };
    let mut fac_old: f64 = 1e-4;
    let mut last_rejected = false;

    for _ in 0..opts.max_steps {
        let remaining = (t1 - t) * dir;
        if remaining <= 1e-14 * (1.0 + t.abs()) {
            return Ok(sol);
        }
        let mut last = false;
        if h >= remaining {
            h = remaining;
            last = true;
        }
        let hs = h * dir;
        if h < 1e-14 * (1.0 + t.abs()) {
            return Err(MagflowError::Stiffness { t, h });
        }

        let stage = |k: &mut Vec<Vec<f64>>, tmp: &mut Vec<f64>, y: &[f64]| -> Result<()> {
            let (k0, rest) = k.split_first_mut().unwrap();
            for i in 0..d {
                tmp[i] = y[i] + hs * A21 * k0[i];
            }
            sys.rhs(t + C2 * hs, tmp, &mut rest[0])?;
            for i in 0..d {
                tmp[i] = y[i] + hs * (A31 * k0[i] + A32 * rest[0][i]);
            }
            sys.rhs(t + C3 * hs, tmp, &mut rest[1])?;
            for i in 0..d {
                tmp[i] = y[i] + hs * (A41 * k0[i] + A42 * rest[0][i] + A43 * rest[1][i]);
            }
            sys.rhs(t + C4 * hs, tmp, &mut rest[2])?;
            for i in 0..d {
                tmp[i] = y[i] + hs * (A51 * k0[i] + A52 * rest[0][i] + A53 * rest[1][i] + A54 * rest[2][i]);
            }
            sys.rhs(t + C5 * hs, tmp, &mut rest[3])?;
            for i in 0..d {
                tmp[i] = y[i]
                    + hs * (A61 * k0[i] + A62 * rest[0][i] + A63 * rest[1][i] + A64 * rest[2][i] + A65 * rest[3][i]);
            }
            sys.rhs(t + hs, tmp, &mut rest[4])?;
            Ok(())
        };

        let staged = stage(&mut k, &mut tmp, &y);
        sol.stats.evaluations += 5;
        let staged = staged.and_then(|_| {
            for i in 0..d {
                y1[i] = y[i] + hs * (A71 * k[0][i] + A73 * k[2][i] + A74 * k[3][i] + A75 * k[4][i] + A76 * k[5][i]);
            }
            sys.rhs(t + hs, &y1, &mut k[6])
        });
        sol.stats.evaluations += 1;
        match staged {
            Ok(()) => {}
            Err(e) if is_soft_failure(&e) => {
                sol.stats.rejected += 1;
                h *= 0.25;
                last_rejected = true;
                if h < 1e-10 * span.max(1.0) {
                    sol.termination = Termination::DomainExit { t };
                    return Ok(sol);
                }
                continue;
            }
            Err(e) => return Err(e),
        }

        for i in 0..d {
            err[i] = hs * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i] + E7 * k[6][i]);
        }
        sys.error_scale(&y, &y1, atol, rtol, &mut scale);
        let en = (err.iter().zip(&scale).map(|(e, s)| (e / s).powi(2)).sum::<f64>() / d as f64).sqrt();

        // PI step-size control
        let expo1 = 0.2 - 0.04 * 0.75;
        let fac11 = en.powf(expo1);
        let mut fac = fac11 / fac_old.powf(0.04);
        fac = (fac / 0.9).clamp(0.1, 5.0);
        let h_new = h / fac;

        if en <= 1.0 {
            fac_old = en.max(1e-4);
            let mut rcont = vec![0.0; 5 * d];
            for i in 0..d {
                let ydiff = y1[i] - y[i];
                let bspl = hs * k[0][i] - ydiff;
                rcont[i] = y[i];
                rcont[d + i] = ydiff;
                rcont[2 * d + i] = bspl;
                rcont[3 * d + i] = ydiff - hs * k[6][i] - bspl;
                rcont[4 * d + i] = hs
                    * (D1 * k[0][i] + D3 * k[2][i] + D4 * k[3][i] + D5 * k[4][i] + D6 * k[5][i] + D7 * k[6][i]);
            }
            sol.segments.push(Segment { t0: t, h: hs, rcont });
            sol.stats.accepted += 1;
            t = if last { t1 } else { t + hs };
            y.copy_from_slice(&y1);
            sys.project(&mut y);
            sol.times.push(t);
            sol.states.push(y.clone());
            if !sys.admissible(&y) {
                sol.termination = Termination::DomainExit { t };
                return Ok(sol);
            }
            if sys.stop(t, &y) {
                sol.termination = Termination::Stopped { t };
                return Ok(sol);
            }
            if last {
                return Ok(sol);
            }
            match sys.rhs(t, &y, &mut k[0]) {
                Ok(()) => {}
                Err(e) if is_soft_failure(&e) => {
                    sol.termination = Termination::DomainExit { t };
                    return Ok(sol);
                }
                Err(e) => return Err(e),
            }
            sol.stats.evaluations += 1;
            let mut hn = h_new.min(h_max);
            if last_rejected {
                hn = hn.min(h);
            }
            h = hn;
            last_rejected = false;
        } else {
            sol.stats.rejected += 1;
            let shrink = if en.is_finite() { (fac11 / 0.9).min(5.0) } else { 5.0 };
            h /= shrink.max(1.0 / 0.9);
            last_rejected = true;
        }
    }
    Err(MagflowError::NonConvergence(format!(
        "step limit {} reached at t = {t}",
        opts.max_steps
    )))
}

#[allow(clippy::too_many_arguments)]
fn initial_step<S: OdeSystem + ?Sized>(
    sys: &S,
    t: f64,
    y: &[f64],
    f0: &[f64],
    dir: f64,
    atol: f64,
    rtol: f64,
    h_max: f64,
) -> Option<f64> {
    let d = y.len();
    let sk: Vec<f64> = y.iter().map(|v| atol + rtol * v.abs()).collect();
    let rms = |v: &[f64]| (v.iter().zip(&sk).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / d as f64).sqrt();
    let dnf = rms(f0);
    let dny = rms(y);
    let mut h = if dnf <= 1e-10 || dny <= 1e-10 { 1e-6 } else { 0.01 * dny / dnf };
    h = h.min(h_max);
    let y1: Vec<f64> = (0..d).map(|i| y[i] + h * dir * f0[i]).collect();
    let mut f1 = vec![0.0; d];
    sys.rhs(t + h * dir, &y1, &mut f1).ok()?;
    let diff: Vec<f64> = (0..d).map(|i| f1[i] - f0[i]).collect();
    let der2 = rms(&diff) / h;
    let der12 = dnf.max(der2);
    let h1 = if der12 <= 1e-15 {
        (h * 1e-3).max(1e-6)
    } else {
        (0.01 / der12).powf(0.2)
    };
    Some((100.0 * h).min(h1).min(h_max))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Oscillator;

    impl OdeSystem for Oscillator {
        fn len(&self) -> usize {
            2
        }
        fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
            dy[0] = y[1];
            dy[1] = -y[0];
            Ok(())
        }
    }

    #[test]
    fn harmonic_oscillator_forward_and_backward() {
        let opts = Options::new(1e-11);
        let sol = integrate(&Oscillator, 0.0, &[0.0, 1.0], 10.0, &opts).unwrap();
        let y = sol.states.last().unwrap();
        assert!((y[0] - 10f64.sin()).abs() < 1e-9);
        for &t in &[0.1, 3.3, 7.77, 9.99] {
            let yt = sol.eval(t);
            assert!((yt[0] - t.sin()).abs() < 1e-9, "dense output at {t}");
            let dy = sol.eval_derivative(t);
            assert!((dy[0] - t.cos()).abs() < 1e-8, "dense derivative at {t}");
        }
        let back = integrate(&Oscillator, 0.0, &[0.0, 1.0], -4.0, &opts).unwrap();
        assert!((back.eval(-2.5)[0] - (-2.5f64).sin()).abs() < 1e-9);
        assert_eq!(back.termination, Termination::Completed);
    }

    struct Blowup;

    impl OdeSystem for Blowup {
        fn len(&self) -> usize {
            1
        }
        fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
            dy[0] = y[0] * y[0];
            Ok(())
        }
        fn stop(&self, _t: f64, y: &[f64]) -> bool {
            y[0].abs() > 1e6
        }
    }

    #[test]
    fn stop_hook_truncates() {
        let sol = integrate(&Blowup, 0.0, &[1.0], 2.0, &Options::new(1e-10)).unwrap();
        match sol.termination {
            Termination::Stopped { t } => assert!((t - 1.0).abs() < 1e-5),
            other => panic!("unexpected {other:?}"),
        }
    }
}
