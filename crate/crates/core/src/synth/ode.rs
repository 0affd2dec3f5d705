//! Adaptive Dormand–Prince 5(4) integrator with 4th-order dense output.

use crate::expr::{Expr, Tape, MAX_NPARAMS};

const C: [f64; 6] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0];

const A: [[f64; 5]; 6] = [
    [0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
    ],
];

const B: [f64; 6] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
];

/// 5th-order minus embedded 4th-order weights; the last entry applies to
/// f(t + h, y_new).
const E: [f64; 7] = [
    -71.0 / 57600.0,
    0.0,
    71.0 / 16695.0,
    -71.0 / 1920.0,
    17253.0 / 339200.0,
    -22.0 / 525.0,
    1.0 / 40.0,
];

/// Dense-output coefficients: y(t + θh) = y + h Σ_i k_i Σ_j P[i][j] θ^(j+1).
const P: [[f64; 4]; 7] = [
    [
        1.0,
        -8048581381.0 / 2820520608.0,
        8663915743.0 / 2820520608.0,
        -12715105075.0 / 11282082432.0,
    ],
    [0.0, 0.0, 0.0, 0.0],
    [
        0.0,
        131558114200.0 / 32700410799.0,
        -68118460800.0 / 10900136933.0,
        87487479700.0 / 32700410799.0,
    ],
    [
        0.0,
        -1754552775.0 / 470086768.0,
        14199869525.0 / 1410260304.0,
        -10690763975.0 / 1880347072.0,
    ],
    [
        0.0,
        127303824393.0 / 49829197408.0,
        -318862633887.0 / 49829197408.0,
        701980252875.0 / 199316789632.0,
    ],
    [
        0.0,
        -282668133.0 / 205662961.0,
        2019193451.0 / 616988883.0,
        -1453857185.0 / 822651844.0,
    ],
    [
        0.0,
        40617522.0 / 29380423.0,
        -110615467.0 / 29380423.0,
        69997945.0 / 29380423.0,
    ],
];

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 10.0;
const MAX_STEPS: usize = 1_000_000;

pub const DEFAULT_RTOL: f64 = 1e-6;
pub const DEFAULT_ATOL: f64 = 1e-9;

/// Initial value problem over expressions. Each right-hand side reads the
/// state components as variables `0..n` and time as variable `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct OdeSpec {
    pub rhs: Vec<Expr>,
    pub initial: Vec<f64>,
    pub t_span: (f64, f64),
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OdeError {
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("step budget exhausted at t = {t}")]
    TooManySteps { t: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdeSolution {
    pub t: Vec<f64>,
    /// State at each requested time.
    pub y: Vec<Vec<f64>>,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

struct System {
    tapes: Vec<Tape>,
    n: usize,
}

impl System {
    fn new(rhs: &[Expr]) -> Self {
        Self {
            tapes: rhs.iter().map(Tape::compile).collect(),
            n: rhs.len(),
        }
    }

    fn eval(&self, t: f64, y: &[f64], out: &mut [f64], scratch: &mut Vec<f64>) {
        scratch.clear();
        scratch.extend_from_slice(y);
        scratch.push(t);
        let params = [0.0; MAX_NPARAMS];
        for (o, tape) in out.iter_mut().zip(&self.tapes) {
            *o = tape.eval(scratch, &params);
        }
    }
}

fn rms_norm(v: impl Iterator<Item = f64>, n: usize) -> f64 {
    (v.map(|x| x * x).sum::<f64>() / n as f64).sqrt()
}

/// Hairer–Wanner starting step heuristic.
fn initial_step(sys: &System, t0: f64, y0: &[f64], f0: &[f64], dir: f64, rtol: f64, atol: f64) -> f64 {
    let n = sys.n;
    let scale: Vec<f64> = y0.iter().map(|y| atol + y.abs() * rtol).collect();
    let d0 = rms_norm(y0.iter().zip(&scale).map(|(y, s)| y / s), n);
    let d1 = rms_norm(f0.iter().zip(&scale).map(|(f, s)| f / s), n);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, f)| y + h0 * dir * f).collect();
    let mut f1 = vec![0.0; n];
    let mut scratch = Vec::new();
    sys.eval(t0 + h0 * dir, &y1, &mut f1, &mut scratch);
    let d2 = rms_norm(f1.iter().zip(f0).zip(&scale).map(|((a, b), s)| (a - b) / s), n) / h0;
    let h1 = if d1 <= 1e-15 && d2 <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(1.0 / 5.0)
    };
    (100.0 * h0).min(h1)
}

/// Integrate and report the state at each of `t_eval` (sorted in the
/// direction of integration, inside `t_span`).
pub fn solve_ivp(
    rhs: &[Expr],
    initial: &[f64],
    t_span: (f64, f64),
    t_eval: &[f64],
    rtol: f64,
    atol: f64,
) -> Result<OdeSolution, OdeError> {
    let n = rhs.len();
    if n == 0 || initial.len() != n {
        return Err(OdeError::Invalid(format!(
            "{} right-hand sides for {} initial values",
            n,
            initial.len()
        )));
    }
    let (t0, t_end) = t_span;
    if !(t0.is_finite() && t_end.is_finite() && t0 != t_end) {
        return Err(OdeError::Invalid(format!("bad time span [{t0}, {t_end}]")));
    }
    if !(rtol > 0.0 && atol > 0.0) {
        return Err(OdeError::Invalid("tolerances must be positive".into()));
    }
    let dir = (t_end - t0).signum();
    if t_eval
        .windows(2)
        .any(|w| (w[1] - w[0]) * dir < 0.0)
        || t_eval.iter().any(|&t| (t - t0) * dir < 0.0 || (t - t_end) * dir > 0.0)
    {
        return Err(OdeError::Invalid("evaluation times must be sorted and inside the span".into()));
    }
    if initial.iter().any(|v| !v.is_finite()) {
        return Err(OdeError::NonFinite { t: t0 });
    }

    let sys = System::new(rhs);
    let mut scratch = Vec::with_capacity(n + 1);
    let mut t = t0;
    let mut y = initial.to_vec();
    let mut k = vec![vec![0.0; n]; 7];
    sys.eval(t, &y, &mut k[0], &mut scratch);
    if k[0].iter().any(|v| !v.is_finite()) {
        return Err(OdeError::NonFinite { t });
    }
    let mut h_abs = initial_step(&sys, t, &y, &k[0], dir, rtol, atol);

    let mut out = OdeSolution {
        t: Vec::with_capacity(t_eval.len()),
        y: Vec::with_capacity(t_eval.len()),
        accepted_steps: 0,
        rejected_steps: 0,
    };
    let mut next = 0;
    // Points sitting exactly on the start need no step.
    while next < t_eval.len() && t_eval[next] == t0 {
        out.t.push(t0);
        out.y.push(y.clone());
        next += 1;
    }

    let mut y_stage = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    let mut step_rejected = false;
    while (t_end - t) * dir > 0.0 {
        if out.accepted_steps + out.rejected_steps >= MAX_STEPS {
            return Err(OdeError::TooManySteps { t });
        }
        let min_step = 10.0 * (next_toward(t, dir) - t).abs();
        if h_abs < min_step {
            return Err(OdeError::StepUnderflow { t });
        }
        let mut h = h_abs * dir;
        let mut t_new = t + h;
        if (t_new - t_end) * dir > 0.0 {
            t_new = t_end;
        }
        h = t_new - t;
        let h_abs_used = h.abs();

        for s in 1..6 {
            for i in 0..n {
                let mut acc = 0.0;
                for (j, kj) in k.iter().enumerate().take(s) {
                    acc += A[s][j] * kj[i];
                }
                y_stage[i] = y[i] + h * acc;
            }
            sys.eval(t + C[s] * h, &y_stage, &mut k[s], &mut scratch);
        }
        for i in 0..n {
            let mut acc = 0.0;
            for s in 0..6 {
                acc += B[s] * k[s][i];
            }
            y_new[i] = y[i] + h * acc;
        }
        sys.eval(t_new, &y_new, &mut k[6], &mut scratch);

        let finite = y_new.iter().chain(k[6].iter()).all(|v| v.is_finite());
        let err_norm = if finite {
            rms_norm(
                (0..n).map(|i| {
                    let e: f64 = (0..7).map(|s| E[s] * k[s][i]).sum::<f64>() * h;
                    e / (atol + y[i].abs().max(y_new[i].abs()) * rtol)
                }),
                n,
            )
        } else {
            f64::INFINITY
        };

        if err_norm <= 1.0 && err_norm.is_finite() {
            let factor = if err_norm == 0.0 {
                MAX_FACTOR
            } else {
                MAX_FACTOR.min(SAFETY * err_norm.powf(-0.2))
            };
            // No growth right after a rejection.
            let factor = if step_rejected { factor.min(1.0) } else { factor };
            // Dense output for every requested time inside (t, t_new].
            while next < t_eval.len() && (t_eval[next] - t_new) * dir <= 0.0 {
                let te = t_eval[next];
                let theta = (te - t) / h;
                let powers = [theta, theta * theta, theta.powi(3), theta.powi(4)];
                let state: Vec<f64> = (0..n)
                    .map(|i| {
                        if te == t_new {
                            return y_new[i];
                        }
                        let mut acc = 0.0;
                        for (s, ks) in k.iter().enumerate() {
                            let q: f64 = P[s].iter().zip(&powers).map(|(p, w)| p * w).sum();
                            acc += ks[i] * q;
                        }
                        y[i] + h * acc
                    })
                    .collect();
                out.t.push(te);
                out.y.push(state);
                next += 1;
            }
            t = t_new;
            y.copy_from_slice(&y_new);
            k.swap(0, 6);
            h_abs = h_abs_used * factor;
            out.accepted_steps += 1;
            step_rejected = false;
        } else {
            if !finite && h_abs_used <= min_step {
                return Err(OdeError::NonFinite { t });
            }
            let shrink = if err_norm.is_finite() {
                MIN_FACTOR.max(SAFETY * err_norm.powf(-0.2))
            } else {
                MIN_FACTOR
            };
            h_abs = h_abs_used * shrink;
            out.rejected_steps += 1;
            step_rejected = true;
        }
    }
    Ok(out)
}

fn next_toward(t: f64, dir: f64) -> f64 {
    if dir > 0.0 {
        t.next_up()
    } else {
        t.next_down()
    }
}

/// Uniform sample times over the span, both endpoints included.
pub fn uniform_times(t_span: (f64, f64), samples: usize) -> Vec<f64> {
    let (a, b) = t_span;
    match samples {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..samples)
            .map(|k| {
                if k == samples - 1 {
                    b
                } else {
                    a + (b - a) * k as f64 / (samples - 1) as f64
                }
            })
            .collect(),
    }
}

/// Integrate `spec` and sample it at `spec.samples` uniform times.
pub fn integrate_rk45(spec: &OdeSpec, rtol: f64, atol: f64) -> Result<OdeSolution, OdeError> {
    if spec.samples < 2 || !(spec.t_span.0 < spec.t_span.1) {
        return Err(OdeError::Invalid("need samples >= 2 and start < end".into()));
    }
    let times = uniform_times(spec.t_span, spec.samples);
    solve_ivp(&spec.rhs, &spec.initial, spec.t_span, &times, rtol, atol)
}
