use std::collections::VecDeque;

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LbfgsOptions {
    pub history: usize,
    pub max_iter: usize,
    /// Line-search trials per iteration.
    pub max_line_search: usize,
    /// Stop when `‖g‖∞` falls below this.
    pub gtol: f64,
    /// Stop when the relative decrease of `f` in one iteration falls below this.
    pub ftol: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            history: 10,
            max_iter: 20,
            max_line_search: 25,
            gtol: 1e-12,
            ftol: 1e-15,
            c1: 1e-4,
            c2: 0.9,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Running,
    Converged,
    MaxIterations,
    LineSearchFailed,
    /// The objective was not finite at the starting point.
    BadStart,
}

#[derive(Clone, Debug)]
enum Phase {
    Start,
    Bracket {
        a: f64,
        a_prev: f64,
        f_prev: f64,
        d_prev: f64,
        g_prev: Vec<f64>,
        trials: usize,
    },
    Zoom {
        a: f64,
        lo: f64,
        f_lo: f64,
        d_lo: f64,
        g_lo: Vec<f64>,
        hi: f64,
        f_hi: f64,
        trials: usize,
    },
    Done,
}

/// Limited-memory BFGS with a strong-Wolfe line search, driven from outside:
/// [`Lbfgs::ask`] yields the next point to evaluate and [`Lbfgs::tell`]
/// reports `f` and `∇f` there. Many instances can therefore share one batched
/// objective evaluation.
#[derive(Clone, Debug)]
pub struct Lbfgs {
    opts: LbfgsOptions,
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
    s_hist: VecDeque<Vec<f64>>,
    y_hist: VecDeque<Vec<f64>>,
    dir: Vec<f64>,
    d0: f64,
    trial: Vec<f64>,
    phase: Phase,
    status: Status,
    iterations: usize,
    evaluations: usize,
    best_x: Vec<f64>,
    best_f: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Minimiser of the quadratic through `(lo, f_lo)` with slope `d_lo` and
/// `(hi, f_hi)`, kept away from both ends.
fn interpolate(lo: f64, f_lo: f64, d_lo: f64, hi: f64, f_hi: f64) -> f64 {
    let delta = hi - lo;
    let denom = 2.0 * (f_hi - f_lo - d_lo * delta);
    let raw = if denom > 0.0 && denom.is_finite() {
        lo - d_lo * delta * delta / denom
    } else {
        lo + 0.5 * delta
    };
    let (a, b) = if lo < hi { (lo, hi) } else { (hi, lo) };
    let margin = 0.1 * delta.abs();
    raw.clamp(a + margin, b - margin)
}

impl Lbfgs {
    pub fn new(x0: Vec<f64>, opts: LbfgsOptions) -> Self {
        let n = x0.len();
        Self {
            opts,
            x: x0.clone(),
            f: f64::INFINITY,
            g: vec![0.0; n],
            s_hist: VecDeque::new(),
            y_hist: VecDeque::new(),
            dir: vec![0.0; n],
            d0: 0.0,
            trial: x0.clone(),
            phase: Phase::Start,
            status: Status::Running,
            iterations: 0,
            evaluations: 0,
            best_x: x0,
            best_f: f64::INFINITY,
        }
    }

    /// The point whose objective is needed next, or `None` once finished.
    pub fn ask(&self) -> Option<&[f64]> {
        match self.phase {
            Phase::Done => None,
            _ => Some(&self.trial),
        }
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    /// Best point seen so far and its objective.
    pub fn best(&self) -> (&[f64], f64) {
        (&self.best_x, self.best_f)
    }

    pub fn tell(&mut self, f: f64, g: &[f64]) -> Result<()> {
        if matches!(self.phase, Phase::Done) {
            return Err(Error::Spec("L-BFGS already finished".into()));
        }
        if g.len() != self.x.len() {
            return Err(Error::Dimension(format!(
                "gradient has {} entries, expected {}",
                g.len(),
                self.x.len()
            )));
        }
        self.evaluations += 1;
        let finite = f.is_finite() && g.iter().all(|v| v.is_finite());
        let f = if finite { f } else { f64::INFINITY };
        if f < self.best_f {
            self.best_f = f;
            self.best_x.clone_from(&self.trial);
        }
        let phase = std::mem::replace(&mut self.phase, Phase::Done);
        match phase {
            Phase::Start => {
                if !finite {
                    self.status = Status::BadStart;
                    return Ok(());
                }
                self.f = f;
                self.g = g.to_vec();
                if inf_norm(g) <= self.opts.gtol {
                    self.status = Status::Converged;
                } else if self.opts.max_iter == 0 {
                    self.status = Status::MaxIterations;
                } else {
                    self.begin_iteration();
                }
            }
            Phase::Bracket {
                a,
                a_prev,
                f_prev,
                d_prev,
                g_prev,
                trials,
            } => {
                let da = if finite { dot(g, &self.dir) } else { f64::INFINITY };
                let armijo = self.f + self.opts.c1 * a * self.d0;
                if f > armijo || (a_prev > 0.0 && f >= f_prev) {
                    self.zoom(a_prev, f_prev, d_prev, g_prev, a, f, trials + 1);
                } else if da.abs() <= -self.opts.c2 * self.d0 {
                    self.accept(a, f, g.to_vec());
                } else if da >= 0.0 {
                    self.zoom(a, f, da, g.to_vec(), a_prev, f_prev, trials + 1);
                } else if trials + 1 >= self.opts.max_line_search {
                    self.accept(a, f, g.to_vec());
                } else {
                    let next = 2.0 * a;
                    self.set_trial(next);
                    self.phase = Phase::Bracket {
                        a: next,
                        a_prev: a,
                        f_prev: f,
                        d_prev: da,
                        g_prev: g.to_vec(),
                        trials: trials + 1,
                    };
                }
            }
            Phase::Zoom {
                a,
                mut lo,
                mut f_lo,
                mut d_lo,
                mut g_lo,
                mut hi,
                mut f_hi,
                trials,
            } => {
                let da = if finite { dot(g, &self.dir) } else { f64::INFINITY };
                let armijo = self.f + self.opts.c1 * a * self.d0;
                if f > armijo || f >= f_lo {
                    hi = a;
                    f_hi = f;
                } else {
                    if da.abs() <= -self.opts.c2 * self.d0 {
                        self.accept(a, f, g.to_vec());
                        return Ok(());
                    }
                    if da * (hi - lo) >= 0.0 {
                        hi = lo;
                        f_hi = f_lo;
                    }
                    lo = a;
                    f_lo = f;
                    d_lo = da;
                    g_lo = g.to_vec();
                }
                let narrow = (hi - lo).abs() <= 1e-14 * lo.abs().max(1.0);
                if trials + 1 >= self.opts.max_line_search || narrow {
                    if lo > 0.0 {
                        self.accept(lo, f_lo, g_lo);
                    } else {
                        self.finish(Status::LineSearchFailed);
                    }
                } else {
                    self.zoom(lo, f_lo, d_lo, g_lo, hi, f_hi, trials + 1);
                }
            }
            Phase::Done => unreachable!(),
        }
        Ok(())
    }

    fn set_trial(&mut self, a: f64) {
        for ((t, x), d) in self.trial.iter_mut().zip(&self.x).zip(&self.dir) {
            *t = x + a * d;
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn zoom(&mut self, lo: f64, f_lo: f64, d_lo: f64, g_lo: Vec<f64>, hi: f64, f_hi: f64, trials: usize) {
        let a = interpolate(lo, f_lo, d_lo, hi, f_hi);
        self.set_trial(a);
        self.phase = Phase::Zoom {
            a,
            lo,
            f_lo,
            d_lo,
            g_lo,
            hi,
            f_hi,
            trials,
        };
    }

    fn begin_iteration(&mut self) {
        // two-loop recursion
        let mut q = self.g.clone();
        let k = self.s_hist.len();
        let mut alphas = vec![0.0; k];
        for i in (0..k).rev() {
            let rho = 1.0 / dot(&self.y_hist[i], &self.s_hist[i]);
            alphas[i] = rho * dot(&self.s_hist[i], &q);
            for (qj, yj) in q.iter_mut().zip(&self.y_hist[i]) {
                *qj -= alphas[i] * yj;
            }
        }
        if let (Some(s), Some(y)) = (self.s_hist.back(), self.y_hist.back()) {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for i in 0..k {
            let rho = 1.0 / dot(&self.y_hist[i], &self.s_hist[i]);
            let beta = rho * dot(&self.y_hist[i], &q);
            for (qj, sj) in q.iter_mut().zip(&self.s_hist[i]) {
                *qj += (alphas[i] - beta) * sj;
            }
        }
        self.dir = q.iter().map(|v| -v).collect();
        self.d0 = dot(&self.g, &self.dir);
        if !(self.d0 < 0.0) {
            self.s_hist.clear();
            self.y_hist.clear();
            self.dir = self.g.iter().map(|v| -v).collect();
            self.d0 = -dot(&self.g, &self.g);
        }
        self.set_trial(1.0);
        self.phase = Phase::Bracket {
            a: 1.0,
            a_prev: 0.0,
            f_prev: self.f,
            d_prev: self.d0,
            g_prev: self.g.clone(),
            trials: 0,
        };
    }

    fn accept(&mut self, a: f64, f_new: f64, g_new: Vec<f64>) {
        let s: Vec<f64> = self.dir.iter().map(|d| a * d).collect();
        let y: Vec<f64> = g_new.iter().zip(&self.g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-16 * dot(&y, &y).max(f64::MIN_POSITIVE) && sy.is_finite() {
            if self.s_hist.len() == self.opts.history {
                self.s_hist.pop_front();
                self.y_hist.pop_front();
            }
            self.s_hist.push_back(s.clone());
            self.y_hist.push_back(y);
        }
        for (x, si) in self.x.iter_mut().zip(&s) {
            *x += si;
        }
        let f_old = self.f;
        self.f = f_new;
        self.g = g_new;
        self.iterations += 1;
        let stalled = f_old - f_new <= self.opts.ftol * f_old.abs().max(f_new.abs()).max(1.0);
        if inf_norm(&self.g) <= self.opts.gtol || stalled {
            self.finish(Status::Converged);
        } else if self.iterations >= self.opts.max_iter {
            self.finish(Status::MaxIterations);
        } else {
            self.begin_iteration();
        }
    }

    fn finish(&mut self, status: Status) {
        self.status = status;
        self.phase = Phase::Done;
    }
}

/// Runs one optimiser per starting point in lockstep; `eval` receives the
/// indices of the unfinished problems with their pending points and returns
/// `(f, ∇f)` for each.
pub fn minimize_lockstep<F>(starts: Vec<Vec<f64>>, opts: LbfgsOptions, mut eval: F) -> Result<Vec<Lbfgs>>
where
    F: FnMut(&[usize], &[&[f64]]) -> Result<Vec<(f64, Vec<f64>)>>,
{
    let mut runs: Vec<Lbfgs> = starts.into_iter().map(|x| Lbfgs::new(x, opts)).collect();
    loop {
        let active: Vec<usize> = (0..runs.len()).filter(|&i| runs[i].ask().is_some()).collect();
        if active.is_empty() {
            return Ok(runs);
        }
        let points: Vec<&[f64]> = active.iter().map(|&i| runs[i].ask().expect("active")).collect();
        let values = eval(&active, &points)?;
        if values.len() != active.len() {
            return Err(Error::Length(format!(
                "objective returned {} values for {} points",
                values.len(),
                active.len()
            )));
        }
        for (i, (f, g)) in active.into_iter().zip(values) {
            runs[i].tell(f, &g)?;
        }
    }
}

/// Single-problem convenience wrapper around [`minimize_lockstep`].
pub fn minimize<F>(x0: Vec<f64>, opts: LbfgsOptions, mut eval: F) -> Result<Lbfgs>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut runs = minimize_lockstep(vec![x0], opts, |_, pts| Ok(vec![eval(pts[0])?]))?;
    Ok(runs.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn shifted_quadratic(a: &[f64]) -> impl Fn(&[f64]) -> Result<(f64, Vec<f64>)> + '_ {
        move |x| {
            let g: Vec<f64> = x.iter().zip(a).map(|(x, a)| x - a).collect();
            Ok((0.5 * dot(&g, &g), g))
        }
    }

    #[test]
    fn quadratic_in_two_iterations() {
        let a = [1.5, -2.0, 0.25];
        let run = minimize(vec![0.0; 3], LbfgsOptions::default(), shifted_quadratic(&a)).unwrap();
        assert!(run.iterations() <= 2);
        let (x, f) = run.best();
        for (xi, ai) in x.iter().zip(a) {
            assert!((xi - ai).abs() < 1e-10);
        }
        assert!(f < 1e-20);
    }

    #[test]
    fn ill_conditioned_quadratic() {
        let scales = [1.0, 10.0, 100.0, 1000.0];
        let run = minimize(
            vec![1.0; 4],
            LbfgsOptions {
                max_iter: 100,
                ..Default::default()
            },
            |x| {
                let g: Vec<f64> = x.iter().zip(scales).map(|(x, s)| s * x).collect();
                Ok((0.5 * dot(x, &g), g))
            },
        )
        .unwrap();
        assert!(run.best().1 < 1e-16, "f = {}", run.best().1);
    }

    #[test]
    fn rosenbrock() {
        let run = minimize(
            vec![-1.2, 1.0],
            LbfgsOptions {
                max_iter: 200,
                ..Default::default()
            },
            |x| {
                let (a, b) = (x[0], x[1]);
                let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
                let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
                Ok((f, g))
            },
        )
        .unwrap();
        let (x, _) = run.best();
        assert!((x[0] - 1.0).abs() < 1e-6 && (x[1] - 1.0).abs() < 1e-6, "{x:?}");
    }

    #[test]
    fn recovers_from_non_finite_trial_points() {
        // f = x − ln x is undefined for x ≤ 0; the first unit step overshoots there.
        let run = minimize(vec![3.0], LbfgsOptions::default(), |x| {
            let v = x[0];
            if v <= 0.0 {
                Ok((f64::NAN, vec![f64::NAN]))
            } else {
                Ok((v - v.ln(), vec![1.0 - 1.0 / v]))
            }
        })
        .unwrap();
        assert!((run.best().0[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn bad_start_keeps_initial_point() {
        let run = minimize(vec![2.0], LbfgsOptions::default(), |_| Ok((f64::NAN, vec![0.0]))).unwrap();
        assert_eq!(run.status(), Status::BadStart);
        assert_eq!(run.best().0, &[2.0]);
    }

    #[test]
    fn never_returns_worse_than_start() {
        let run = minimize(
            vec![0.3],
            LbfgsOptions {
                max_iter: 3,
                ..Default::default()
            },
            |x| Ok(((5.0 * x[0]).sin() + 0.1 * x[0] * x[0], vec![5.0 * (5.0 * x[0]).cos() + 0.2 * x[0]])),
        )
        .unwrap();
        assert!(run.best().1 <= (1.5f64).sin() + 0.009);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn lockstep_matches_independent_runs(
            a in prop::collection::vec(-5.0f64..5.0, 2),
            b in prop::collection::vec(-5.0f64..5.0, 2),
            s in 0.5f64..20.0,
        ) {
            let objective = |x: &[f64], c: &[f64]| {
                let r: Vec<f64> = x.iter().zip(c).map(|(x, c)| x - c).collect();
                let f = 0.5 * (r[0] * r[0] + s * r[1] * r[1]) + 0.25 * r[0].powi(4);
                let g = vec![r[0] + r[0].powi(3), s * r[1]];
                (f, g)
            };
            let centres = [a.clone(), b.clone()];
            let runs = minimize_lockstep(vec![vec![0.0, 0.0]; 2], LbfgsOptions::default(), |idx, pts| {
                Ok(idx.iter().zip(pts).map(|(&i, p)| objective(p, &centres[i])).collect())
            }).unwrap();
            for (i, c) in centres.iter().enumerate() {
                let solo = minimize(vec![0.0, 0.0], LbfgsOptions::default(), |x| Ok(objective(x, c))).unwrap();
                prop_assert_eq!(solo.best().0, runs[i].best().0);
            }
        }
    }
}
