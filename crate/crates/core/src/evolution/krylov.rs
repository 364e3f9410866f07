//! Krylov-subspace action of the matrix exponential, `w = exp(tG) v`.
//!
//! Arnoldi with modified Gram–Schmidt and the step-size control of Sidje's
//! `expv` (a-priori step from the Krylov error bound, a-posteriori check from
//! the two extra Hessenberg entries, up to ten rejections per step).

use nalgebra::DMatrix;

use crate::error::{Error, Result};

use super::coords::RealGenerator;

/// Relative residual below which the Krylov space is taken as invariant.
const SAFETY: f64 = 0.9;
const ACCEPT_SLACK: f64 = 1.2;
const MAX_REJECT: usize = 10;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KrylovStats {
    pub steps: usize,
    pub rejected: usize,
    pub matvecs: usize,
    /// Sum of local error estimates.
    pub error_estimate: f64,
}

/// Propagates a vector under a fixed generator, carrying the step-size hint
/// across calls so that successive output intervals reuse it.
pub struct KrylovPropagator<'g> {
    gen: &'g RealGenerator,
    m: usize,
    /// Local error allowed per unit time.
    tol: f64,
    anorm: f64,
    step_hint: Option<f64>,
    pub stats: KrylovStats,
    basis: Vec<Vec<f64>>,
    scratch: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn round_step(h: f64) -> f64 {
    let s = 10f64.powf(h.log10().floor() - 1.0);
    (h / s).ceil() * s
}

impl<'g> KrylovPropagator<'g> {
    pub fn new(gen: &'g RealGenerator, krylov_dim: usize, tol: f64) -> Self {
        let n = gen.len();
        let m = krylov_dim.clamp(2, n.max(2));
        Self {
            gen,
            m,
            tol,
            anorm: gen.norm_inf().max(f64::MIN_POSITIVE),
            step_hint: None,
            stats: KrylovStats::default(),
            basis: vec![vec![0.0; n]; m + 1],
            scratch: vec![0.0; n],
        }
    }

    /// Advances `w` in place from `t0` to `t0 + t`.
    pub fn advance(&mut self, w: &mut [f64], t0: f64, t: f64) -> Result<()> {
        if t <= 0.0 {
            return Ok(());
        }
        let n = w.len();
        let mut beta = norm(w);
        if beta == 0.0 {
            return Ok(());
        }
        let m = self.m;
        let mut t_now = 0.0;
        let mut t_new = match self.step_hint {
            Some(h) => h,
            None => {
                let mp1 = (m + 1) as f64;
                let fact = (mp1 / std::f64::consts::E).powf(mp1)
                    * (2.0 * std::f64::consts::PI * mp1).sqrt();
                let h = (1.0 / self.anorm)
                    * ((fact * self.tol) / (4.0 * beta * self.anorm)).powf(1.0 / m as f64);
                round_step(h)
            }
        };

        while t_now < t {
            let clipped = t - t_now < t_new;
            let mut t_step = (t - t_now).min(t_new);
            if !(t_step > 1e-14 * (t0 + t_now).max(1.0)) {
                return Err(Error::Breakdown {
                    t_reached: t0 + t_now,
                    reason: format!("step size underflow (h = {t_step:e})"),
                });
            }
            self.stats.steps += 1;

            // Arnoldi
            let mut h = DMatrix::<f64>::zeros(m + 2, m + 2);
            for (vi, wi) in self.basis[0].iter_mut().zip(w.iter()) {
                *vi = wi / beta;
            }
            let mut mb = m;
            let mut happy = false;
            for j in 0..m {
                let (head, tail) = self.basis.split_at_mut(j + 1);
                let p = &mut tail[0];
                self.gen.apply(&head[j], p);
                self.stats.matvecs += 1;
                for (i, vi) in head.iter().enumerate() {
                    let hij = dot(vi, p);
                    h[(i, j)] = hij;
                    for (pk, vk) in p.iter_mut().zip(vi) {
                        *pk -= hij * vk;
                    }
                }
                let s = norm(p);
                // the neglected coupling s contributes at most about β s per unit time
                if beta * s <= self.tol {
                    happy = true;
                    mb = j + 1;
                    t_step = t - t_now;
                    break;
                }
                h[(j + 1, j)] = s;
                for pk in p.iter_mut() {
                    *pk /= s;
                }
            }
            let mut avnorm = 0.0;
            if !happy {
                h[(m + 1, m)] = 1.0;
                self.gen.apply(&self.basis[m], &mut self.scratch);
                self.stats.matvecs += 1;
                avnorm = norm(&self.scratch);
            }

            // exponential of the small Hessenberg with error control
            let mut rejects = 0;
            let (f, err_loc, xm) = loop {
                let mx = if happy { mb } else { m + 2 };
                let f = (h.view((0, 0), (mx, mx)) * t_step).exp();
                if happy {
                    break (f, 0.0, 1.0 / m as f64);
                }
                let phi1 = (beta * f[(m, 0)]).abs();
                let phi2 = (beta * f[(m + 1, 0)] * avnorm).abs();
                let (err, xm) = if phi1 > 10.0 * phi2 {
                    (phi2, 1.0 / m as f64)
                } else if phi1 > phi2 {
                    ((phi1 * phi2) / (phi1 - phi2), 1.0 / m as f64)
                } else {
                    (phi1, 1.0 / (m as f64 - 1.0))
                };
                if err <= ACCEPT_SLACK * t_step * self.tol {
                    break (f, err, xm);
                }
                if rejects == MAX_REJECT {
                    return Err(Error::Breakdown {
                        t_reached: t0 + t_now,
                        reason: format!("Krylov step rejected {MAX_REJECT} times (h = {t_step:e})"),
                    });
                }
                t_step = round_step(SAFETY * t_step * (t_step * self.tol / err).powf(xm));
                rejects += 1;
                self.stats.rejected += 1;
            };

            let mx = if happy { mb } else { m + 1 };
            w.iter_mut().for_each(|x| *x = 0.0);
            for j in 0..mx {
                let c = beta * f[(j, 0)];
                for (wk, vk) in w.iter_mut().zip(&self.basis[j]) {
                    *wk += c * vk;
                }
            }
            beta = norm(&w[..n]);
            if !beta.is_finite() {
                return Err(Error::Breakdown {
                    t_reached: t0 + t_now,
                    reason: "non-finite Krylov iterate".into(),
                });
            }
            t_now += t_step;
            let proposal = if !happy && err_loc > 0.0 {
                round_step(SAFETY * t_step * (t_step * self.tol / err_loc).powf(xm))
            } else {
                t_step * 2.0
            };
            t_new = if clipped && rejects == 0 { proposal.max(t_new) } else { proposal };
            self.stats.error_estimate += err_loc.max(self.anorm * f64::EPSILON);
            if beta == 0.0 {
                break;
            }
        }
        self.step_hint = Some(t_new);
        Ok(())
    }
}
