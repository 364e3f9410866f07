//! Dormand–Prince 5(4) with an embedded error estimate.

use crate::error::{Error, Result};

use super::coords::RealGenerator;

// stage nodes; the generator is autonomous so they only enter the tests
#[cfg(test)]
const C2: f64 = 1.0 / 5.0;
#[cfg(test)]
const C3: f64 = 3.0 / 10.0;
#[cfg(test)]
const C4: f64 = 4.0 / 5.0;
#[cfg(test)]
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
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// fifth minus fourth order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RkStats {
    pub steps: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

pub struct DormandPrince<'g> {
    gen: &'g RealGenerator,
    rel_tol: f64,
    abs_tol: f64,
    max_steps: usize,
    h: Option<f64>,
    k: [Vec<f64>; 7],
    stage: Vec<f64>,
    y_new: Vec<f64>,
    fsal_valid: bool,
    pub stats: RkStats,
}

impl<'g> DormandPrince<'g> {
    pub fn new(gen: &'g RealGenerator, rel_tol: f64, abs_tol: f64, max_steps: usize) -> Self {
        let n = gen.len();
        Self {
            gen,
            rel_tol,
            abs_tol,
            max_steps,
            h: None,
            k: std::array::from_fn(|_| vec![0.0; n]),
            stage: vec![0.0; n],
            y_new: vec![0.0; n],
            fsal_valid: false,
            stats: RkStats::default(),
        }
    }

    fn combine(&mut self, y: &[f64], h: f64, coeffs: &[(usize, f64)]) {
        for (i, s) in self.stage.iter_mut().enumerate() {
            let mut acc = 0.0;
            for &(j, a) in coeffs {
                acc += a * self.k[j][i];
            }
            *s = y[i] + h * acc;
        }
    }

    fn eval(&mut self, into: usize) {
        let (gen, stage) = (self.gen, &self.stage);
        gen.apply(stage, &mut self.k[into]);
        self.stats.rhs_evals += 1;
    }

    /// Advances `y` in place from `t0` to `t1`, landing exactly on `t1`.
    pub fn advance(&mut self, y: &mut [f64], t0: f64, t1: f64) -> Result<()> {
        if t1 <= t0 {
            return Ok(());
        }
        let mut t = t0;
        if !self.fsal_valid {
            self.gen.apply(y, &mut self.k[0]);
            self.stats.rhs_evals += 1;
            self.fsal_valid = true;
        }
        let mut h = self.h.unwrap_or_else(|| {
            let scale = self.gen.norm_inf().max(1e-300);
            (0.01 / scale).min(t1 - t0)
        });
        while t < t1 {
            if self.stats.steps >= self.max_steps {
                return Err(Error::Breakdown {
                    t_reached: t,
                    reason: format!("step budget of {} exhausted", self.max_steps),
                });
            }
            let last = t + h >= t1;
            let h_try = if last { t1 - t } else { h };
            if !(h_try > 1e-14 * t.abs().max(1.0)) && !last {
                return Err(Error::Breakdown {
                    t_reached: t,
                    reason: format!("step size underflow (h = {h_try:e})"),
                });
            }

            self.combine(y, h_try, &[(0, A21)]);
            self.eval(1);
            self.combine(y, h_try, &[(0, A31), (1, A32)]);
            self.eval(2);
            self.combine(y, h_try, &[(0, A41), (1, A42), (2, A43)]);
            self.eval(3);
            self.combine(y, h_try, &[(0, A51), (1, A52), (2, A53), (3, A54)]);
            self.eval(4);
            self.combine(y, h_try, &[(0, A61), (1, A62), (2, A63), (3, A64), (4, A65)]);
            self.eval(5);
            self.combine(y, h_try, &[(0, B1), (2, B3), (3, B4), (4, B5), (5, B6)]);
            self.y_new.copy_from_slice(&self.stage);
            self.eval(6);

            let mut err_sq = 0.0;
            for i in 0..y.len() {
                let e = h_try
                    * (E1 * self.k[0][i]
                        + E3 * self.k[2][i]
                        + E4 * self.k[3][i]
                        + E5 * self.k[4][i]
                        + E6 * self.k[5][i]
                        + E7 * self.k[6][i]);
                let sc = self.abs_tol + self.rel_tol * y[i].abs().max(self.y_new[i].abs());
                err_sq += (e / sc) * (e / sc);
            }
            let err = (err_sq / y.len() as f64).sqrt();
            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            if err <= 1.0 {
                t = if last { t1 } else { t + h_try };
                y.copy_from_slice(&self.y_new);
                self.k.swap(0, 6);
                self.stats.steps += 1;
                // keep the unclipped step so a short final step does not shrink the next interval
                h = if last { h.max(h_try * factor) } else { h_try * factor };
            } else {
                self.stats.rejected += 1;
                h = h_try * factor.min(1.0);
            }
        }
        self.h = Some(h);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    // the tableau is checked through the order conditions it must satisfy
    use super::*;

    #[test]
    fn weights_sum_to_one() {
        assert!((B1 + B3 + B4 + B5 + B6 - 1.0).abs() < 1e-15);
        assert!((E1 + E3 + E4 + E5 + E6 + E7).abs() < 1e-15);
        for (row, c) in [
            (A21, C2),
            (A31 + A32, C3),
            (A41 + A42 + A43, C4),
            (A51 + A52 + A53 + A54, C5),
            (A61 + A62 + A63 + A64 + A65, 1.0),
        ] {
            assert!((row - c).abs() < 1e-14);
        }
        let third = B3 * C3 * C3 + B4 * C4 * C4 + B5 * C5 * C5 + B6;
        assert!((third - 1.0 / 3.0).abs() < 1e-14);
    }
}
