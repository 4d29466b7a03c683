//! Bjontegaard delta-rate between two rate-quality curves.
//!
//! Each curve's log rate is fit with a cubic in the quality value; the fits
//! are integrated over the overlapping quality interval and the mean log
//! difference converts to a signed percent. Positive means curve B spends
//! more rate than curve A at equal quality.

use corrdiff::error::{Error, Result};

/// (rate, quality) pairs. Rates must be positive; quality is
/// higher-is-better by the time it reaches [`bd_rate`].
#[derive(Debug, Clone)]
pub struct Curve {
    pub points: Vec<(f64, f64)>,
}

impl Curve {
    fn validated(&self) -> Result<Vec<(f64, f64)>> {
        if self.points.len() < 4 {
            return Err(Error::Format(format!(
                "bd-rate needs at least 4 points per curve, got {}",
                self.points.len()
            )));
        }
        if self.points.iter().any(|&(r, q)| !(r > 0.0) || !q.is_finite()) {
            return Err(Error::Format("curve points must have positive rate and finite quality".into()));
        }
        let mut pts = self.points.clone();
        pts.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        Ok(pts)
    }
}

/// Fits ln(rate) = c0 + c1 q + c2 q^2 + c3 q^3 by least squares. Quality is
/// affinely mapped onto [-1, 1] first to keep the normal equations sane; the
/// returned closure evaluates the fit in original coordinates.
fn fit_log_rate(points: &[(f64, f64)]) -> Result<impl Fn(f64) -> f64> {
    let qmin = points.first().unwrap().1;
    let qmax = points.last().unwrap().1;
    if !(qmax > qmin) {
        return Err(Error::Format("curve quality values are all identical".into()));
    }
    let map = move |q: f64| 2.0 * (q - qmin) / (qmax - qmin) - 1.0;

    // Normal equations for the cubic.
    let mut ata = [[0.0f64; 4]; 4];
    let mut atb = [0.0f64; 4];
    for &(r, q) in points {
        let u = map(q);
        let basis = [1.0, u, u * u, u * u * u];
        let y = r.ln();
        for i in 0..4 {
            atb[i] += basis[i] * y;
            for j in 0..4 {
                ata[i][j] += basis[i] * basis[j];
            }
        }
    }
    let coef = solve4(ata, atb)?;
    Ok(move |q: f64| {
        let u = map(q);
        coef[0] + u * (coef[1] + u * (coef[2] + u * coef[3]))
    })
}

fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Result<[f64; 4]> {
    for col in 0..4 {
        let pivot = (col..4)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        if a[pivot][col].abs() < 1e-12 {
            return Err(Error::Numeric("degenerate curve fit".into()));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in 0..4 {
            if row == col {
                continue;
            }
            let f = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for i in 0..4 {
        x[i] = b[i] / a[i][i];
    }
    Ok(x)
}

/// Signed percent rate difference of B against A over their shared quality
/// range.
pub fn bd_rate(a: &Curve, b: &Curve) -> Result<f64> {
    let pa = a.validated()?;
    let pb = b.validated()?;
    let lo = pa.first().unwrap().1.max(pb.first().unwrap().1);
    let hi = pa.last().unwrap().1.min(pb.last().unwrap().1);
    if !(hi > lo) {
        return Err(Error::Format(format!(
            "quality ranges do not overlap (A ends at {}, B starts at {})",
            pa.last().unwrap().1.min(pb.last().unwrap().1),
            pa.first().unwrap().1.max(pb.first().unwrap().1)
        )));
    }
    let fa = fit_log_rate(&pa)?;
    let fb = fit_log_rate(&pb)?;
    // Simpson integration of the difference of the two cubics.
    let n = 64usize;
    let h = (hi - lo) / n as f64;
    let g = |q: f64| fb(q) - fa(q);
    let mut acc = g(lo) + g(hi);
    for i in 1..n {
        let q = lo + i as f64 * h;
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * g(q);
    }
    let avg = acc * h / 3.0 / (hi - lo);
    Ok((avg.exp() - 1.0) * 100.0)
}
