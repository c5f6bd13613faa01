//! Single-triple scoring functions on plain slices. Higher is more plausible.

use super::KgeError;

fn same_len(op: &'static str, parts: &[&[f64]]) -> Result<usize, KgeError> {
    let n = parts[0].len();
    if parts.iter().any(|p| p.len() != n) {
        return Err(KgeError::ShapeMismatch(op));
    }
    Ok(n)
}

/// `-‖h + r - t‖²`.
pub fn score_transe(h: &[f64], r: &[f64], t: &[f64]) -> Result<f64, KgeError> {
    same_len("transe", &[h, r, t])?;
    Ok(-h
        .iter()
        .zip(r)
        .zip(t)
        .map(|((a, b), c)| {
            let d = a + b - c;
            d * d
        })
        .sum::<f64>())
}

/// `-‖M h + r - M t‖²` with `m` a row-major `r.len() × h.len()` projection.
pub fn score_transr(h: &[f64], r: &[f64], t: &[f64], m: &[f64]) -> Result<f64, KgeError> {
    let e = same_len("transr", &[h, t])?;
    if m.len() != e * r.len() {
        return Err(KgeError::ShapeMismatch("transr"));
    }
    let mut s = 0.0;
    for (i, ri) in r.iter().enumerate() {
        let row = &m[i * e..(i + 1) * e];
        let ph: f64 = row.iter().zip(h).map(|(a, b)| a * b).sum();
        let pt: f64 = row.iter().zip(t).map(|(a, b)| a * b).sum();
        let d = ph + ri - pt;
        s += d * d;
    }
    Ok(-s)
}

/// Log expected-likelihood of the Gaussians `N(μt-μh, σt+σh)` and `N(μr, σr)`
/// with diagonal covariances.
pub fn score_kg2e(
    mu_h: &[f64],
    sig_h: &[f64],
    mu_r: &[f64],
    sig_r: &[f64],
    mu_t: &[f64],
    sig_t: &[f64],
) -> Result<f64, KgeError> {
    let e = same_len("kg2e", &[mu_h, sig_h, mu_r, sig_r, mu_t, sig_t])?;
    let mut quad = 0.0;
    let mut logdet = 0.0;
    for i in 0..e {
        let s = sig_t[i] + sig_h[i] + sig_r[i];
        if !(s > 0.0) {
            return Err(KgeError::NonPositiveCovariance);
        }
        let d = (mu_t[i] - mu_h[i]) - mu_r[i];
        quad += d * d / s;
        logdet += s.ln();
    }
    Ok(-0.5 * (quad + logdet + e as f64 * std::f64::consts::TAU.ln()))
}

/// `hᵀ M t` with `m` row-major `e × e`.
pub fn score_rescal(h: &[f64], t: &[f64], m: &[f64]) -> Result<f64, KgeError> {
    let e = same_len("rescal", &[h, t])?;
    if m.len() != e * e {
        return Err(KgeError::ShapeMismatch("rescal"));
    }
    let mut s = 0.0;
    for i in 0..e {
        for j in 0..e {
            s += h[i] * m[i * e + j] * t[j];
        }
    }
    Ok(s)
}

/// `Re(Σ r_i h_i conj(t_i))` over paired real/imaginary parts.
pub fn score_complex(
    h_re: &[f64],
    h_im: &[f64],
    r_re: &[f64],
    r_im: &[f64],
    t_re: &[f64],
    t_im: &[f64],
) -> Result<f64, KgeError> {
    let n = same_len("complex", &[h_re, h_im, r_re, r_im, t_re, t_im])?;
    let mut s = 0.0;
    for i in 0..n {
        s += r_re[i] * (h_re[i] * t_re[i] + h_im[i] * t_im[i])
            + r_im[i] * (h_re[i] * t_im[i] - h_im[i] * t_re[i]);
    }
    Ok(s)
}

/// Parameters of one NTN relation with `k` slices over `e`-dim entities.
#[derive(Debug, Clone, Copy)]
pub struct NtnRelation<'a> {
    /// `k × e × e`, slice-major.
    pub w: &'a [f64],
    /// `k × e`.
    pub m1: &'a [f64],
    /// `k × e`.
    pub m2: &'a [f64],
    pub b: &'a [f64],
    /// Output layer, length `k`.
    pub u: &'a [f64],
}

/// `uᵀ tanh(hᵀ W t + M1 h + M2 t + b)`.
pub fn score_ntn(h: &[f64], t: &[f64], p: NtnRelation<'_>) -> Result<f64, KgeError> {
    let e = same_len("ntn", &[h, t])?;
    let k = p.u.len();
    if p.w.len() != k * e * e || p.m1.len() != k * e || p.m2.len() != k * e || p.b.len() != k {
        return Err(KgeError::ShapeMismatch("ntn"));
    }
    let mut s = 0.0;
    for j in 0..k {
        let w = &p.w[j * e * e..(j + 1) * e * e];
        let mut bil = 0.0;
        for (a, ha) in h.iter().enumerate() {
            let row: f64 = w[a * e..(a + 1) * e].iter().zip(t).map(|(x, y)| x * y).sum();
            bil += ha * row;
        }
        let lin1: f64 = p.m1[j * e..(j + 1) * e].iter().zip(h).map(|(x, y)| x * y).sum();
        let lin2: f64 = p.m2[j * e..(j + 1) * e].iter().zip(t).map(|(x, y)| x * y).sum();
        s += p.u[j] * (bil + lin1 + lin2 + p.b[j]).tanh();
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transe_cases() {
        assert_eq!(score_transe(&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(score_transe(&[0.0; 2], &[0.0; 2], &[0.0; 2]).unwrap(), 0.0);
        assert_eq!(score_transe(&[1.0, 0.0], &[0.0; 2], &[0.0; 2]).unwrap(), -1.0);
        assert!(score_transe(&[1.0], &[0.0; 2], &[0.0; 2]).is_err());
    }

    #[test]
    fn transr_zero_projection() {
        assert_eq!(score_transr(&[1.0, 2.0], &[0.0], &[3.0, 4.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert!(score_transr(&[1.0, 2.0], &[0.0], &[3.0, 4.0], &[0.0]).is_err());
    }

    #[test]
    fn kg2e_cases() {
        let z = [0.0];
        let s = score_kg2e(&z, &[0.5], &z, &[0.25], &z, &[0.25]).unwrap();
        assert!((s + 0.5 * std::f64::consts::TAU.ln()).abs() < 1e-15);
        let s2 = score_kg2e(&z, &[1.0], &z, &[0.5], &z, &[0.5]).unwrap();
        assert!(s2 < s);
        assert_eq!(
            score_kg2e(&z, &[-1.0], &z, &[0.5], &z, &[0.25]),
            Err(KgeError::NonPositiveCovariance)
        );
    }

    #[test]
    fn rescal_and_complex_cases() {
        let eye = [1.0, 0.0, 0.0, 1.0];
        assert_eq!(score_rescal(&[1.0, 2.0], &[3.0, 4.0], &eye).unwrap(), 11.0);
        assert_eq!(score_rescal(&[0.0, 0.0], &[3.0, 4.0], &eye).unwrap(), 0.0);
        let one = [1.0];
        let zero = [0.0];
        assert_eq!(score_complex(&one, &zero, &one, &zero, &one, &zero).unwrap(), 1.0);
        // h = i, r = i, t = 1
        assert_eq!(score_complex(&zero, &one, &zero, &one, &one, &zero).unwrap(), -1.0);
    }

    #[test]
    fn ntn_cases() {
        let p = NtnRelation {
            w: &[0.0],
            m1: &[0.0],
            m2: &[0.0],
            b: &[0.0],
            u: &[0.0],
        };
        assert_eq!(score_ntn(&[0.3], &[0.7], p).unwrap(), 0.0);
        let p = NtnRelation {
            b: &[1.0],
            u: &[1.0],
            ..p
        };
        assert!((score_ntn(&[0.3], &[0.7], p).unwrap() - 1f64.tanh()).abs() < 1e-15);
    }
}
