//! Layered soil profiles and material constants.

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// One homogeneous soil layer. A halfspace layer has `thickness == f64::INFINITY`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Layer {
    pub thickness: f64,
    pub cs: f64,
    pub cp: f64,
    pub beta_s: f64,
    pub beta_p: f64,
    pub rho: f64,
}

impl Layer {
    pub fn new(thickness: f64, cs: f64, cp: f64, beta_s: f64, beta_p: f64, rho: f64) -> Result<Self> {
        let layer = Layer { thickness, cs, cp, beta_s, beta_p, rho };
        layer.validate()?;
        Ok(layer)
    }

    pub fn halfspace(cs: f64, cp: f64, beta_s: f64, beta_p: f64, rho: f64) -> Result<Self> {
        Self::new(f64::INFINITY, cs, cp, beta_s, beta_p, rho)
    }

    pub fn is_halfspace(&self) -> bool {
        self.thickness.is_infinite()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidLayer(msg));
        if !(self.cs > 0.0 && self.cs.is_finite()) {
            return bad(format!("Cs must be positive, got {}", self.cs));
        }
        if !(self.cp > self.cs * (4.0f64 / 3.0).sqrt()) || !self.cp.is_finite() {
            return bad(format!("Cp = {} must exceed Cs*sqrt(4/3) = {}", self.cp, self.cs * (4.0f64 / 3.0).sqrt()));
        }
        if !(self.beta_s >= 0.0 && self.beta_p >= 0.0) {
            return bad("damping ratios must be non-negative".into());
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return bad(format!("density must be positive, got {}", self.rho));
        }
        if !(self.thickness > 0.0) {
            return bad(format!("thickness must be positive, got {}", self.thickness));
        }
        Ok(())
    }

    /// Real shear modulus rho*Cs^2.
    pub fn mu(&self) -> f64 {
        self.rho * self.cs * self.cs
    }

    /// Real Lame constant rho*Cp^2 - 2 mu.
    pub fn lambda(&self) -> f64 {
        self.rho * self.cp * self.cp - 2.0 * self.mu()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Bottom {
    Bedrock,
    Halfspace(Layer),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoilProfile {
    pub layers: Vec<Layer>,
    pub bottom: Bottom,
}

impl SoilProfile {
    pub fn new(layers: Vec<Layer>, bottom: Bottom) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidLayer("profile needs at least one finite layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            l.validate()?;
            if l.is_halfspace() {
                return Err(Error::InvalidLayer(format!("layer {} is unbounded; only the bottom may be a halfspace", i + 1)));
            }
        }
        if let Bottom::Halfspace(h) = &bottom {
            h.validate()?;
            if !h.is_halfspace() {
                return Err(Error::InvalidLayer("halfspace bottom must have unbounded thickness".into()));
            }
        }
        Ok(SoilProfile { layers, bottom })
    }

    pub fn total_thickness(&self) -> f64 {
        self.layers.iter().map(|l| l.thickness).sum()
    }

    /// Smallest shear wave speed over layers and halfspace.
    pub fn min_cs(&self) -> f64 {
        let mut cs = self.layers.iter().map(|l| l.cs).fold(f64::INFINITY, f64::min);
        if let Bottom::Halfspace(h) = &self.bottom {
            cs = cs.min(h.cs);
        }
        cs
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexModuli {
    pub mu_star: C64,
    pub lambda_star: C64,
}

/// Hysteretic damping by the correspondence principle:
/// mu* = mu(1 + 2 i beta_s), lambda* + 2 mu* = (lambda + 2 mu)(1 + 2 i beta_p).
pub fn complex_lame(layer: &Layer) -> Result<ComplexModuli> {
    layer.validate()?;
    let mu_star = C64::new(1.0, 2.0 * layer.beta_s) * layer.mu();
    let p_mod = C64::new(1.0, 2.0 * layer.beta_p) * (layer.rho * layer.cp * layer.cp);
    Ok(ComplexModuli { mu_star, lambda_star: p_mod - 2.0 * mu_star })
}

pub fn poisson_ratio(cs: f64, cp: f64) -> Result<f64> {
    if !(cs > 0.0) {
        return Err(Error::Domain(format!("Cs must be positive, got {cs}")));
    }
    let r2 = (cp / cs).powi(2);
    if !(r2 > 4.0 / 3.0) {
        return Err(Error::Domain(format!("Cp/Cs = {} must exceed sqrt(4/3)", cp / cs)));
    }
    Ok((r2 - 2.0) / (2.0 * (r2 - 1.0)))
}

/// Approximate Rayleigh speed and wavelength at frequency `f`.
pub fn rayleigh_estimate(cs: f64, nu: f64, f: f64) -> Result<(f64, f64)> {
    if !(f > 0.0) {
        return Err(Error::Domain(format!("frequency must be positive, got {f}")));
    }
    if !(0.0..0.5).contains(&nu) {
        return Err(Error::Domain(format!("Poisson ratio {nu} outside [0, 0.5)")));
    }
    let cr = cs * (0.87 + 1.12 * nu) / (1.0 + nu);
    Ok((cr, cr / f))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1e-300)
    }

    #[test]
    fn lame_bedrock_layer() {
        let l = Layer::new(20.0, 100.0, 200.0, 0.02, 0.02, 1800.0).unwrap();
        let m = complex_lame(&l).unwrap();
        assert!(close(m.mu_star.re, 18e6, 1e-14));
        assert!(close(m.mu_star.im, 0.72e6, 1e-14));
        assert!(close(m.lambda_star.re, 36e6, 1e-14));
        assert!(close(m.lambda_star.im, 1.44e6, 1e-14));
    }

    #[test]
    fn lame_undamped_is_real() {
        let l = Layer::new(1.0, 100.0, 200.0, 0.0, 0.0, 1800.0).unwrap();
        let m = complex_lame(&l).unwrap();
        assert_eq!(m.mu_star.im, 0.0);
        assert_eq!(m.lambda_star.im, 0.0);
    }

    #[test]
    fn lame_groene_hart_top() {
        let l = Layer::new(3.7, 50.0, 1761.0, 0.025, 0.025, 1107.0).unwrap();
        let m = complex_lame(&l).unwrap();
        assert!(close(m.mu_star.re, 2.7675e6, 1e-12));
        assert!(close(m.mu_star.im / m.mu_star.re, 0.05, 1e-12));
    }

    #[test]
    fn poisson_examples() {
        assert!(close(poisson_ratio(100.0, 200.0).unwrap(), 1.0 / 3.0, 1e-14));
        assert!(poisson_ratio(1.0, 2f64.sqrt()).unwrap().abs() < 1e-15);
        let nu = poisson_ratio(50.0, 1761.0).unwrap();
        assert!((nu - 0.4996).abs() < 5e-5, "{nu}");
        assert!(poisson_ratio(1.0, 1.1).is_err());
    }

    #[test]
    fn rayleigh_examples() {
        let (cr, lr) = rayleigh_estimate(100.0, 1.0 / 3.0, 10.0).unwrap();
        assert!((cr - 93.2).abs() / 93.2 < 2e-3);
        assert!((lr - 9.31).abs() / 9.31 < 2e-3);
        let (cr0, _) = rayleigh_estimate(100.0, 0.0, 1.0).unwrap();
        assert!(close(cr0, 87.0, 1e-14));
        assert!(rayleigh_estimate(100.0, 0.3, 0.0).is_err());
    }

    #[test]
    fn rejects_bad_layers() {
        assert!(Layer::new(1.0, 100.0, 110.0, 0.0, 0.0, 1.0).is_err());
        assert!(Layer::new(1.0, -1.0, 110.0, 0.0, 0.0, 1.0).is_err());
        assert!(Layer::new(0.0, 100.0, 200.0, 0.0, 0.0, 1.0).is_err());
        assert!(Layer::new(1.0, 100.0, 200.0, -0.1, 0.0, 1.0).is_err());
        let hs = Layer::halfspace(100.0, 200.0, 0.0, 0.0, 1.0).unwrap();
        assert!(SoilProfile::new(vec![hs], Bottom::Bedrock).is_err());
        assert!(SoilProfile::new(vec![], Bottom::Bedrock).is_err());
    }
}
