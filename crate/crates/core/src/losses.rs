//! Relativistic adversarial, cycle, identity and paired reconstruction losses.
//!
//! Every loss is returned in the form that is minimized. Gradient helpers
//! return derivatives with respect to their array arguments.

use ndarray::{Array3, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 10.0,
            lambda3: 10.0,
            lambda4: 150.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda1, self.lambda2, self.lambda3, self.lambda4];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(format!("loss weights must be finite and >= 0, got {all:?}")));
        }
        Ok(())
    }
}

/// Per-step loss values. Generator-side terms feed `total`; `gan_d` is the
/// summed critic loss of both discriminators.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub gan_g: f64,
    pub gan_d: f64,
    pub cycle: f64,
    pub identity: f64,
    pub l1_paired: f64,
    pub total: f64,
    pub is_paired: bool,
}

impl LossReport {
    pub fn all_finite(&self) -> bool {
        [self.gan_g, self.gan_d, self.cycle, self.identity, self.l1_paired, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

fn same_shape<T>(a: &Array3<T>, b: &Array3<T>, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::InvalidInput(format!(
            "{what}: shape mismatch {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// `log(1 + e^z)` without overflow.
#[inline]
pub fn softplus<T: Scalar>(z: T) -> T {
    z.max(T::zero()) + (-z.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Critic loss: mean of `-log σ(c_real - c_fake)`.
pub fn relativistic_d_loss<T: Scalar>(c_real: &Array3<T>, c_fake: &Array3<T>) -> Result<T> {
    same_shape(c_real, c_fake, "relativistic loss")?;
    let n = T::of(c_real.len() as f64);
    let sum = Zip::from(c_real)
        .and(c_fake)
        .fold(T::zero(), |acc, &r, &f| acc + softplus(f - r));
    Ok(sum / n)
}

/// Generator loss: mean of `-log σ(c_fake - c_real)`.
pub fn relativistic_g_loss<T: Scalar>(c_real: &Array3<T>, c_fake: &Array3<T>) -> Result<T> {
    relativistic_d_loss(c_fake, c_real)
}

/// Value of [`relativistic_d_loss`] with its gradients w.r.t. `c_real` and `c_fake`.
pub fn relativistic_d_loss_grad<T: Scalar>(
    c_real: &Array3<T>,
    c_fake: &Array3<T>,
) -> Result<(T, Array3<T>, Array3<T>)> {
    let value = relativistic_d_loss(c_real, c_fake)?;
    let n = T::of(c_real.len() as f64);
    // d/dd softplus(-d) = -σ(-d)
    let mut g_real = Array3::zeros(c_real.dim());
    Zip::from(&mut g_real)
        .and(c_real)
        .and(c_fake)
        .for_each(|g, &r, &f| *g = -sigmoid(f - r) / n);
    let g_fake = g_real.mapv(|v| -v);
    Ok((value, g_real, g_fake))
}

/// Value of [`relativistic_g_loss`] with its gradients w.r.t. `c_real` and `c_fake`.
pub fn relativistic_g_loss_grad<T: Scalar>(
    c_real: &Array3<T>,
    c_fake: &Array3<T>,
) -> Result<(T, Array3<T>, Array3<T>)> {
    let (v, g_fake, g_real) = relativistic_d_loss_grad(c_fake, c_real)?;
    Ok((v, g_real, g_fake))
}

/// Mean absolute error.
pub fn mae<T: Scalar>(pred: &Array3<T>, target: &Array3<T>) -> Result<T> {
    same_shape(pred, target, "L1 loss")?;
    let sum = Zip::from(pred)
        .and(target)
        .fold(T::zero(), |acc, &p, &t| acc + (p - t).abs());
    Ok(sum / T::of(pred.len() as f64))
}

/// Gradient of [`mae`] w.r.t. `pred` (subgradient 0 where `pred == target`).
pub fn mae_grad<T: Scalar>(pred: &Array3<T>, target: &Array3<T>) -> Result<Array3<T>> {
    same_shape(pred, target, "L1 loss")?;
    let inv_n = T::one() / T::of(pred.len() as f64);
    let mut g = Array3::zeros(pred.dim());
    Zip::from(&mut g).and(pred).and(target).for_each(|g, &p, &t| {
        *g = if p > t {
            inv_n
        } else if p < t {
            -inv_n
        } else {
            T::zero()
        }
    });
    Ok(g)
}

/// `|x_cyc - x|` + `|y_cyc - y|`, each averaged over elements.
pub fn cycle_loss<T: Scalar>(x: &Array3<T>, x_cyc: &Array3<T>, y: &Array3<T>, y_cyc: &Array3<T>) -> Result<T> {
    Ok(mae(x_cyc, x)? + mae(y_cyc, y)?)
}

/// `|G_YX(x) - x|` + `|G_XY(y) - y|`, each averaged over elements.
pub fn identity_loss<T: Scalar>(
    x: &Array3<T>,
    g_yx_of_x: &Array3<T>,
    y: &Array3<T>,
    g_xy_of_y: &Array3<T>,
) -> Result<T> {
    Ok(mae(g_yx_of_x, x)? + mae(g_xy_of_y, y)?)
}

/// `|G_XY(x) - y|` + `|G_YX(y) - x|` for an aligned pair.
pub fn paired_l1_loss<T: Scalar>(
    fake_y: &Array3<T>,
    y: &Array3<T>,
    fake_x: &Array3<T>,
    x: &Array3<T>,
    is_paired: bool,
) -> Result<T> {
    if !is_paired {
        return Err(Error::Contract(
            "paired reconstruction loss requires a paired batch".into(),
        ));
    }
    Ok(mae(fake_y, y)? + mae(fake_x, x)?)
}

/// `λ1·gan + λ2·cycle + λ3·identity (+ λ4·l1 on paired batches)`.
pub fn total_generator_loss(components: &LossReport, weights: &LossWeights, is_paired: bool) -> Result<f64> {
    weights.validate()?;
    let mut total = weights.lambda1 * components.gan_g
        + weights.lambda2 * components.cycle
        + weights.lambda3 * components.identity;
    if is_paired {
        total += weights.lambda4 * components.l1_paired;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;

    fn arr(v: &[f64]) -> Array3<f64> {
        Array::from_shape_vec((1, 1, v.len()), v.to_vec()).unwrap()
    }

    #[test]
    fn relativistic_equilibrium_is_ln2() {
        let a = arr(&[-3.0, 0.0, 2.5, 100.0]);
        let d = relativistic_d_loss(&a, &a).unwrap();
        let g = relativistic_g_loss(&a, &a).unwrap();
        assert!((d - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((g - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn relativistic_reference_values() {
        // -ln σ(1) and -ln σ(2), evaluated directly.
        let d = relativistic_d_loss(&arr(&[1.0, 1.0]), &arr(&[0.0, 0.0])).unwrap();
        assert!((d - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-15);
        assert!((d - 0.313262).abs() < 1e-6);
        let g = relativistic_g_loss(&arr(&[0.0]), &arr(&[2.0])).unwrap();
        assert!((g - 0.126928).abs() < 1e-6);
    }

    #[test]
    fn relativistic_asymptote_and_stability() {
        let d = relativistic_d_loss(&arr(&[800.0]), &arr(&[-800.0])).unwrap();
        assert!(d >= 0.0 && d < 1e-300);
        let d = relativistic_d_loss(&arr(&[-800.0]), &arr(&[800.0])).unwrap();
        assert!((d - 1600.0).abs() < 1e-9);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let e = relativistic_d_loss(&arr(&[1.0]), &arr(&[1.0, 2.0]));
        assert!(matches!(e, Err(Error::InvalidInput(_))));
        assert!(cycle_loss(&arr(&[1.0]), &arr(&[1.0, 2.0]), &arr(&[1.0]), &arr(&[1.0])).is_err());
    }

    #[test]
    fn l1_family() {
        let z = arr(&[0.0, 0.0]);
        assert_eq!(cycle_loss(&z, &arr(&[1.0, -1.0]), &z, &z).unwrap(), 1.0);
        assert_eq!(cycle_loss(&z, &z, &z, &z).unwrap(), 0.0);
        let x = arr(&[0.3, -0.2, 0.9]);
        let shifted = x.mapv(|v| v + 0.25);
        assert!((identity_loss(&x, &shifted, &x, &x).unwrap() - 0.25).abs() < 1e-15);
        let y = arr(&[0.1, 0.1, 0.1]);
        let fy = y.mapv(|v| v + 0.5);
        assert!((paired_l1_loss(&fy, &y, &x, &x, true).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(paired_l1_loss(&fy, &y, &x, &x, false), Err(Error::Contract(_))));
    }

    #[test]
    fn total_loss_weighting() {
        let c = LossReport {
            gan_g: 1.0,
            cycle: 1.0,
            identity: 1.0,
            l1_paired: 1.0,
            ..Default::default()
        };
        let w = LossWeights::default();
        assert_eq!(total_generator_loss(&c, &w, true).unwrap(), 171.0);
        assert_eq!(total_generator_loss(&c, &w, false).unwrap(), 21.0);
        assert_eq!(total_generator_loss(&LossReport::default(), &w, true).unwrap(), 0.0);
        let bad = LossWeights { lambda2: -1.0, ..w };
        assert!(matches!(total_generator_loss(&c, &bad, true), Err(Error::Config(_))));
    }
}
