//! Modulation M(x) = E(x) D(x) E(x)⁻¹ that keeps trajectories inside the
//! estimated cuts while preserving convergence to the attractor.

use crate::boundary::BoundaryEstimate;
use crate::lpvds::VelocityField;
use crate::types::{Matrix, Vector};

pub const EPS_SING: f64 = 1e-6;

#[derive(Clone, Copy, Debug)]
pub struct ModulationContext<'a> {
    pub estimate: &'a BoundaryEstimate,
    pub eps_sing: f64,
}

impl<'a> ModulationContext<'a> {
    pub fn new(estimate: &'a BoundaryEstimate) -> Self {
        Self {
            estimate,
            eps_sing: EPS_SING,
        }
    }

    pub fn x_r(&self) -> &Vector {
        self.estimate.x_r()
    }

    /// Modulated velocity. Identity without cuts, at the reference point,
    /// strictly outside the cuts (Γ > 1), and when already moving toward the reference.
    pub fn modulate(&self, x: &Vector, v: &Vector) -> Vector {
        let est = self.estimate;
        let Some(active) = est.active_cut(x) else {
            return v.clone();
        };
        let gamma = est.gamma(x);
        if gamma > 1.0 {
            return v.clone();
        }
        let offset = x - est.x_r();
        let dist = offset.norm();
        if dist == 0.0 {
            return v.clone();
        }
        let r = offset / dist;
        let w = &est.cuts()[active].w;
        if w.dot(&r).abs() < self.eps_sing {
            // E is numerically singular: damp only the outward component
            let out = w.dot(v).max(0.0);
            return v - w * (gamma * out);
        }
        let e = frame(&r, w);
        let coeffs = match e.clone().lu().solve(v) {
            Some(c) => c,
            None => {
                let out = w.dot(v).max(0.0);
                return v - w * (gamma * out);
            }
        };
        if coeffs[0] < 0.0 {
            return v.clone();
        }
        let mut scaled = coeffs;
        scaled[0] *= 1.0 - gamma;
        e * scaled
    }
}

/// Orthonormal basis of the hyperplane orthogonal to `w`, by Gram–Schmidt
/// over the standard axes, skipping the axis most parallel to `w`.
pub fn tangent_basis(w: &Vector) -> Vec<Vector> {
    let n = w.len();
    let skip = w.iamax();
    let mut basis: Vec<Vector> = Vec::with_capacity(n - 1);
    for axis in (0..n).filter(|&i| i != skip) {
        let mut e = Vector::zeros(n);
        e[axis] = 1.0;
        e -= w * w.dot(&e);
        for b in &basis {
            let c = b.dot(&e);
            e -= b * c;
        }
        basis.push(e.normalize());
    }
    basis
}

/// E(x) = [r, e_1 .. e_{n−1}].
fn frame(r: &Vector, w: &Vector) -> Matrix {
    let n = r.len();
    let mut e = Matrix::zeros(n, n);
    e.set_column(0, r);
    for (i, b) in tangent_basis(w).iter().enumerate() {
        e.set_column(i + 1, b);
    }
    e
}

/// A velocity field passed through the modulation of one boundary estimate.
pub struct Modulated<'a> {
    pub field: &'a dyn VelocityField,
    pub ctx: ModulationContext<'a>,
}

impl VelocityField for Modulated<'_> {
    fn velocity(&self, x: &Vector) -> Vector {
        self.ctx.modulate(x, &self.field.velocity(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::{Cut, CutConfig};
    use crate::types::ModeId;

    fn v(a: f64, b: f64) -> Vector {
        Vector::from_vec(vec![a, b])
    }

    fn est() -> BoundaryEstimate {
        let mut e = BoundaryEstimate::new(ModeId::new(0, "a"), v(0.0, 0.0), CutConfig::default());
        e.push_cut(Cut { w: v(1.0, 0.0), p: v(1.0, 0.0) }).unwrap();
        e
    }

    #[test]
    fn hand_evaluated_examples() {
        let e = est();
        let ctx = ModulationContext::new(&e);
        assert_eq!(ctx.modulate(&v(0.5, 0.0), &v(1.0, 0.0)), v(0.5, 0.0));
        assert_eq!(ctx.modulate(&v(0.5, 0.0), &v(0.0, 1.0)), v(0.0, 1.0));
        assert_eq!(ctx.modulate(&v(1.0, 0.0), &v(1.0, 0.0)), v(0.0, 0.0));
        let near = ctx.modulate(&v(1.0 - 1e-12, 0.0), &v(1.0, 0.0));
        assert!(near[0].abs() < 1e-11);
    }

    #[test]
    fn identity_outside_and_at_reference() {
        let e = est();
        let ctx = ModulationContext::new(&e);
        let vin = v(0.3, -0.7);
        assert_eq!(ctx.modulate(&v(1.5, 0.2), &vin), vin);
        assert_eq!(ctx.modulate(&v(0.0, 0.0), &vin), vin);
        // moving toward the reference is left alone
        assert_eq!(ctx.modulate(&v(0.5, 0.1), &v(-1.0, 0.0)), v(-1.0, 0.0));
    }

    #[test]
    fn tangent_basis_is_orthonormal() {
        let w = Vector::from_vec(vec![0.3, -0.5, 0.81]).normalize();
        let b = tangent_basis(&w);
        assert_eq!(b.len(), 2);
        for (i, x) in b.iter().enumerate() {
            assert!((x.norm() - 1.0).abs() < 1e-12);
            assert!(x.dot(&w).abs() < 1e-12);
            for y in &b[i + 1..] {
                assert!(x.dot(y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn singular_frame_falls_back_to_normal_damping() {
        let e = est();
        let ctx = ModulationContext::new(&e);
        // r ⟂ w at x = (0, 0.5): Γ = 0 so nothing is damped
        assert_eq!(ctx.modulate(&v(0.0, 0.5), &v(1.0, 1.0)), v(1.0, 1.0));
    }
}
