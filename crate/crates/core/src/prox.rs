//! Proximal-operator catalog for the regularizer `g`, its conjugate
//! `g*` and the conjugate prox `Prox_{tau g*}` used by every dual step.
//!
//! The conjugate prox is always evaluated through the Moreau identity
//! `Prox_{tau g*}(u) = u - tau Prox_{(1/tau) g}(u / tau)`, so there is a
//! single code path whatever the kind; the per-kind closed forms exist
//! only as test oracles.

use thiserror::Error;

use crate::vecmath::{norm2_sq, norm_inf};

/// Domain tolerance for conjugate values: dual iterates can sit on the
/// boundary of `dom(g*)` up to floating-point error.
pub const DEFAULT_DOMAIN_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ProxError {
    #[error("prox step size must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("prox weight must be positive, got {0}")]
    NonPositiveWeight(f64),
    #[error("huber smoothing must be positive, got {0}")]
    NonPositiveSmoothing(f64),
    #[error("dimension must be positive")]
    ZeroDim,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProxKind {
    /// g = 0.
    Zero,
    /// g(y) = weight * ||y||_1.
    L1 { weight: f64 },
    /// g(y) = weight * sum_j h_alpha(y_j), the Moreau-Yosida smoothed
    /// absolute value: h(t) = t^2/(2 alpha) for |t| <= alpha, else |t| - alpha/2.
    Huber { weight: f64, smoothing: f64 },
    /// g(y) = weight * ||y||_2^2.
    SqL2 { weight: f64 },
}

/// Conjugate-side constants of a [`ProxFn`]: the radius of `dom(g*)`
/// (infinity when the domain is all of R^r) and the strong-convexity
/// modulus of `g*` on that domain.
#[derive(Debug, Clone, Copy)]
pub struct ConjugateInfo {
    pub domain_radius: f64,
    pub strong_convexity: f64,
}

/// A convex regularizer with value, scaled prox, conjugate value and
/// conjugate prox. Immutable; all methods are pure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxFn {
    kind: ProxKind,
    dim: usize,
}

impl ProxFn {
    pub fn zero(dim: usize) -> Result<Self, ProxError> {
        Self::new(ProxKind::Zero, dim)
    }

    pub fn l1(weight: f64, dim: usize) -> Result<Self, ProxError> {
        if weight <= 0.0 {
            return Err(ProxError::NonPositiveWeight(weight));
        }
        Self::new(ProxKind::L1 { weight }, dim)
    }

    pub fn huber(weight: f64, smoothing: f64, dim: usize) -> Result<Self, ProxError> {
        if weight <= 0.0 {
            return Err(ProxError::NonPositiveWeight(weight));
        }
        if smoothing <= 0.0 {
            return Err(ProxError::NonPositiveSmoothing(smoothing));
        }
        Self::new(ProxKind::Huber { weight, smoothing }, dim)
    }

    pub fn sq_l2(weight: f64, dim: usize) -> Result<Self, ProxError> {
        if weight <= 0.0 {
            return Err(ProxError::NonPositiveWeight(weight));
        }
        Self::new(ProxKind::SqL2 { weight }, dim)
    }

    fn new(kind: ProxKind, dim: usize) -> Result<Self, ProxError> {
        if dim == 0 {
            return Err(ProxError::ZeroDim);
        }
        Ok(ProxFn { kind, dim })
    }

    pub fn kind(&self) -> ProxKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// g(y). Total: never fails, value(0) = 0 for every kind.
    pub fn value(&self, y: &[f64]) -> f64 {
        assert_eq!(y.len(), self.dim, "prox value: wrong dimension");
        match self.kind {
            ProxKind::Zero => 0.0,
            ProxKind::L1 { weight } => weight * y.iter().map(|t| t.abs()).sum::<f64>(),
            ProxKind::Huber { weight, smoothing } => {
                weight
                    * y.iter()
                        .map(|&t| {
                            if t.abs() <= smoothing {
                                t * t / (2.0 * smoothing)
                            } else {
                                t.abs() - smoothing / 2.0
                            }
                        })
                        .sum::<f64>()
            }
            ProxKind::SqL2 { weight } => weight * norm2_sq(y),
        }
    }

    /// `argmin_x tau g(x) + 1/2 ||x - y||^2`, componentwise closed forms.
    pub fn prox(&self, y: &[f64], tau: f64) -> Result<Vec<f64>, ProxError> {
        assert_eq!(y.len(), self.dim, "prox: wrong dimension");
        if tau <= 0.0 {
            return Err(ProxError::NonPositiveStep(tau));
        }
        Ok(match self.kind {
            ProxKind::Zero => y.to_vec(),
            ProxKind::L1 { weight } => {
                let t = tau * weight;
                y.iter().map(|&v| soft_threshold(v, t)).collect()
            }
            ProxKind::Huber { weight, smoothing } => {
                let t = tau * weight;
                y.iter()
                    .map(|&v| {
                        if v.abs() <= smoothing + t {
                            v * smoothing / (smoothing + t)
                        } else {
                            v - t * v.signum()
                        }
                    })
                    .collect()
            }
            ProxKind::SqL2 { weight } => {
                let c = 1.0 / (1.0 + 2.0 * tau * weight);
                y.iter().map(|&v| c * v).collect()
            }
        })
    }

    /// `Prox_{tau g*}(u)` via the Moreau identity.
    pub fn conj_prox(&self, u: &[f64], tau: f64) -> Result<Vec<f64>, ProxError> {
        if tau <= 0.0 {
            return Err(ProxError::NonPositiveStep(tau));
        }
        let scaled: Vec<f64> = u.iter().map(|&v| v / tau).collect();
        let p = self.prox(&scaled, 1.0 / tau)?;
        Ok(u.iter().zip(&p).map(|(&v, &pv)| v - tau * pv).collect())
    }

    /// `g*(v)`, with a domain tolerance: `+inf` once `v` leaves `dom(g*)`
    /// by more than `tol`.
    pub fn conj_value(&self, v: &[f64], tol: f64) -> f64 {
        assert_eq!(v.len(), self.dim, "conj value: wrong dimension");
        match self.kind {
            ProxKind::Zero => {
                if norm_inf(v) <= tol {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            ProxKind::L1 { weight } => {
                if norm_inf(v) <= weight + tol {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            ProxKind::Huber { weight, smoothing } => {
                if norm_inf(v) <= weight + tol {
                    smoothing / (2.0 * weight) * norm2_sq(v)
                } else {
                    f64::INFINITY
                }
            }
            ProxKind::SqL2 { weight } => norm2_sq(v) / (4.0 * weight),
        }
    }

    pub fn conjugate_info(&self) -> ConjugateInfo {
        match self.kind {
            // dom(g*) = {0}; any strong-convexity modulus holds vacuously.
            ProxKind::Zero => ConjugateInfo { domain_radius: 0.0, strong_convexity: f64::INFINITY },
            ProxKind::L1 { weight } => {
                ConjugateInfo { domain_radius: weight, strong_convexity: 0.0 }
            }
            ProxKind::Huber { weight, smoothing } => {
                ConjugateInfo { domain_radius: weight, strong_convexity: smoothing / weight }
            }
            ProxKind::SqL2 { weight } => ConjugateInfo {
                domain_radius: f64::INFINITY,
                strong_convexity: 1.0 / (2.0 * weight),
            },
        }
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}
