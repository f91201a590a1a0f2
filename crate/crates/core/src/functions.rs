//! Loss and regularizer descriptors.
//!
//! Each kind exposes its value, gradient (where it exists), a canonical
//! subgradient and a closed-form proximal operator. Nothing here evaluates a
//! convex conjugate.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, ArrayView1, Zip};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FunctionSpec<T> {
    /// `e ↦ ‖e‖²`
    SquaredL2Loss,
    /// `e ↦ ‖e‖₁`
    AbsL1Loss,
    /// `x ↦ η‖x‖²`
    SquaredL2Reg { eta: T },
    /// `x ↦ η‖x‖₁`
    L1Reg { eta: T },
    /// `x ↦ η₁‖x‖₁ + η₂‖x‖²`
    ElasticNet { eta1: T, eta2: T },
}

/// Soft-thresholding, the proximal map of `t·|·|`.
pub fn soft_threshold<T: Real>(x: T, t: T) -> T {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        T::zero()
    }
}

impl<T: Real> FunctionSpec<T> {
    pub fn squared_l2_reg(eta: T) -> Result<Self> {
        check_weight("eta", eta)?;
        Ok(Self::SquaredL2Reg { eta })
    }

    pub fn l1_reg(eta: T) -> Result<Self> {
        check_weight("eta", eta)?;
        Ok(Self::L1Reg { eta })
    }

    pub fn elastic_net(eta1: T, eta2: T) -> Result<Self> {
        check_weight("eta1", eta1)?;
        check_weight("eta2", eta2)?;
        Ok(Self::ElasticNet { eta1, eta2 })
    }

    /// Whether the function is differentiable everywhere.
    pub fn is_smooth(&self) -> bool {
        match *self {
            Self::SquaredL2Loss | Self::SquaredL2Reg { .. } => true,
            Self::L1Reg { eta } => eta == T::zero(),
            Self::ElasticNet { eta1, .. } => eta1 == T::zero(),
            Self::AbsL1Loss => false,
        }
    }

    pub fn is_loss(&self) -> bool {
        matches!(self, Self::SquaredL2Loss | Self::AbsL1Loss)
    }

    /// Weight on the `|x_j|` term, zero for the purely quadratic kinds.
    fn l1_weight(&self) -> T {
        match *self {
            Self::AbsL1Loss => T::one(),
            Self::L1Reg { eta } => eta,
            Self::ElasticNet { eta1, .. } => eta1,
            Self::SquaredL2Loss | Self::SquaredL2Reg { .. } => T::zero(),
        }
    }

    /// Weight on the `x_j²` term.
    fn quadratic_weight(&self) -> T {
        match *self {
            Self::SquaredL2Loss => T::one(),
            Self::SquaredL2Reg { eta } => eta,
            Self::ElasticNet { eta2, .. } => eta2,
            Self::AbsL1Loss | Self::L1Reg { .. } => T::zero(),
        }
    }

    /// Second derivative of the quadratic part, i.e. the Lipschitz constant of
    /// the gradient of the smooth part.
    pub fn curvature(&self) -> T {
        T::lit(2.0) * self.quadratic_weight()
    }

    pub fn value(&self, v: ArrayView1<T>) -> T {
        let l1 = self.l1_weight();
        let l2 = self.quadratic_weight();
        let mut total = T::zero();
        if l1 != T::zero() {
            total += l1 * v.iter().map(|x| x.abs()).sum::<T>();
        }
        if l2 != T::zero() {
            total += l2 * v.dot(&v);
        }
        total
    }

    pub fn gradient(&self, v: ArrayView1<T>) -> Result<Array1<T>> {
        if self.l1_weight() != T::zero() {
            if let Some(index) = v.iter().position(|x| *x == T::zero()) {
                return Err(Error::NonSmooth {
                    function: self.to_string(),
                    index,
                });
            }
        }
        Ok(self.subgradient(v))
    }

    /// A member of the subdifferential; at a kink the zero element is chosen.
    pub fn subgradient(&self, v: ArrayView1<T>) -> Array1<T> {
        let l1 = self.l1_weight();
        let two_l2 = self.curvature();
        v.mapv(|x| {
            let sign = if x > T::zero() {
                T::one()
            } else if x < T::zero() {
                -T::one()
            } else {
                T::zero()
            };
            l1 * sign + two_l2 * x
        })
    }

    /// `argmin_s { λ·self(s) + ½‖s − q‖² }`.
    pub fn prox(&self, lambda: T, q: ArrayView1<T>) -> Array1<T> {
        let threshold = lambda * self.l1_weight();
        let scale = T::one() / (T::one() + lambda * self.curvature());
        q.mapv(|x| soft_threshold(x, threshold) * scale)
    }

    /// Euclidean distance from `g` to the subdifferential of `self` at `x`.
    pub fn subdiff_distance(&self, x: ArrayView1<T>, g: ArrayView1<T>) -> T {
        let l1 = self.l1_weight();
        let two_l2 = self.curvature();
        let mut acc = T::zero();
        Zip::from(&x).and(&g).for_each(|&xj, &gj| {
            let smooth = gj - two_l2 * xj;
            let d = if xj == T::zero() {
                (smooth.abs() - l1).max(T::zero())
            } else {
                smooth - l1 * xj.signum()
            };
            acc += d * d;
        });
        acc.sqrt()
    }
}

fn check_weight<T: Real>(name: &str, w: T) -> Result<()> {
    if w.is_finite() && w >= T::zero() {
        Ok(())
    } else {
        Err(Error::parse("function spec", None, format!("{name} must be a finite non-negative number, got {w}")))
    }
}

impl<T: Real> fmt::Display for FunctionSpec<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::SquaredL2Loss => write!(f, "squared_l2_loss"),
            Self::AbsL1Loss => write!(f, "abs_l1_loss"),
            Self::SquaredL2Reg { eta } => write!(f, "l2_reg:eta={eta}"),
            Self::L1Reg { eta } => write!(f, "l1_reg:eta={eta}"),
            Self::ElasticNet { eta1, eta2 } => write!(f, "elastic_net:eta1={eta1},eta2={eta2}"),
        }
    }
}

impl<T: Real> FromStr for FunctionSpec<T> {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let err = |msg: String| Error::parse("function spec", None, msg);
        let s = s.trim();
        let (name, params) = match s.split_once(':') {
            Some((name, params)) => (name.trim(), params.trim()),
            None => (s, ""),
        };
        let mut values: Vec<(&str, T)> = Vec::new();
        for item in params.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, found `{item}`")))?;
            let value: T = value
                .trim()
                .parse()
                .map_err(|_| err(format!("`{}` is not a number", value.trim())))?;
            values.push((key.trim(), value));
        }
        let take = |key: &str| -> Result<T> {
            values
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| *v)
                .ok_or_else(|| err(format!("`{name}` requires `{key}`")))
        };
        let expect_keys = |keys: &[&str]| -> Result<()> {
            match values.iter().find(|(k, _)| !keys.contains(k)) {
                Some((k, _)) => Err(err(format!("unknown parameter `{k}` for `{name}`"))),
                None => Ok(()),
            }
        };
        match name {
            "squared_l2_loss" => expect_keys(&[]).map(|_| Self::SquaredL2Loss),
            "abs_l1_loss" => expect_keys(&[]).map(|_| Self::AbsL1Loss),
            "l2_reg" => {
                expect_keys(&["eta"])?;
                Self::squared_l2_reg(take("eta")?)
            }
            "l1_reg" => {
                expect_keys(&["eta"])?;
                Self::l1_reg(take("eta")?)
            }
            "elastic_net" => {
                expect_keys(&["eta1", "eta2"])?;
                Self::elastic_net(take("eta1")?, take("eta2")?)
            }
            other => Err(err(format!("unknown function `{other}`"))),
        }
    }
}
