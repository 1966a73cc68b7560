use std::fmt::Debug;
use std::ops::{Add, Mul, Sub};

/// A value in log space that the chart recurrences can be run over.
///
/// `Add`/`Sub` are products/quotients of the underlying probabilities. Sums
/// go through the linear-space type [`LogScalar::Lin`], scaled by an explicit
/// shift so that `to_lin(x, s) = exp(x - s)` stays in range.
pub trait LogScalar:
    Copy + Debug + Send + Sync + Add<Output = Self> + Sub<Output = Self> + 'static
{
    type Lin: Copy
        + Debug
        + Send
        + Sync
        + Add<Output = Self::Lin>
        + Mul<Output = Self::Lin>
        + Mul<f64, Output = Self::Lin>;

    fn constant(value: f64) -> Self;
    fn value(self) -> f64;
    fn lin_zero() -> Self::Lin;
    fn to_lin(self, shift: f64) -> Self::Lin;
    fn from_lin(lin: Self::Lin, shift: f64) -> Self;

    fn neg_inf() -> Self {
        Self::constant(f64::NEG_INFINITY)
    }

    /// `log(sum(exp(x)))` over the given values.
    fn log_sum(values: &[Self]) -> Self {
        let max = values
            .iter()
            .fold(f64::NEG_INFINITY, |m, v| m.max(v.value()));
        if max == f64::NEG_INFINITY {
            return Self::neg_inf();
        }
        let lin = values
            .iter()
            .fold(Self::lin_zero(), |acc, v| acc + v.to_lin(max));
        Self::from_lin(lin, max)
    }
}

impl LogScalar for f64 {
    type Lin = f64;

    #[inline]
    fn constant(value: f64) -> Self {
        value
    }

    #[inline]
    fn value(self) -> f64 {
        self
    }

    #[inline]
    fn lin_zero() -> f64 {
        0.0
    }

    #[inline]
    fn to_lin(self, shift: f64) -> f64 {
        (self - shift).exp()
    }

    #[inline]
    fn from_lin(lin: f64, shift: f64) -> f64 {
        if lin > 0.0 {
            lin.ln() + shift
        } else {
            f64::NEG_INFINITY
        }
    }
}

/// Forward-mode dual number in log space: a log value together with its
/// derivative along one fixed direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub value: f64,
    pub tangent: f64,
}

impl Dual {
    pub fn new(value: f64, tangent: f64) -> Self {
        Self { value, tangent }
    }
}

impl Add for Dual {
    type Output = Dual;
    #[inline]
    fn add(self, rhs: Dual) -> Dual {
        Dual::new(self.value + rhs.value, self.tangent + rhs.tangent)
    }
}

impl Sub for Dual {
    type Output = Dual;
    #[inline]
    fn sub(self, rhs: Dual) -> Dual {
        Dual::new(self.value - rhs.value, self.tangent - rhs.tangent)
    }
}

/// Linear-space companion of [`Dual`]: `p = exp(v - shift)`, `dp = p * dv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualLin {
    pub p: f64,
    pub dp: f64,
}

impl Add for DualLin {
    type Output = DualLin;
    #[inline]
    fn add(self, rhs: DualLin) -> DualLin {
        DualLin {
            p: self.p + rhs.p,
            dp: self.dp + rhs.dp,
        }
    }
}

impl Mul for DualLin {
    type Output = DualLin;
    #[inline]
    fn mul(self, rhs: DualLin) -> DualLin {
        DualLin {
            p: self.p * rhs.p,
            dp: self.p * rhs.dp + self.dp * rhs.p,
        }
    }
}

impl Mul<f64> for DualLin {
    type Output = DualLin;
    #[inline]
    fn mul(self, rhs: f64) -> DualLin {
        DualLin {
            p: self.p * rhs,
            dp: self.dp * rhs,
        }
    }
}

impl LogScalar for Dual {
    type Lin = DualLin;

    #[inline]
    fn constant(value: f64) -> Self {
        Dual::new(value, 0.0)
    }

    #[inline]
    fn value(self) -> f64 {
        self.value
    }

    #[inline]
    fn lin_zero() -> DualLin {
        DualLin { p: 0.0, dp: 0.0 }
    }

    #[inline]
    fn to_lin(self, shift: f64) -> DualLin {
        let p = (self.value - shift).exp();
        DualLin {
            p,
            dp: if p > 0.0 { p * self.tangent } else { 0.0 },
        }
    }

    #[inline]
    fn from_lin(lin: DualLin, shift: f64) -> Dual {
        if lin.p > 0.0 {
            Dual::new(lin.p.ln() + shift, lin.dp / lin.p)
        } else {
            Dual::new(f64::NEG_INFINITY, 0.0)
        }
    }
}

/// Reads the plain value out of a linear-space quantity.
pub trait LinValue {
    fn primal(&self) -> f64;
}

impl LinValue for f64 {
    fn primal(&self) -> f64 {
        *self
    }
}

impl LinValue for DualLin {
    fn primal(&self) -> f64 {
        self.p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dual_log_sum_derivative_matches_softmax() {
        // d/dl log(e^{a + l} + e^b) = softmax weight of a
        let (a, b) = (0.3, -1.2);
        let out = Dual::log_sum(&[Dual::new(a, 1.0), Dual::new(b, 0.0)]);
        let w = a.exp() / (a.exp() + b.exp());
        assert!((out.tangent - w).abs() < 1e-14);
        assert!((out.value - (a.exp() + b.exp()).ln()).abs() < 1e-14);
    }

    #[test]
    fn neg_inf_has_zero_tangent() {
        let z = Dual::from_lin(Dual::lin_zero(), 3.0);
        assert_eq!(z.value, f64::NEG_INFINITY);
        assert_eq!(z.tangent, 0.0);
        assert_eq!(f64::log_sum(&[]), f64::NEG_INFINITY);
    }
}
