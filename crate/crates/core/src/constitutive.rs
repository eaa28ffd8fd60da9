//! Co-albedo graphs, emission laws and the insolation/forcing data.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::legendre::{basis_eval, LegendreBasis};

/// Ice-formation temperature in degrees Celsius.
pub const ICE_THRESHOLD: f64 = -10.0;

fn default_threshold() -> f64 {
    ICE_THRESHOLD
}

/// Co-albedo as a function of temperature.
///
/// `Sellers` is a continuous ramp of half-width `half_width` around the
/// threshold. `Budyko` is the maximal monotone jump graph, multivalued at the
/// threshold, and is only ever evaluated through its Yosida approximation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoalbedoGraph {
    Sellers {
        ice: f64,
        ice_free: f64,
        #[serde(default = "default_threshold")]
        threshold: f64,
        half_width: f64,
    },
    Budyko {
        ice: f64,
        ice_free: f64,
        #[serde(default = "default_threshold")]
        threshold: f64,
    },
}

impl CoalbedoGraph {
    pub fn sellers(ice: f64, ice_free: f64, half_width: f64) -> Result<Self> {
        let graph = Self::Sellers {
            ice,
            ice_free,
            threshold: ICE_THRESHOLD,
            half_width,
        };
        graph.validate()?;
        Ok(graph)
    }

    pub fn budyko(ice: f64, ice_free: f64) -> Result<Self> {
        let graph = Self::Budyko {
            ice,
            ice_free,
            threshold: ICE_THRESHOLD,
        };
        graph.validate()?;
        Ok(graph)
    }

    pub fn validate(&self) -> Result<()> {
        let (m, big_m) = self.bounds();
        if !(0.0 < m && m < big_m && big_m < 1.0) {
            return Err(invalid("coalbedo", format!("need 0 < m < M < 1, got m={m}, M={big_m}")));
        }
        if let Self::Sellers { half_width, .. } = self {
            if !(*half_width > 0.0) {
                return Err(invalid("half_width", "must be positive"));
            }
        }
        Ok(())
    }

    /// `(m, M)`: ice and ice-free co-albedo.
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            Self::Sellers { ice, ice_free, .. } | Self::Budyko { ice, ice_free, .. } => {
                (ice, ice_free)
            }
        }
    }

    pub fn threshold(&self) -> f64 {
        match *self {
            Self::Sellers { threshold, .. } | Self::Budyko { threshold, .. } => threshold,
        }
    }

    pub fn is_budyko(&self) -> bool {
        matches!(self, Self::Budyko { .. })
    }

    /// Sellers co-albedo.
    pub fn beta_eval(&self, u: f64) -> Result<f64> {
        match self {
            Self::Sellers { .. } => Ok(self.single_valued(None)?.value(u)),
            Self::Budyko { .. } => Err(Error::WrongVariant { expected: "sellers" }),
        }
    }

    /// Yosida approximation `(I - (I + lambda beta)^{-1}) / lambda` of the
    /// Budyko graph, in closed form.
    pub fn yosida_eval(&self, lambda: f64, r: f64) -> Result<f64> {
        match self {
            Self::Budyko { .. } => Ok(self.single_valued(Some(lambda))?.value(r)),
            Self::Sellers { .. } => Err(Error::WrongVariant { expected: "budyko" }),
        }
    }

    /// The single-valued Lipschitz co-albedo used for dynamics: the Sellers
    /// ramp itself, or the Yosida ramp of the Budyko graph (which needs
    /// `lambda`).
    pub fn single_valued(&self, lambda: Option<f64>) -> Result<CoalbedoRamp> {
        match *self {
            Self::Sellers {
                ice,
                ice_free,
                threshold,
                half_width,
            } => Ok(CoalbedoRamp {
                low: ice,
                high: ice_free,
                start: threshold - half_width,
                end: threshold + half_width,
                anchor: threshold,
            }),
            Self::Budyko {
                ice,
                ice_free,
                threshold,
            } => {
                let lambda = lambda.ok_or(Error::WrongVariant {
                    expected: "sellers (Budyko needs a Yosida parameter)",
                })?;
                if !(lambda > 0.0) {
                    return Err(Error::NonpositiveLambda(lambda));
                }
                Ok(CoalbedoRamp {
                    low: ice,
                    high: ice_free,
                    start: threshold + lambda * ice,
                    end: threshold + lambda * ice_free,
                    anchor: threshold,
                })
            }
        }
    }

    /// Primitive `j` of the single-valued branch with `j(threshold) = 0`.
    pub fn j_primitive(&self, lambda: Option<f64>, r: f64) -> Result<f64> {
        Ok(self.single_valued(lambda)?.primitive(r))
    }

    /// Selection of the graph used for residual reporting. At the Budyko
    /// jump the midpoint `(m + M) / 2` is taken.
    pub fn section(&self, u: f64) -> f64 {
        match self {
            Self::Sellers { .. } => self.single_valued(None).map(|r| r.value(u)).unwrap_or(f64::NAN),
            Self::Budyko {
                ice,
                ice_free,
                threshold,
            } => {
                if u < *threshold {
                    *ice
                } else if u > *threshold {
                    *ice_free
                } else {
                    0.5 * (ice + ice_free)
                }
            }
        }
    }
}

/// Nondecreasing piecewise-linear co-albedo: `low` up to `start`, `high`
/// from `end`, linear in between. Both the Sellers ramp and the Yosida
/// approximation of the Budyko jump have this shape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoalbedoRamp {
    pub low: f64,
    pub high: f64,
    pub start: f64,
    pub end: f64,
    /// Point where the primitive vanishes.
    pub anchor: f64,
}

impl CoalbedoRamp {
    pub fn value(&self, r: f64) -> f64 {
        if r <= self.start {
            self.low
        } else if r >= self.end {
            self.high
        } else {
            self.low + self.lipschitz() * (r - self.start)
        }
    }

    /// Slope of the ramp, which is the Lipschitz constant.
    pub fn lipschitz(&self) -> f64 {
        (self.high - self.low) / (self.end - self.start)
    }

    /// Derivative, taking the ramp slope on the closed interval.
    pub fn derivative(&self, r: f64) -> f64 {
        if r < self.start || r > self.end {
            0.0
        } else {
            self.lipschitz()
        }
    }

    fn raw_primitive(&self, r: f64) -> f64 {
        let width = self.end - self.start;
        if r <= self.start {
            self.low * (r - self.start)
        } else if r <= self.end {
            let s = r - self.start;
            self.low * s + 0.5 * self.lipschitz() * s * s
        } else {
            self.low * width + 0.5 * (self.high - self.low) * width + self.high * (r - self.end)
        }
    }

    /// `int_anchor^r value(s) ds`.
    pub fn primitive(&self, r: f64) -> f64 {
        self.raw_primitive(r) - self.raw_primitive(self.anchor)
    }
}

/// Emitted energy `g`, continuous and strictly increasing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmissionLaw {
    /// `g(r) = slope * r`.
    Linear { slope: f64 },
    /// Linearized Stefan-Boltzmann law `g(r) = offset + slope * r`.
    StefanLinearized { slope: f64, offset: f64 },
}

impl Default for EmissionLaw {
    fn default() -> Self {
        Self::Linear { slope: 1.0 }
    }
}

impl EmissionLaw {
    pub fn linear(slope: f64) -> Result<Self> {
        let law = Self::Linear { slope };
        law.validate()?;
        Ok(law)
    }

    pub fn validate(&self) -> Result<()> {
        let slope = self.slope();
        if !(slope > 0.0) || !slope.is_finite() {
            return Err(Error::NonMonotoneLaw(slope));
        }
        Ok(())
    }

    pub fn slope(&self) -> f64 {
        match *self {
            Self::Linear { slope } | Self::StefanLinearized { slope, .. } => slope,
        }
    }

    fn offset(&self) -> f64 {
        match *self {
            Self::Linear { .. } => 0.0,
            Self::StefanLinearized { offset, .. } => offset,
        }
    }

    pub fn eval(&self, r: f64) -> f64 {
        self.offset() + self.slope() * r
    }

    /// Primitive with `G(0) = 0`.
    pub fn primitive(&self, r: f64) -> f64 {
        self.offset() * r + 0.5 * self.slope() * r * r
    }

    pub fn inverse(&self, v: f64) -> f64 {
        (v - self.offset()) / self.slope()
    }
}

/// A spatial profile on (-1, 1): a constant or Legendre coefficients in the
/// orthonormal basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpatialProfile {
    Constant(f64),
    Legendre { coefficients: Vec<f64> },
}

impl Default for SpatialProfile {
    fn default() -> Self {
        Self::Constant(0.0)
    }
}

impl SpatialProfile {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Self::Constant(v) => *v,
            Self::Legendre { coefficients } => coefficients
                .iter()
                .enumerate()
                .map(|(n, c)| c * basis_eval(n, x))
                .sum(),
        }
    }

    /// Values at the quadrature nodes of `basis`.
    pub fn nodal(&self, basis: &LegendreBasis) -> Vec<f64> {
        basis.nodes().iter().map(|&x| self.eval(x)).collect()
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self {
            Self::Constant(v) => Some(*v),
            Self::Legendre { .. } => None,
        }
    }
}

/// Forcing term `f_inf + transient * exp(-decay_rate t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transient {
    pub profile: SpatialProfile,
    pub decay_rate: f64,
}

/// Insolation `S(x)` and forcing `f(x, t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcingData {
    pub insolation: SpatialProfile,
    /// Asymptotic forcing `f_inf`.
    #[serde(rename = "f_inf")]
    pub forcing: SpatialProfile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transient: Option<Transient>,
}

impl ForcingData {
    pub fn constant(insolation: f64, forcing: f64) -> Self {
        Self {
            insolation: SpatialProfile::Constant(insolation),
            forcing: SpatialProfile::Constant(forcing),
            transient: None,
        }
    }

    pub fn validate(&self, basis: &LegendreBasis) -> Result<()> {
        let bounds = self.bounds(basis);
        if !(bounds.s_min > 0.0) {
            return Err(invalid("insolation", "must be positive at every node"));
        }
        if let Some(t) = &self.transient {
            if !(t.decay_rate >= 0.0) {
                return Err(invalid("decay_rate", "must be nonnegative"));
            }
        }
        Ok(())
    }

    /// Nodal `f(t)`.
    pub fn forcing_at(&self, basis: &LegendreBasis, t: f64) -> Vec<f64> {
        let mut f = self.forcing.nodal(basis);
        if let Some(tr) = &self.transient {
            let decay = (-tr.decay_rate * t).exp();
            for (fj, pj) in f.iter_mut().zip(tr.profile.nodal(basis)) {
                *fj += decay * pj;
            }
        }
        f
    }

    /// Nodal bounds `S_0, S_1`, `||f_inf||_inf` and `C_f = -max f_inf`.
    pub fn bounds(&self, basis: &LegendreBasis) -> ForcingBounds {
        let s = self.insolation.nodal(basis);
        let f = self.forcing.nodal(basis);
        ForcingBounds {
            s_min: s.iter().copied().fold(f64::INFINITY, f64::min),
            s_max: s.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            f_sup_norm: f.iter().map(|v| v.abs()).fold(0.0, f64::max),
            c_f: -f.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// Constant `(S, f_inf)` when neither depends on `x` and there is no
    /// transient.
    pub fn constant_values(&self) -> Option<(f64, f64)> {
        if self.transient.is_some() {
            return None;
        }
        Some((self.insolation.as_constant()?, self.forcing.as_constant()?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ForcingBounds {
    pub s_min: f64,
    pub s_max: f64,
    pub f_sup_norm: f64,
    pub c_f: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sellers() -> CoalbedoGraph {
        CoalbedoGraph::sellers(0.2, 0.8, 1.0).unwrap()
    }

    fn budyko() -> CoalbedoGraph {
        CoalbedoGraph::budyko(0.2, 0.8).unwrap()
    }

    /// Composite Simpson rule, independent of the closed-form primitive.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut acc = f(a) + f(b);
        for i in 1..n {
            let x = a + i as f64 * h;
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        acc * h / 3.0
    }

    #[test]
    fn sellers_examples() {
        let g = sellers();
        assert_eq!(g.beta_eval(-20.0).unwrap(), 0.2);
        assert_eq!(g.beta_eval(0.0).unwrap(), 0.8);
        assert!((g.beta_eval(-10.0).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(
            budyko().beta_eval(0.0).unwrap_err(),
            Error::WrongVariant { expected: "sellers" }
        );
        let ramp = g.single_valued(None).unwrap();
        assert!((ramp.lipschitz() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn invalid_graphs() {
        assert!(CoalbedoGraph::sellers(0.8, 0.2, 1.0).is_err());
        assert!(CoalbedoGraph::sellers(0.2, 1.0, 1.0).is_err());
        assert!(CoalbedoGraph::sellers(0.2, 0.8, 0.0).is_err());
        assert!(CoalbedoGraph::budyko(0.0, 0.5).is_err());
    }

    #[test]
    fn yosida_examples() {
        let g = budyko();
        assert_eq!(g.yosida_eval(0.1, -10.0).unwrap(), 0.2);
        assert!((g.yosida_eval(0.1, -10.0 + 0.08).unwrap() - 0.8).abs() < 1e-12);
        for lambda in [1.0, 0.1, 1e-4] {
            assert_eq!(g.yosida_eval(lambda, 50.0).unwrap(), 0.8);
        }
        assert_eq!(g.yosida_eval(0.0, 1.0).unwrap_err(), Error::NonpositiveLambda(0.0));
        assert_eq!(g.yosida_eval(-1.0, 1.0).unwrap_err(), Error::NonpositiveLambda(-1.0));
        assert!(sellers().yosida_eval(0.1, 0.0).is_err());
    }

    #[test]
    fn yosida_solves_resolvent() {
        // beta_lambda(r) = (r - s) / lambda with s = (I + lambda beta)^{-1} r,
        // i.e. r - lambda * beta_lambda(r) must be a point of the graph's
        // domain consistent with the selected value.
        let g = budyko();
        let lambda = 0.3;
        for i in 0..200 {
            let r = -12.0 + 0.02 * i as f64;
            let b = g.yosida_eval(lambda, r).unwrap();
            let s = r - lambda * b;
            if s < -10.0 - 1e-12 {
                assert!((b - 0.2).abs() < 1e-12);
            } else if s > -10.0 + 1e-12 {
                assert!((b - 0.8).abs() < 1e-12);
            } else {
                assert!((0.2 - 1e-12..=0.8 + 1e-12).contains(&b));
            }
        }
    }

    #[test]
    fn yosida_converges_pointwise() {
        let g = budyko();
        for lambda in [1e-1, 1e-2, 1e-3] {
            for r in [-10.5, -9.5] {
                let dev = (g.yosida_eval(lambda, r).unwrap() - g.section(r)).abs();
                assert!(dev <= lambda * 0.8, "lambda={lambda} r={r} dev={dev}");
            }
        }
        assert_eq!(g.section(-10.0), 0.5);
    }

    #[test]
    fn sellers_agrees_with_budyko_off_ramp() {
        let s = sellers();
        let b = budyko();
        for r in [-30.0, -11.01, -10.99 - 0.5, -8.99, 0.0, 15.0] {
            assert_eq!(s.beta_eval(r).unwrap(), b.section(r));
        }
    }

    #[test]
    fn emission_examples() {
        let id = EmissionLaw::linear(1.0).unwrap();
        assert_eq!(id.eval(-11.0), -11.0);
        assert_eq!(EmissionLaw::linear(2.0).unwrap().inverse(-6.0), -3.0);
        assert_eq!(id.primitive(3.0), 4.5);
        assert_eq!(EmissionLaw::linear(0.0).unwrap_err(), Error::NonMonotoneLaw(0.0));
        assert!(EmissionLaw::StefanLinearized { slope: -1.0, offset: 200.0 }
            .validate()
            .is_err());
    }

    #[test]
    fn j_primitive_examples() {
        let g = sellers();
        let beta = |r: f64| g.beta_eval(r).unwrap();
        assert_eq!(g.j_primitive(None, -10.0).unwrap(), 0.0);
        // Simpson is exact on each linear piece; the kinks at -11 and -9
        // fall on grid points for these subdivisions.
        let oracle_up = simpson(beta, -10.0, -8.0, 2000);
        let oracle_down = -simpson(beta, -15.0, -10.0, 5000);
        assert!((oracle_up - 1.45).abs() < 1e-12);
        assert!((oracle_down + 1.15).abs() < 1e-12);
        assert!((g.j_primitive(None, -8.0).unwrap() - oracle_up).abs() < 1e-12);
        assert!((g.j_primitive(None, -15.0).unwrap() - oracle_down).abs() < 1e-12);
        assert!(budyko().j_primitive(None, 0.0).is_err());
    }

    #[test]
    fn forcing_bounds() {
        let basis = LegendreBasis::new(4, 8).unwrap();
        let data = ForcingData::constant(1.0, -12.0);
        let b = data.bounds(&basis);
        assert_eq!((b.s_min, b.s_max, b.f_sup_norm, b.c_f), (1.0, 1.0, 12.0, 12.0));
        assert_eq!(data.constant_values(), Some((1.0, -12.0)));
        assert!(ForcingData::constant(0.0, -12.0).validate(&basis).is_err());

        let data = ForcingData {
            insolation: SpatialProfile::Legendre {
                coefficients: vec![2f64.sqrt(), 0.0, -0.1],
            },
            forcing: SpatialProfile::Constant(-12.0),
            transient: Some(Transient {
                profile: SpatialProfile::Constant(2.0),
                decay_rate: 1.0,
            }),
        };
        assert!(data.validate(&basis).is_ok());
        let f0 = data.forcing_at(&basis, 0.0);
        assert!(f0.iter().all(|v| (v + 10.0).abs() < 1e-14));
        assert!(data.constant_values().is_none());
    }

    proptest! {
        #[test]
        fn yosida_bounded_monotone_lipschitz(
            lambda in 1e-4f64..2.0,
            r1 in -30.0f64..10.0,
            r2 in -30.0f64..10.0,
        ) {
            let g = budyko();
            let b1 = g.yosida_eval(lambda, r1).unwrap();
            let b2 = g.yosida_eval(lambda, r2).unwrap();
            prop_assert!((0.2..=0.8).contains(&b1));
            if r1 <= r2 {
                prop_assert!(b1 <= b2);
            }
            prop_assert!((b1 - b2).abs() <= (r1 - r2).abs() / lambda + 1e-12);
        }

        #[test]
        fn g_primitive_differentiates_back(r in -50.0f64..50.0, slope in 0.1f64..5.0, offset in -300.0f64..300.0) {
            let law = EmissionLaw::StefanLinearized { slope, offset };
            let h = 1e-4;
            let fd = (law.primitive(r + h) - law.primitive(r - h)) / (2.0 * h);
            prop_assert!((fd - law.eval(r)).abs() < 1e-6 * (1.0 + law.eval(r).abs()));
            prop_assert!((law.inverse(law.eval(r)) - r).abs() < 1e-12 * (1.0 + r.abs()));
        }

        #[test]
        fn j_is_primitive_of_ramp(r in -20.0f64..0.0, lambda in 1e-3f64..1.0) {
            for ramp in [sellers().single_valued(None).unwrap(), budyko().single_valued(Some(lambda)).unwrap()] {
                let h = 1e-6;
                let fd = (ramp.primitive(r + h) - ramp.primitive(r - h)) / (2.0 * h);
                // The kinks only spoil the difference quotient within h.
                if (r - ramp.start).abs() > h && (r - ramp.end).abs() > h {
                    prop_assert!((fd - ramp.value(r)).abs() < 1e-6);
                }
            }
        }
    }
}
