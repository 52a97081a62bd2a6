//! Physical flux models and the Lax-Friedrichs interface flux.

use std::fmt;
use std::sync::Arc;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Scalar flux `F(u)` together with its first two derivatives. The second
/// derivative is only needed to differentiate the local Lax-Friedrichs
/// dissipation coefficient.
#[derive(Clone)]
pub struct FluxModel {
    pub name: String,
    f: ScalarFn,
    dfdu: ScalarFn,
    d2fdu2: ScalarFn,
}

impl fmt::Debug for FluxModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FluxModel").field("name", &self.name).finish()
    }
}

impl FluxModel {
    pub fn new(
        name: impl Into<String>,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        dfdu: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d2fdu2: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            f: Arc::new(f),
            dfdu: Arc::new(dfdu),
            d2fdu2: Arc::new(d2fdu2),
        }
    }

    #[inline]
    pub fn flux(&self, u: f64) -> f64 {
        (self.f)(u)
    }

    /// Characteristic speed `dF/du`.
    #[inline]
    pub fn speed(&self, u: f64) -> f64 {
        (self.dfdu)(u)
    }

    #[inline]
    pub fn speed_derivative(&self, u: f64) -> f64 {
        (self.d2fdu2)(u)
    }
}

/// `F(u) = v u`.
pub fn advection_flux(v: f64) -> FluxModel {
    FluxModel::new(format!("advection(v={v})"), move |u| v * u, move |_| v, |_| 0.0)
}

/// `F(u) = u²/2`, whose divergence is `u u_x`.
pub fn burgers_flux() -> FluxModel {
    FluxModel::new("burgers", |u| 0.5 * u * u, |u| u, |_| 1.0)
}

/// `F ≡ 0`, for problems that are pure source-driven ODEs.
pub fn zero_flux() -> FluxModel {
    FluxModel::new("zero", |_| 0.0, |_| 0.0, |_| 0.0)
}

/// Traces at one element face: `u_minus` from inside the element,
/// `u_plus` from the neighbour (or the boundary ghost), `n` the outward
/// normal (±1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterfaceState {
    pub u_minus: f64,
    pub u_plus: f64,
    pub n: f64,
}

impl InterfaceState {
    pub fn new(u_minus: f64, u_plus: f64, n: f64) -> Self {
        debug_assert!(n == 1.0 || n == -1.0, "normal must be ±1");
        Self { u_minus, u_plus, n }
    }
}

/// Dissipation coefficient choice for the Lax-Friedrichs flux.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum LaxFriedrichs {
    /// `C = max(|F'(u⁻)|, |F'(u⁺)|)` (Rusanov).
    #[default]
    Local,
    /// Fixed `C`, typically a bound on `|F'|` over the whole solution.
    Global { c: f64 },
}

/// Normal-contracted numerical flux `(F̂·n)` and its partial derivatives
/// with respect to the interior and exterior traces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluxWithPartials {
    pub value: f64,
    pub d_minus: f64,
    pub d_plus: f64,
}

/// `n (F(u⁻) + F(u⁺))/2 - C/2 (u⁺ - u⁻)` with local `C`.
pub fn lax_friedrichs(model: &FluxModel, s: InterfaceState) -> f64 {
    lax_friedrichs_with(model, s, LaxFriedrichs::Local).value
}

pub fn lax_friedrichs_with(model: &FluxModel, s: InterfaceState, variant: LaxFriedrichs) -> FluxWithPartials {
    let (a, b, n) = (s.u_minus, s.u_plus, s.n);
    let (fa, fb) = (model.flux(a), model.flux(b));
    let (sa, sb) = (model.speed(a), model.speed(b));
    let (c, dc_da, dc_db) = match variant {
        LaxFriedrichs::Local => {
            // ties send the subgradient to the interior trace
            if sa.abs() >= sb.abs() {
                (sa.abs(), sa.signum() * model.speed_derivative(a), 0.0)
            } else {
                (sb.abs(), 0.0, sb.signum() * model.speed_derivative(b))
            }
        }
        LaxFriedrichs::Global { c } => (c, 0.0, 0.0),
    };
    let jump = b - a;
    FluxWithPartials {
        value: n * 0.5 * (fa + fb) - 0.5 * c * jump,
        d_minus: n * 0.5 * sa + 0.5 * c - 0.5 * jump * dc_da,
        d_plus: n * 0.5 * sb - 0.5 * c - 0.5 * jump * dc_db,
    }
}
