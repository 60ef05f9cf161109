//! Plant models and one-step reach sets.
//!
//! Three views of the same linear plant live here: the true system that
//! actually moves (disturbance drawn from a box `D`), the controller's
//! uncertain model (disturbance bounded by `D_c ⊇ D`), and the eavesdropper's
//! coarser model (`D_e ⊇ D_c`). A transition `x → x_next` under candidate
//! inputs `u0, u1` is *distinguishing* when both eavesdropper reach sets
//! contain `x_next` but the controller reach sets do not agree on it; the
//! covert channel is built entirely out of that asymmetry.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::geometry::Polytope;

/// Discrete-time linear plant `x(k+1) = A x(k) + B u(k) (+ d)` with a scalar
/// input channel.
#[derive(Clone, Debug)]
pub struct LinearModel {
    a: DMatrix<f64>,
    b: DVector<f64>,
    ts: f64,
}

impl LinearModel {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, ts: f64) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.len() != n {
            return Err(Error::Unsupported(
                "A must be square and B a matching column".into(),
            ));
        }
        if !(n == 1 || n == 2) {
            return Err(Error::Unsupported(format!("state dimension {n}")));
        }
        if a.iter().any(|v| !v.is_finite())
            || b.iter().any(|v| !v.is_finite())
            || !ts.is_finite()
        {
            return Err(Error::Unsupported("non-finite model entries".into()));
        }
        if ts <= 0.0 {
            return Err(Error::Config("sampling period must be positive".into()));
        }
        Ok(LinearModel { a, b, ts })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    /// Sampling period in seconds.
    pub fn ts(&self) -> f64 {
        self.ts
    }

    /// Disturbance-free next state `A x + B u`.
    pub fn nominal(&self, x: &DVector<f64>, u: f64) -> DVector<f64> {
        &self.a * x + &self.b * u
    }
}

/// A plant model together with the disturbance set its owner believes in.
#[derive(Clone, Debug)]
pub struct UncertainModel {
    model: LinearModel,
    disturbance: Polytope,
}

impl UncertainModel {
    /// The disturbance set must contain the origin (an undisturbed step is
    /// always possible in the model).
    pub fn new(model: LinearModel, disturbance: Polytope) -> Result<Self> {
        if disturbance.dim() != model.dim() {
            return Err(Error::Unsupported(
                "disturbance set dimension does not match the model".into(),
            ));
        }
        if !disturbance.contains(&DVector::zeros(model.dim()), crate::geometry::DEFAULT_GEOM_EPS)
        {
            return Err(Error::Config(
                "disturbance set must contain the origin".into(),
            ));
        }
        Ok(UncertainModel { model, disturbance })
    }

    pub fn model(&self) -> &LinearModel {
        &self.model
    }

    pub fn disturbance(&self) -> &Polytope {
        &self.disturbance
    }
}

/// Nominal next state under an uncertain model.
pub fn nominal_next(m: &UncertainModel, x: &DVector<f64>, u: f64) -> DVector<f64> {
    m.model.nominal(x, u)
}

/// One-step reach set: the model's disturbance box translated to the nominal
/// next state.
pub fn reach(m: &UncertainModel, x: &DVector<f64>, u: f64) -> Polytope {
    m.disturbance.translate(&m.model.nominal(x, u))
}

/// Membership of `x_next` in the reach-set difference for the input pair
/// `(u0, u1)`: inside both eavesdropper reach sets, but not inside both
/// controller reach sets. Four halfspace membership tests; the difference set
/// itself is never constructed.
pub fn in_diff(
    x_next: &DVector<f64>,
    x: &DVector<f64>,
    u0: f64,
    u1: f64,
    mc: &UncertainModel,
    me: &UncertainModel,
    eps: f64,
) -> bool {
    let in_e = reach(me, x, u0).contains(x_next, eps) && reach(me, x, u1).contains(x_next, eps);
    if !in_e {
        return false;
    }
    let in_c0 = reach(mc, x, u0).contains(x_next, eps);
    let in_c1 = reach(mc, x, u1).contains(x_next, eps);
    !(in_c0 && in_c1)
}

/// Key-event test shared by every protocol endpoint: the transition is a key
/// event only when `x_next` lies in both eavesdropper reach sets and in
/// exactly one controller reach set, and the returned index names the input
/// whose controller reach set claims it. Transitions that are boundary-
/// ambiguous under the controller model (in both sets, or in neither) are
/// conservatively not events, so both endpoints stay in lockstep.
pub fn key_event(
    x_next: &DVector<f64>,
    x: &DVector<f64>,
    u0: f64,
    u1: f64,
    mc: &UncertainModel,
    me: &UncertainModel,
    eps: f64,
) -> Option<usize> {
    let in_e = reach(me, x, u0).contains(x_next, eps) && reach(me, x, u1).contains(x_next, eps);
    if !in_e {
        return None;
    }
    let in_c0 = reach(mc, x, u0).contains(x_next, eps);
    let in_c1 = reach(mc, x, u1).contains(x_next, eps);
    match (in_c0, in_c1) {
        (true, false) => Some(0),
        (false, true) => Some(1),
        _ => None,
    }
}

/// The plant that actually moves: nominal dynamics plus a uniform draw from
/// the true disturbance box, from the system's own seeded source.
#[derive(Debug)]
pub struct TrueSystem {
    model: LinearModel,
    disturbance_true: Polytope,
    bounds: Vec<(f64, f64)>,
    rng: ChaCha12Rng,
}

impl TrueSystem {
    /// The true disturbance set must be an axis-aligned box (possibly a
    /// single point); sampling other shapes is unsupported.
    pub fn new(model: LinearModel, disturbance_true: Polytope, rng: ChaCha12Rng) -> Result<Self> {
        if disturbance_true.dim() != model.dim() {
            return Err(Error::Unsupported(
                "disturbance set dimension does not match the model".into(),
            ));
        }
        if disturbance_true.is_empty() {
            return Err(Error::EmptySet("true disturbance set"));
        }
        let mut bounds = Vec::with_capacity(model.dim());
        for k in 0..model.dim() {
            let mut e = DVector::zeros(model.dim());
            e[k] = 1.0;
            let hi = disturbance_true.support(&e)?;
            e[k] = -1.0;
            let lo = -disturbance_true.support(&e)?;
            bounds.push((lo, hi));
        }
        let as_box = Polytope::axis_box(&bounds)?;
        if !as_box.same_set(&disturbance_true, 1e-12) {
            return Err(Error::Unsupported(
                "true disturbance set must be an axis-aligned box".into(),
            ));
        }
        Ok(TrueSystem {
            model,
            disturbance_true,
            bounds,
            rng,
        })
    }

    pub fn model(&self) -> &LinearModel {
        &self.model
    }

    pub fn disturbance_true(&self) -> &Polytope {
        &self.disturbance_true
    }

    /// One uniform draw per component, in component order.
    pub fn sample_disturbance(&mut self) -> DVector<f64> {
        let mut d = DVector::zeros(self.model.dim());
        for (k, &(lo, hi)) in self.bounds.iter().enumerate() {
            d[k] = if hi > lo { self.rng.gen_range(lo..=hi) } else { lo };
        }
        d
    }

    /// Advance the plant one step; returns the next state and the disturbance
    /// that was drawn.
    pub fn step_true(&mut self, x: &DVector<f64>, u: f64) -> (DVector<f64>, DVector<f64>) {
        let d = self.sample_disturbance();
        (self.model.nominal(x, u) + &d, d)
    }
}
