//! Set-theoretic model predictive controller.
//!
//! Offline, [`build_family`] computes a terminal robust positively invariant
//! set `T_0` (via [`mrpi`]) and grows the nested one-step controllable family
//! `T_0 ⊆ T_1 ⊆ … ⊆ T_N`, each `T_i` being the states that some admissible
//! input steers into `T_{i-1}` for every modeled disturbance. Online,
//! [`solve_control`] finds the current family index and picks, in closed
//! form, the input that minimizes one of two scalar costs while guaranteeing
//! descent to the next inner set; which cost is active is the covert bit.

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{fmt_f64, Polytope};
use crate::dynamics::UncertainModel;

// rows whose input coefficient is below this do not constrain u
const INPUT_COEFF_EPS: f64 = 1e-12;
// slack for the feasible-interval emptiness guard and the nesting checks
const FEAS_EPS: f64 = 1e-9;
// iteration cap for the invariant-set recursion
const MRPI_ITERATION_CAP: usize = 200;

/// Set-equality tolerance scaled to the coordinate magnitude of the sets
/// involved: outer family shells reach coordinates of 1e7, where vertex
/// arithmetic is only accurate to about `radius * 1e-15`, so an absolute 1e-9
/// would reject bit-identical recomputations.
fn scaled_eps(sets: &[&Polytope]) -> f64 {
    let radius = sets
        .iter()
        .map(|p| p.bounding_radius())
        .fold(0.0f64, f64::max);
    FEAS_EPS * (1.0 + radius)
}

/// Static state-feedback gain for the terminal set, `u = K x`.
#[derive(Clone, Debug)]
pub struct TerminalGain {
    k: DVector<f64>,
}

/// Spectral radius of a 1x1 or 2x2 matrix, in closed form.
fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    match m.nrows() {
        1 => m[(0, 0)].abs(),
        2 => {
            let tr = m[(0, 0)] + m[(1, 1)];
            let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
            let disc = tr * tr - 4.0 * det;
            if disc >= 0.0 {
                let r = disc.sqrt();
                (0.5 * (tr + r)).abs().max((0.5 * (tr - r)).abs())
            } else {
                // complex pair: |lambda|^2 = det
                det.abs().sqrt()
            }
        }
        _ => unreachable!("dimension checked at model construction"),
    }
}

impl TerminalGain {
    /// Accepts the gain only if the closed loop `A + B K` is Schur stable.
    pub fn new(k: DVector<f64>, model: &crate::dynamics::LinearModel) -> Result<Self> {
        if k.len() != model.dim() {
            return Err(Error::Unsupported("gain dimension mismatch".into()));
        }
        if k.iter().any(|v| !v.is_finite()) {
            return Err(Error::Unsupported("non-finite gain entries".into()));
        }
        let gain = TerminalGain { k };
        let rho = spectral_radius(&gain.closed_loop(model));
        if rho >= 1.0 - 1e-9 {
            return Err(Error::Config(format!(
                "terminal gain does not stabilize the model (spectral radius {rho:.6})"
            )));
        }
        Ok(gain)
    }

    pub fn k(&self) -> &DVector<f64> {
        &self.k
    }

    /// Terminal control law `u = K x`.
    pub fn apply(&self, x: &DVector<f64>) -> f64 {
        self.k.dot(x)
    }

    /// Closed-loop matrix `A + B K`.
    pub fn closed_loop(&self, model: &crate::dynamics::LinearModel) -> DMatrix<f64> {
        model.a() + model.b() * self.k.transpose()
    }
}

/// The two scalar stage costs the controller switches between.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum CostId {
    /// `J0 = ||A x + B u||^2`: close the distance to the origin.
    MinDistance,
    /// `J1 = ||u||^2`: spend as little input as possible.
    MinEffort,
}

impl CostId {
    /// Covert-bit convention: bit 0 picks the distance cost, bit 1 the effort
    /// cost.
    pub fn from_bit(bit: u8) -> Self {
        if bit == 0 {
            CostId::MinDistance
        } else {
            CostId::MinEffort
        }
    }
}

/// Nested one-step controllable sets plus everything needed to evaluate the
/// control law. Immutable once built; safe to share across episode threads.
#[derive(Clone, Debug)]
pub struct ControllableFamily {
    sets: Vec<Polytope>,
    eroded: Vec<Polytope>,
    gain: TerminalGain,
    u_max: f64,
    alpha_max: f64,
    model_a: DMatrix<f64>,
    model_b: DVector<f64>,
}

/// Outward-nested approximation of the minimal robust positively invariant
/// set of `x+ = A_K x + d`, `d in D_c`: partial sums of the disturbance
/// series `⊕ A_K^i D_c` are accumulated until the tail's relative size
/// `alpha(s)` drops below `alpha_max`, then the sum is inflated by
/// `1/(1 - alpha(s))`. The result is certified invariant before it is
/// returned.
pub fn mrpi(a_k: &DMatrix<f64>, d_c: &Polytope, alpha_max: f64) -> Result<Polytope> {
    assert!(
        0.0 < alpha_max && alpha_max < 1.0,
        "alpha_max must lie in (0, 1)"
    );
    assert!(
        d_c.contains(&DVector::zeros(d_c.dim()), crate::geometry::DEFAULT_GEOM_EPS),
        "disturbance set must contain the origin"
    );
    let mut partial = d_c.clone();
    let mut a_pow = a_k.clone(); // A_K^s
    let mut alpha = f64::INFINITY;
    for _ in 1..=MRPI_ITERATION_CAP {
        alpha = 0.0f64;
        for (n, &b) in d_c.normals().iter().zip(d_c.offsets()) {
            let dir = a_pow.transpose() * n;
            let s = d_c.support(&dir)?;
            let ratio = if b > 1e-12 {
                s / b
            } else if s <= 1e-12 {
                0.0
            } else {
                f64::INFINITY
            };
            alpha = alpha.max(ratio);
        }
        if alpha <= alpha_max {
            let result = partial.scale(1.0 / (1.0 - alpha));
            let pushed = result.linear_image(a_k)?.minkowski_sum(d_c);
            if !pushed.is_subset(&result, scaled_eps(&[&result])) {
                return Err(Error::InvarianceCheckFailed);
            }
            return Ok(result);
        }
        partial = partial.minkowski_sum(&d_c.linear_image(&a_pow)?);
        a_pow = &a_pow * a_k;
    }
    Err(Error::NonContractive {
        iterations: MRPI_ITERATION_CAP,
        alpha,
    })
}

/// One backward step of the controllable-set recursion. Erodes the target by
/// the modeled disturbance, widens by every input the actuator can add, and
/// pulls the result back through `A`. Exact for any `A` because the input
/// enters additively: `A x ∈ (T ⊖ D_c) ⊕ {-B u}` iff some `u` lands `A x + B
/// u` inside the eroded target.
pub fn one_step_controllable(
    t_prev: &Polytope,
    mc: &UncertainModel,
    u_max: f64,
) -> Result<Polytope> {
    Ok(one_step_with_erosion(t_prev, mc, u_max)?.0)
}

fn one_step_with_erosion(
    t_prev: &Polytope,
    mc: &UncertainModel,
    u_max: f64,
) -> Result<(Polytope, Polytope)> {
    assert!(!t_prev.is_empty(), "target set must be nonempty");
    assert!(u_max > 0.0, "input bound must be positive");
    let eroded = t_prev.pontryagin_diff(mc.disturbance());
    if eroded.is_empty() || eroded.is_degenerate() {
        return Err(Error::ErosionEmpty);
    }
    let b = mc.model().b();
    let ends = [b * u_max, b * (-u_max)];
    let input_segment = Polytope::from_vertices(mc.model().dim(), &ends)?;
    let widened = eroded.minkowski_sum(&input_segment);
    let t_next = widened.linear_preimage(mc.model().a())?;
    Ok((t_next, eroded))
}

/// Build the full nested family `T_0 … T_N` with its eroded companions, then
/// verify nesting, terminal invariance, and input admissibility on `T_0`.
pub fn build_family(
    mc: &UncertainModel,
    gain: TerminalGain,
    u_max: f64,
    n_sets: usize,
    alpha_max: f64,
) -> Result<ControllableFamily> {
    if n_sets < 1 {
        return Err(Error::Config("family size N must be at least 1".into()));
    }
    if !(u_max.is_finite() && u_max > 0.0) {
        return Err(Error::Config("input bound must be positive".into()));
    }
    let a_k = gain.closed_loop(mc.model());
    let t0 = mrpi(&a_k, mc.disturbance(), alpha_max)?;
    // admissibility first: it implies T_0 ⊆ T_1 and hence the whole nesting
    let worst = t0
        .vertices()
        .iter()
        .map(|v| gain.apply(v).abs())
        .fold(0.0f64, f64::max);
    if worst > u_max + FEAS_EPS {
        return Err(Error::Config(format!(
            "terminal law exceeds the input bound on the terminal set ({worst:.4} > {u_max})"
        )));
    }
    let mut sets = Vec::with_capacity(n_sets + 1);
    let mut eroded = Vec::with_capacity(n_sets);
    sets.push(t0);
    for i in 1..=n_sets {
        let (t_next, tilde) = one_step_with_erosion(&sets[i - 1], mc, u_max)?;
        sets.push(t_next);
        eroded.push(tilde);
    }

    for i in 1..=n_sets {
        if !sets[i - 1].is_subset(&sets[i], scaled_eps(&[&sets[i]])) {
            return Err(Error::InternalInconsistency(format!(
                "family nesting failed at index {i}"
            )));
        }
    }
    let pushed = sets[0].linear_image(&a_k)?.minkowski_sum(mc.disturbance());
    if !pushed.is_subset(&sets[0], scaled_eps(&[&sets[0]])) {
        return Err(Error::InvarianceCheckFailed);
    }

    Ok(ControllableFamily {
        sets,
        eroded,
        gain,
        u_max,
        alpha_max,
        model_a: mc.model().a().clone(),
        model_b: mc.model().b().clone(),
    })
}

impl ControllableFamily {
    /// Number of recursion steps `N`; the family holds `N + 1` sets.
    pub fn n_sets(&self) -> usize {
        self.sets.len() - 1
    }

    pub fn set(&self, i: usize) -> &Polytope {
        &self.sets[i]
    }

    /// Eroded target `T̃_i = T_i ⊖ D_c`, defined for `i < N`.
    pub fn eroded(&self, i: usize) -> &Polytope {
        &self.eroded[i]
    }

    pub fn gain(&self) -> &TerminalGain {
        &self.gain
    }

    pub fn u_max(&self) -> f64 {
        self.u_max
    }

    pub fn alpha_max(&self) -> f64 {
        self.alpha_max
    }

    /// Outermost set: the controllable region.
    pub fn region(&self) -> &Polytope {
        &self.sets[self.sets.len() - 1]
    }
}

/// Smallest family index whose set contains `x`; binary search over the
/// verified nesting. States outside the outermost set are infeasible.
pub fn set_index(x: &DVector<f64>, fam: &ControllableFamily, eps: f64) -> Result<usize> {
    let n = fam.n_sets();
    if !fam.set(n).contains(x, eps) {
        return Err(Error::Infeasible);
    }
    let mut lo = 0usize;
    let mut hi = n;
    while lo < hi {
        let mid = (lo + hi) / 2;
        if fam.set(mid).contains(x, eps) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    #[cfg(debug_assertions)]
    {
        let scan = (0..=n).find(|&i| fam.set(i).contains(x, eps));
        debug_assert_eq!(scan, Some(lo), "binary search disagrees with linear scan");
    }
    Ok(lo)
}

/// Feasible input interval at family index `i >= 1`: every halfspace of
/// `T̃_{i-1}` becomes a one-sided bound on `u`, intersected with the
/// saturation interval.
fn feasible_interval(
    x: &DVector<f64>,
    fam: &ControllableFamily,
    index: usize,
) -> Result<(f64, f64)> {
    let tilde = fam.eroded(index - 1);
    let ax = &fam.model_a * x;
    let mut lo = -fam.u_max;
    let mut hi = fam.u_max;
    for (n, &b) in tilde.normals().iter().zip(tilde.offsets()) {
        let c = n.dot(&fam.model_b);
        let rhs = b - n.dot(&ax);
        if c > INPUT_COEFF_EPS {
            hi = hi.min(rhs / c);
        } else if c < -INPUT_COEFF_EPS {
            lo = lo.max(rhs / c);
        } else if rhs < -FEAS_EPS {
            return Err(Error::InternalInconsistency(
                "input-free halfspace unsatisfiable despite set membership".into(),
            ));
        }
    }
    if lo > hi + FEAS_EPS {
        return Err(Error::InternalInconsistency(
            "empty feasible input interval despite set membership".into(),
        ));
    }
    if lo > hi {
        let mid = 0.5 * (lo + hi);
        return Ok((mid, mid));
    }
    Ok((lo, hi))
}

/// Minimizing input for the chosen cost at state `x`: the terminal law inside
/// `T_0`, otherwise the closed-form scalar minimizer clamped to the feasible
/// interval. The returned input always satisfies the saturation bound and
/// steers into the next inner set for every modeled disturbance.
pub fn solve_control(
    x: &DVector<f64>,
    fam: &ControllableFamily,
    cost: CostId,
    eps: f64,
) -> Result<f64> {
    let i = set_index(x, fam, eps)?;
    solve_at_index(x, fam, i, cost)
}

fn solve_at_index(
    x: &DVector<f64>,
    fam: &ControllableFamily,
    index: usize,
    cost: CostId,
) -> Result<f64> {
    if index == 0 {
        let u = fam.gain.apply(x);
        debug_assert!(u.abs() <= fam.u_max + FEAS_EPS);
        return Ok(u);
    }
    let (lo, hi) = feasible_interval(x, fam, index)?;
    let b = &fam.model_b;
    let unconstrained = match cost {
        CostId::MinDistance => {
            let ax = &fam.model_a * x;
            -(b.dot(&ax)) / b.dot(b)
        }
        CostId::MinEffort => 0.0,
    };
    Ok(unconstrained.clamp(lo, hi))
}

/// Feasible input interval `[lo, hi]` at state `x`: every input in it is
/// certified to land in the next inner eroded target for all modeled
/// disturbances. Inside the terminal set the law is pinned to the terminal
/// gain, so the interval degenerates to that single input.
pub fn feasible_input_interval(
    x: &DVector<f64>,
    fam: &ControllableFamily,
    eps: f64,
) -> Result<(f64, f64)> {
    let i = set_index(x, fam, eps)?;
    if i == 0 {
        let u = fam.gain.apply(x);
        return Ok((u, u));
    }
    feasible_interval(x, fam, i)
}

/// Bit-indexed control law: bit 0 minimizes distance, bit 1 minimizes effort.
pub fn phi(x: &DVector<f64>, bit: u8, fam: &ControllableFamily, eps: f64) -> Result<f64> {
    solve_control(x, fam, CostId::from_bit(bit), eps)
}

/// Both candidate inputs for one state with a single index lookup.
pub fn control_pair(x: &DVector<f64>, fam: &ControllableFamily, eps: f64) -> Result<(f64, f64)> {
    let i = set_index(x, fam, eps)?;
    Ok((
        solve_at_index(x, fam, i, CostId::MinDistance)?,
        solve_at_index(x, fam, i, CostId::MinEffort)?,
    ))
}

/// Serialize a family to its cache text: a header, the gain row, every set
/// and its eroded companion in index order, and a trailing checksum line over
/// all preceding bytes. Floats carry 17 significant digits so a reload is
/// bit-exact.
pub fn write_family(fam: &ControllableFamily) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "ctrlfam v1 N={} umax={} alphamax={}\n",
        fam.n_sets(),
        fmt_f64(fam.u_max),
        fmt_f64(fam.alpha_max)
    ));
    out.push('K');
    for v in fam.gain.k().iter() {
        out.push(' ');
        out.push_str(&fmt_f64(*v));
    }
    out.push('\n');
    for i in 0..fam.n_sets() {
        fam.sets[i]
            .write_block(&mut out)
            .expect("family sets are nonempty 2-D polytopes");
        fam.eroded[i]
            .write_block(&mut out)
            .expect("family sets are nonempty 2-D polytopes");
    }
    fam.sets[fam.n_sets()]
        .write_block(&mut out)
        .expect("family sets are nonempty 2-D polytopes");
    let digest = Sha256::digest(out.as_bytes());
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    out.push_str(&format!("sha256 {hex}\n"));
    out
}

/// Parse a family cache written by [`write_family`]. The checksum is
/// verified first; every polytope is re-validated from its stored rows; the
/// eroded sets, nesting, terminal invariance, and input admissibility are all
/// re-checked against the given controller model, so a tampered or
/// inconsistent cache cannot load.
pub fn load_family(text: &str, mc: &UncertainModel) -> Result<ControllableFamily> {
    let sha_pos = text.rfind("sha256 ").ok_or(Error::Parse {
        line: text.lines().count(),
        msg: "missing trailing checksum line".into(),
    })?;
    let payload = &text[..sha_pos];
    let sha_line_no = payload.lines().count() + 1;
    let stored = text[sha_pos..]
        .trim_end()
        .strip_prefix("sha256 ")
        .unwrap_or("");
    let digest = Sha256::digest(payload.as_bytes());
    let computed: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    if stored != computed {
        return Err(Error::Parse {
            line: sha_line_no,
            msg: "checksum mismatch: cache bytes were altered".into(),
        });
    }

    let mut lines = payload.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (lno, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty cache".into(),
    })?;
    let mut n_sets: Option<usize> = None;
    let mut u_max: Option<f64> = None;
    let mut alpha_max: Option<f64> = None;
    let mut fields = header.split_whitespace();
    if fields.next() != Some("ctrlfam") || fields.next() != Some("v1") {
        return Err(Error::Parse {
            line: lno,
            msg: "expected `ctrlfam v1` header".into(),
        });
    }
    for field in fields {
        let bad = || Error::Parse {
            line: lno,
            msg: format!("bad header field `{field}`"),
        };
        let (key, value) = field.split_once('=').ok_or_else(bad)?;
        match key {
            "N" => n_sets = Some(value.parse().map_err(|_| bad())?),
            "umax" => u_max = Some(value.parse().map_err(|_| bad())?),
            "alphamax" => alpha_max = Some(value.parse().map_err(|_| bad())?),
            _ => return Err(bad()),
        }
    }
    let (n_sets, u_max, alpha_max) = match (n_sets, u_max, alpha_max) {
        (Some(n), Some(u), Some(a)) if n >= 1 => (n, u, a),
        _ => {
            return Err(Error::Parse {
                line: lno,
                msg: "header must carry N>=1, umax, alphamax".into(),
            })
        }
    };

    let (lno, krow) = lines.next().ok_or(Error::Parse {
        line: lno,
        msg: "missing gain row".into(),
    })?;
    let mut kparts = krow.split_whitespace();
    if kparts.next() != Some("K") {
        return Err(Error::Parse {
            line: lno,
            msg: "expected gain row `K k1 k2`".into(),
        });
    }
    let kvals: Vec<f64> = kparts
        .map(|p| {
            p.parse().map_err(|_| Error::Parse {
                line: lno,
                msg: format!("invalid gain entry `{p}`"),
            })
        })
        .collect::<Result<_>>()?;
    if kvals.len() != mc.model().dim() {
        return Err(Error::Parse {
            line: lno,
            msg: "gain dimension does not match the model".into(),
        });
    }
    let gain = TerminalGain::new(DVector::from_column_slice(&kvals), mc.model())?;

    let mut sets: Vec<Polytope> = Vec::with_capacity(n_sets + 1);
    let mut eroded: Vec<Polytope> = Vec::with_capacity(n_sets);
    for _ in 0..n_sets {
        sets.push(Polytope::read_block(&mut lines)?);
        eroded.push(Polytope::read_block(&mut lines)?);
    }
    sets.push(Polytope::read_block(&mut lines)?);
    if let Some((lno, stray)) = lines.next() {
        if !stray.trim().is_empty() {
            return Err(Error::Parse {
                line: lno,
                msg: "unexpected content after the last polytope block".into(),
            });
        }
    }

    let fam = ControllableFamily {
        sets,
        eroded,
        gain,
        u_max,
        alpha_max,
        model_a: mc.model().a().clone(),
        model_b: mc.model().b().clone(),
    };
    verify_family(&fam, mc)?;
    Ok(fam)
}

/// Re-check every structural certificate of a family against a model:
/// erosion consistency, nesting, terminal invariance, input admissibility.
pub fn verify_family(fam: &ControllableFamily, mc: &UncertainModel) -> Result<()> {
    let n = fam.n_sets();
    let inconsistent = |msg: String| Err(Error::InternalInconsistency(msg));
    for i in 0..n {
        let recomputed = fam.sets[i].pontryagin_diff(mc.disturbance());
        if !recomputed.same_set(&fam.eroded[i], scaled_eps(&[&fam.sets[i]])) {
            return inconsistent(format!("stored eroded set {i} does not match T_{i} ⊖ D_c"));
        }
    }
    for i in 1..=n {
        if !fam.sets[i - 1].is_subset(&fam.sets[i], scaled_eps(&[&fam.sets[i]])) {
            return inconsistent(format!("nesting fails between sets {} and {}", i - 1, i));
        }
    }
    let a_k = fam.gain.closed_loop(mc.model());
    let pushed = fam.sets[0]
        .linear_image(&a_k)?
        .minkowski_sum(mc.disturbance());
    if !pushed.is_subset(&fam.sets[0], scaled_eps(&[&fam.sets[0]])) {
        return inconsistent("terminal set is not invariant for this model".into());
    }
    let worst = fam.sets[0]
        .vertices()
        .iter()
        .map(|v| fam.gain.apply(v).abs())
        .fold(0.0f64, f64::max);
    if worst > fam.u_max + FEAS_EPS {
        return inconsistent("terminal law violates the input bound".into());
    }
    Ok(())
}
