//! Run configuration: plain-text parsing, reference defaults, validation.
//!
//! Every tool reads one TOML file. Missing keys fall back to the reference
//! instance (the double-integrator-like plant, 0.1/0.12 disturbance bounds,
//! the stabilizing gain, N = 250, fifty-step episodes), so an empty file is
//! a complete valid configuration. Unknown keys are rejected, syntax and
//! type errors carry the offending line, and semantic rules are checked
//! before any tool runs.

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::controller::{build_family, ControllableFamily, TerminalGain};
use crate::dynamics::{LinearModel, UncertainModel};
use crate::error::{Error, Result};
use crate::geometry::Polytope;
use crate::harness::MessageSpec;

/// Plant matrices and sampling time.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Row-major 2x2 state matrix.
    #[serde(rename = "A")]
    pub a: [f64; 4],
    /// Input column.
    #[serde(rename = "B")]
    pub b: [f64; 2],
    /// Sampling time in seconds.
    #[serde(rename = "Ts")]
    pub ts: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            a: [1.0, 0.0975, 0.0, 0.9512],
            b: [0.0246, 0.4877],
            ts: 0.1,
        }
    }
}

/// Disturbance geometry: what the plant does, what the defenders assume,
/// and how much coarser the eavesdropper's public bound is.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DistSection {
    /// Half-width of the box the true disturbance is drawn from.
    pub true_bound: f64,
    /// Half-width of the defenders' (strictly larger) assumed box.
    pub controller_bound: f64,
    /// Eavesdropper coarseness ratio for single runs; 1 means no advantage.
    pub alpha: f64,
}

impl Default for DistSection {
    fn default() -> Self {
        Self {
            true_bound: 0.1,
            controller_bound: 0.12,
            alpha: 4.0,
        }
    }
}

/// Terminal law and family shape.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerSection {
    /// Terminal feedback row, applied as u = Kx inside the terminal set.
    #[serde(rename = "K")]
    pub k: [f64; 2],
    /// Family depth: N one-step-controllable sets beyond the terminal one.
    #[serde(rename = "N")]
    pub n: usize,
    /// Input saturation bound.
    pub u_max: f64,
    /// Contraction threshold for the terminal invariant-set recursion.
    pub alpha_max: f64,
}

impl Default for ControllerSection {
    fn default() -> Self {
        Self {
            k: [-13.27, -2.26],
            n: 250,
            u_max: 6.0,
            alpha_max: 0.05,
        }
    }
}

/// Episode and sweep sizing.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub steps: usize,
    pub reps: usize,
    pub base_seed: u64,
    /// Literal bit string ("0110…") or `random:<len>` for fresh per-episode
    /// bits.
    pub message: String,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            steps: 50,
            reps: 20,
            base_seed: 0,
            message: "random:64".into(),
        }
    }
}

/// Numeric tolerances.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TolSection {
    /// Geometric slack for membership and inclusion tests.
    pub geom_eps: f64,
}

impl Default for TolSection {
    fn default() -> Self {
        Self { geom_eps: 1e-9 }
    }
}

/// Sweep grid.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// Eavesdropper coarseness levels, low to high.
    pub alphas: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            alphas: vec![1.5, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
        }
    }
}

/// One fully resolved run configuration.
#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelSection,
    pub dist: DistSection,
    pub controller: ControllerSection,
    pub sim: SimSection,
    pub tol: TolSection,
    pub sweep: SweepSection,
}

/// Parse and validate a configuration document. Syntax and type errors
/// report the offending line; semantic violations come back as config
/// errors naming the rule.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| match e.span() {
        Some(span) => Error::Parse {
            line: text[..span.start.min(text.len())].matches('\n').count() + 1,
            msg: e.message().to_string(),
        },
        None => Error::Config(e.to_string()),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Parse a message field: a literal bit string or `random:<len>`.
pub fn parse_message(s: &str) -> Result<MessageSpec> {
    if let Some(len) = s.strip_prefix("random:") {
        let n: usize = len
            .parse()
            .map_err(|_| Error::Config(format!("bad random message length {len:?}")))?;
        Ok(MessageSpec::Random(n))
    } else if s.bytes().all(|b| b == b'0' || b == b'1') {
        Ok(MessageSpec::Fixed(s.bytes().map(|b| b - b'0').collect()))
    } else {
        Err(Error::Config(format!(
            "message must be a bit string or random:<len>, got {s:?}"
        )))
    }
}

fn ensure(cond: bool, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Config(msg.into()))
    }
}

impl RunConfig {
    /// Semantic validation beyond syntax: finiteness, positivity, the
    /// strict disturbance nesting, and grid sanity.
    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        ensure(
            m.a.iter().chain(&m.b).all(|v| v.is_finite()),
            "plant matrices must be finite",
        )?;
        ensure(
            m.ts.is_finite() && m.ts > 0.0,
            "sampling time must be positive",
        )?;

        let d = &self.dist;
        ensure(
            d.true_bound.is_finite() && d.true_bound > 0.0,
            "true disturbance bound must be positive",
        )?;
        ensure(
            d.controller_bound.is_finite() && d.controller_bound > 0.0,
            "controller disturbance bound must be positive",
        )?;
        ensure(
            d.true_bound < d.controller_bound,
            "true disturbance bound must lie strictly below the controller bound",
        )?;
        ensure(
            d.alpha.is_finite() && d.alpha >= 1.0,
            "disturbance ratio alpha must be at least 1",
        )?;

        let c = &self.controller;
        ensure(c.k.iter().all(|v| v.is_finite()), "gain must be finite")?;
        ensure(c.n >= 1, "family depth N must be at least 1")?;
        ensure(
            c.u_max.is_finite() && c.u_max > 0.0,
            "input bound must be positive",
        )?;
        ensure(
            c.alpha_max.is_finite() && c.alpha_max > 0.0 && c.alpha_max < 1.0,
            "contraction threshold must lie in (0, 1)",
        )?;

        ensure(self.sim.steps >= 1, "episodes need at least one step")?;
        ensure(self.sim.reps >= 1, "sweeps need at least one repetition")?;
        parse_message(&self.sim.message)?;

        ensure(
            self.tol.geom_eps.is_finite() && self.tol.geom_eps > 0.0,
            "geometric tolerance must be positive",
        )?;

        ensure(!self.sweep.alphas.is_empty(), "sweep alphas must be nonempty")?;
        for (i, &a) in self.sweep.alphas.iter().enumerate() {
            ensure(
                a.is_finite() && a >= 1.0,
                "sweep alphas must be finite and at least 1",
            )?;
            ensure(
                !self.sweep.alphas[..i].contains(&a),
                "sweep alphas must be distinct",
            )?;
        }
        Ok(())
    }

    pub fn linear_model(&self) -> Result<LinearModel> {
        LinearModel::new(
            DMatrix::from_row_slice(2, 2, &self.model.a),
            DVector::from_column_slice(&self.model.b),
            self.model.ts,
        )
    }

    /// The defenders' uncertain model (fine disturbance box).
    pub fn controller_model(&self) -> Result<UncertainModel> {
        UncertainModel::new(
            self.linear_model()?,
            Polytope::cube(2, self.dist.controller_bound)?,
        )
    }

    /// The eavesdropper's public model at a given coarseness ratio.
    pub fn eavesdropper_model(&self, alpha: f64) -> Result<UncertainModel> {
        UncertainModel::new(
            self.linear_model()?,
            Polytope::cube(2, self.dist.controller_bound)?.scale(alpha),
        )
    }

    /// The box the plant actually draws disturbances from.
    pub fn true_disturbance(&self) -> Result<Polytope> {
        Polytope::cube(2, self.dist.true_bound)
    }

    pub fn terminal_gain(&self) -> Result<TerminalGain> {
        TerminalGain::new(
            DVector::from_column_slice(&self.controller.k),
            &self.linear_model()?,
        )
    }

    /// Build the controllable family this configuration describes.
    pub fn build_family(&self) -> Result<ControllableFamily> {
        build_family(
            &self.controller_model()?,
            self.terminal_gain()?,
            self.controller.u_max,
            self.controller.n,
            self.controller.alpha_max,
        )
    }

    pub fn message_spec(&self) -> Result<MessageSpec> {
        parse_message(&self.sim.message)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_reference_instance() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.model.ts, 0.1);
        assert_eq!(cfg.dist.true_bound, 0.1);
        assert_eq!(cfg.dist.controller_bound, 0.12);
        assert_eq!(cfg.dist.alpha, 4.0);
        assert_eq!(cfg.controller.n, 250);
        assert_eq!(cfg.controller.u_max, 6.0);
        assert_eq!(cfg.sim.steps, 50);
        assert_eq!(cfg.sim.reps, 20);
        assert_eq!(
            cfg.sweep.alphas,
            vec![1.5, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]
        );
        assert_eq!(cfg.message_spec().unwrap(), MessageSpec::Random(64));
    }

    #[test]
    fn every_key_round_trips() {
        let text = r#"
            [model]
            A = [1.0, 0.05, 0.0, 0.9]
            B = [0.01, 0.3]
            Ts = 0.05

            [dist]
            true_bound = 0.05
            controller_bound = 0.07
            alpha = 2.0

            [controller]
            K = [-10.0, -2.0]
            N = 12
            u_max = 4.0
            alpha_max = 0.1

            [sim]
            steps = 30
            reps = 5
            base_seed = 42
            message = "0110"

            [tol]
            geom_eps = 1e-8

            [sweep]
            alphas = [2.0, 3.0]
        "#;
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.model.a, [1.0, 0.05, 0.0, 0.9]);
        assert_eq!(cfg.model.b, [0.01, 0.3]);
        assert_eq!(cfg.controller.k, [-10.0, -2.0]);
        assert_eq!(cfg.controller.n, 12);
        assert_eq!(cfg.sim.base_seed, 42);
        assert_eq!(
            cfg.message_spec().unwrap(),
            MessageSpec::Fixed(vec![0, 1, 1, 0])
        );
        assert_eq!(cfg.sweep.alphas, vec![2.0, 3.0]);
        assert_eq!(cfg.tol.geom_eps, 1e-8);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(parse_config("[model]\nbogus = 1\n").is_err());
        assert!(parse_config("[mystery]\nx = 1\n").is_err());
    }

    #[test]
    fn syntax_errors_carry_the_line() {
        let err = parse_config("[model]\nTs = \"not a number\"\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected a parse error, got {other}"),
        }
        let err = parse_config("[sim]\nsteps = 50\nreps = oops\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("expected a parse error, got {other}"),
        }
    }

    #[test]
    fn semantic_rules_are_enforced() {
        let cases = [
            "[dist]\ntrue_bound = 0.2\n",          // wider than the controller bound
            "[dist]\ntrue_bound = 0.12\n",         // equal is not strictly inside
            "[dist]\nalpha = 0.5\n",               // eavesdropper can't be finer
            "[controller]\nN = 0\n",
            "[controller]\nu_max = -1.0\n",
            "[controller]\nalpha_max = 1.0\n",
            "[model]\nTs = 0.0\n",
            "[sim]\nsteps = 0\n",
            "[sim]\nreps = 0\n",
            "[sim]\nmessage = \"012\"\n",
            "[tol]\ngeom_eps = 0.0\n",
            "[sweep]\nalphas = []\n",
            "[sweep]\nalphas = [2.0, 2.0]\n",
            "[sweep]\nalphas = [0.5]\n",
        ];
        for text in cases {
            assert!(
                matches!(parse_config(text), Err(Error::Config(_))),
                "accepted invalid config: {text}"
            );
        }
    }

    #[test]
    fn message_field_parses_both_forms() {
        assert_eq!(parse_message("").unwrap(), MessageSpec::Fixed(vec![]));
        assert_eq!(
            parse_message("101").unwrap(),
            MessageSpec::Fixed(vec![1, 0, 1])
        );
        assert_eq!(parse_message("random:16").unwrap(), MessageSpec::Random(16));
        assert!(parse_message("random:").is_err());
        assert!(parse_message("random:-1").is_err());
        assert!(parse_message("abc").is_err());
    }

    #[test]
    fn builders_realize_the_configured_instance() {
        let mut cfg = RunConfig::default();
        cfg.controller.n = 3;
        let model = cfg.linear_model().unwrap();
        assert_eq!(model.ts(), 0.1);
        assert_eq!(model.a()[(0, 1)], 0.0975);
        let mc = cfg.controller_model().unwrap();
        let me = cfg.eavesdropper_model(4.0).unwrap();
        assert!(mc
            .disturbance()
            .is_subset(me.disturbance(), cfg.tol.geom_eps));
        let fam = cfg.build_family().unwrap();
        assert_eq!(fam.n_sets(), 3);
        assert_eq!(fam.u_max(), 6.0);
    }
}
