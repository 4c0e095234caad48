//! Scenario configuration: schema, strict validation, and execution.
//!
//! Configs are TOML with unknown keys rejected everywhere, since a silently
//! ignored typo in `eta` or `rrl` would invalidate an experiment. Every
//! random choice (generator assignment, graph generation, delays) is seeded
//! in the config itself, so the canonical serialization of a scenario — and
//! the SHA-256 hash derived from it — pins the run bit-for-bit.

use crate::cost::{GeneratorParams, PenaltyConfig, TypeTag};
use crate::network::{Segment, Topology, TopologySchedule};
use crate::oracle::{self, OracleSolution, SolveError};
use crate::protocol::{self, ProtocolConfig, ProtocolError, ProtocolKind, RunInputs};
use crate::trace::{SimTrace, TraceMeta};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to parse config: {0}")]
    Parse(String),
    #[error("invalid value for `{field}`: {message}")]
    Invalid { field: String, message: String },
}

impl ConfigError {
    fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
        ConfigError::Invalid {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("oracle solve failed: {0}")]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

/// How generator parameter rows are assigned to nodes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorsSpec {
    /// `random` (seeded draw from the stock rows), `types` (explicit stock
    /// tags per node), or `custom` (explicit parameter rows per node).
    pub source: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub types: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub custom: Option<Vec<CustomGenerator>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomGenerator {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub m_lo: f64,
    pub m_hi: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltySpec {
    pub c: f64,
    pub sigma: u32,
}

impl Default for PenaltySpec {
    fn default() -> Self {
        PenaltySpec { c: 1.0, sigma: 2 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSpec {
    /// `sat`, `sat_sgn`, `linear`, or `delayed_sat`.
    pub kind: String,
    pub eta: f64,
    pub rrl: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub soft_sign_eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delay_bound: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delay_seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    /// `cycle`, `erdos_renyi`, `edges`, or `schedule`.
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<(usize, usize, f64)>>,
    /// Uniform-connectivity window for schedules.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub segments: Option<Vec<SegmentSpec>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSpec {
    pub duration: u64,
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<(usize, usize, f64)>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    /// `uniform` (P_mis/n everywhere) or `explicit`.
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
}

impl Default for InitialSpec {
    fn default() -> Self {
        InitialSpec {
            kind: "uniform".into(),
            values: None,
        }
    }
}

fn default_tol() -> f64 {
    1e-6
}

/// A complete experiment description; see the bundled `scenarios/` files.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub n: usize,
    /// Power mismatch to allocate [MW].
    pub p_mis: f64,
    /// Iteration cap.
    pub steps: u64,
    /// Gradient-spread termination tolerance [$/MWh]; 0 disables early stop.
    #[serde(default = "default_tol")]
    pub termination_tol: f64,
    pub generators: GeneratorsSpec,
    #[serde(default)]
    pub penalty: PenaltySpec,
    pub protocol: ProtocolSpec,
    pub topology: TopologySpec,
    #[serde(default)]
    pub initial: InitialSpec,
}

/// A scenario with every random choice materialized.
#[derive(Debug)]
pub struct ResolvedScenario {
    pub params: Vec<GeneratorParams>,
    pub pen: PenaltyConfig,
    pub cfg: ProtocolConfig,
    pub schedule: TopologySchedule,
    pub x0: Vec<f64>,
}

/// Output of a full scenario execution.
#[derive(Debug)]
pub struct ScenarioRun {
    pub resolved: ResolvedScenario,
    pub oracle: OracleSolution,
    pub trace: SimTrace,
}

const MAX_N: usize = 2_000;

impl Scenario {
    /// Parse and fully validate a config; rejects unknown keys.
    pub fn from_toml_str(text: &str) -> Result<Scenario, ConfigError> {
        let scenario: Scenario =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    /// Parse from raw bytes; safe on arbitrary input.
    pub fn from_toml_bytes(bytes: &[u8]) -> Result<Scenario, ConfigError> {
        let text = std::str::from_utf8(bytes)
            .map_err(|_| ConfigError::Parse("config is not valid UTF-8".into()))?;
        Scenario::from_toml_str(text)
    }

    pub fn load(path: &std::path::Path) -> Result<Scenario, ConfigError> {
        let text = std::fs::read(path).map_err(|e| {
            ConfigError::Parse(format!("cannot read {}: {e}", path.display()))
        })?;
        Scenario::from_toml_bytes(&text)
    }

    /// The one canonical text form; hashing this pins the run.
    pub fn canonical_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes to TOML")
    }

    /// SHA-256 of the canonical serialization, hex-encoded.
    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Replace every seed in the config with values derived from `master`
    /// (generator assignment: `master`; topology segment i: `master + 1 + i`;
    /// delays: `master + 1000`). The config hash changes accordingly.
    pub fn apply_seed_override(&mut self, master: u64) {
        if self.generators.source == "random" {
            self.generators.seed = Some(master);
        }
        if self.topology.kind == "erdos_renyi" {
            self.topology.seed = Some(master + 1);
        }
        if let Some(segments) = &mut self.topology.segments {
            for (i, seg) in segments.iter_mut().enumerate() {
                if seg.kind == "erdos_renyi" {
                    seg.seed = Some(master + 1 + i as u64);
                }
            }
        }
        if self.protocol.kind == "delayed_sat" {
            self.protocol.delay_seed = Some(master + 1000);
        }
    }

    pub fn trace_meta(&self) -> TraceMeta {
        TraceMeta {
            name: self.name.clone(),
            config_hash: self.config_hash(),
            protocol: self.protocol.kind.clone(),
            n: self.n,
            p_mis: self.p_mis,
            eta: self.protocol.eta,
            rrl: self.protocol.rrl,
            tol: self.termination_tol,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return Err(ConfigError::invalid(
                "name",
                "must be nonempty and use only [A-Za-z0-9_-]",
            ));
        }
        if self.n == 0 || self.n > MAX_N {
            return Err(ConfigError::invalid(
                "n",
                format!("must lie in [1, {MAX_N}], got {}", self.n),
            ));
        }
        if !self.p_mis.is_finite() {
            return Err(ConfigError::invalid("p_mis", "must be finite"));
        }
        if !self.termination_tol.is_finite() || self.termination_tol < 0.0 {
            return Err(ConfigError::invalid(
                "termination_tol",
                "must be finite and nonnegative",
            ));
        }
        self.validate_generators()?;
        PenaltyConfig::new(self.penalty.c, self.penalty.sigma)
            .map_err(|e| ConfigError::invalid("penalty", e.to_string()))?;
        let cfg = self.protocol_config()?;
        cfg.validate()
            .map_err(|e| ConfigError::invalid("protocol", e.to_string()))?;
        if self.protocol.kind != "delayed_sat" && self.protocol.delay_seed.is_some() {
            return Err(ConfigError::invalid(
                "protocol.delay_seed",
                "only applies to delayed_sat",
            ));
        }
        self.validate_topology()?;
        self.validate_initial()?;
        Ok(())
    }

    fn validate_generators(&self) -> Result<(), ConfigError> {
        let g = &self.generators;
        let forbid = |cond: bool, field: &str| -> Result<(), ConfigError> {
            if cond {
                Err(ConfigError::invalid(
                    field,
                    format!("does not apply when source = \"{}\"", g.source),
                ))
            } else {
                Ok(())
            }
        };
        match g.source.as_str() {
            "random" => {
                if g.seed.is_none() {
                    return Err(ConfigError::invalid("generators.seed", "required for random source"));
                }
                forbid(g.types.is_some(), "generators.types")?;
                forbid(g.custom.is_some(), "generators.custom")?;
            }
            "types" => {
                let types = g.types.as_ref().ok_or_else(|| {
                    ConfigError::invalid("generators.types", "required for types source")
                })?;
                if types.len() != self.n {
                    return Err(ConfigError::invalid(
                        "generators.types",
                        format!("expected {} entries, got {}", self.n, types.len()),
                    ));
                }
                for t in types {
                    match TypeTag::parse(t) {
                        Some(tag) if tag != TypeTag::Custom => {}
                        _ => {
                            return Err(ConfigError::invalid(
                                "generators.types",
                                format!("unknown stock type `{t}` (expected A–E)"),
                            ))
                        }
                    }
                }
                forbid(g.seed.is_some(), "generators.seed")?;
                forbid(g.custom.is_some(), "generators.custom")?;
            }
            "custom" => {
                let rows = g.custom.as_ref().ok_or_else(|| {
                    ConfigError::invalid("generators.custom", "required for custom source")
                })?;
                if rows.len() != self.n {
                    return Err(ConfigError::invalid(
                        "generators.custom",
                        format!("expected {} rows, got {}", self.n, rows.len()),
                    ));
                }
                for (i, r) in rows.iter().enumerate() {
                    GeneratorParams::custom(r.alpha, r.beta, r.gamma, r.m_lo, r.m_hi)
                        .validate()
                        .map_err(|e| {
                            ConfigError::invalid(
                                &format!("generators.custom[{i}]"),
                                e.to_string(),
                            )
                        })?;
                }
                forbid(g.seed.is_some(), "generators.seed")?;
                forbid(g.types.is_some(), "generators.types")?;
            }
            other => {
                return Err(ConfigError::invalid(
                    "generators.source",
                    format!("unknown source `{other}` (expected random, types, or custom)"),
                ))
            }
        }
        Ok(())
    }

    fn protocol_config(&self) -> Result<ProtocolConfig, ConfigError> {
        let kind = ProtocolKind::parse(&self.protocol.kind).ok_or_else(|| {
            ConfigError::invalid(
                "protocol.kind",
                format!(
                    "unknown kind `{}` (expected sat, sat_sgn, linear, or delayed_sat)",
                    self.protocol.kind
                ),
            )
        })?;
        Ok(ProtocolConfig {
            kind,
            eta: self.protocol.eta,
            rrl: self.protocol.rrl,
            mu: self.protocol.mu,
            soft_sign_eps: self.protocol.soft_sign_eps,
            delay_bound: self.protocol.delay_bound,
            delay_seed: self.protocol.delay_seed.unwrap_or(0),
        })
    }

    fn validate_static_topology_fields(
        field: &str,
        kind: &str,
        weight: Option<f64>,
        p: Option<f64>,
        seed: Option<u64>,
        edges: &Option<Vec<(usize, usize, f64)>>,
        n: usize,
    ) -> Result<(), ConfigError> {
        let forbid = |cond: bool, sub: &str| -> Result<(), ConfigError> {
            if cond {
                Err(ConfigError::invalid(
                    &format!("{field}.{sub}"),
                    format!("does not apply when kind = \"{kind}\""),
                ))
            } else {
                Ok(())
            }
        };
        match kind {
            "cycle" => {
                if n < 3 {
                    return Err(ConfigError::invalid(
                        field,
                        format!("cycle topologies need n >= 3, got {n}"),
                    ));
                }
                let w = weight.unwrap_or(1.0);
                if !w.is_finite() || w <= 0.0 {
                    return Err(ConfigError::invalid(
                        &format!("{field}.weight"),
                        "must be finite and positive",
                    ));
                }
                forbid(p.is_some(), "p")?;
                forbid(seed.is_some(), "seed")?;
                forbid(edges.is_some(), "edges")?;
            }
            "erdos_renyi" => {
                let prob = p.ok_or_else(|| {
                    ConfigError::invalid(&format!("{field}.p"), "required for erdos_renyi")
                })?;
                if !(0.0..=1.0).contains(&prob) {
                    return Err(ConfigError::invalid(
                        &format!("{field}.p"),
                        format!("must lie in [0, 1], got {prob}"),
                    ));
                }
                if seed.is_none() {
                    return Err(ConfigError::invalid(
                        &format!("{field}.seed"),
                        "required for erdos_renyi",
                    ));
                }
                forbid(weight.is_some(), "weight")?;
                forbid(edges.is_some(), "edges")?;
            }
            "edges" => {
                let list = edges.as_ref().ok_or_else(|| {
                    ConfigError::invalid(&format!("{field}.edges"), "required for edges kind")
                })?;
                if list.is_empty() {
                    return Err(ConfigError::invalid(
                        &format!("{field}.edges"),
                        "must contain at least one edge",
                    ));
                }
                Topology::from_edges(n, list).map_err(|e| {
                    ConfigError::invalid(&format!("{field}.edges"), e.to_string())
                })?;
                forbid(weight.is_some(), "weight")?;
                forbid(p.is_some(), "p")?;
                forbid(seed.is_some(), "seed")?;
            }
            other => {
                return Err(ConfigError::invalid(
                    field,
                    format!("unknown topology kind `{other}`"),
                ))
            }
        }
        Ok(())
    }

    fn validate_topology(&self) -> Result<(), ConfigError> {
        let t = &self.topology;
        if t.kind == "schedule" {
            let b = t.b.ok_or_else(|| {
                ConfigError::invalid("topology.b", "required for schedule topologies")
            })?;
            if b == 0 {
                return Err(ConfigError::invalid("topology.b", "must be at least 1"));
            }
            let segments = t.segments.as_ref().ok_or_else(|| {
                ConfigError::invalid("topology.segments", "required for schedule topologies")
            })?;
            if segments.is_empty() {
                return Err(ConfigError::invalid(
                    "topology.segments",
                    "must contain at least one segment",
                ));
            }
            for (i, seg) in segments.iter().enumerate() {
                if seg.duration == 0 {
                    return Err(ConfigError::invalid(
                        &format!("topology.segments[{i}].duration"),
                        "must be at least 1",
                    ));
                }
                if seg.kind == "schedule" {
                    return Err(ConfigError::invalid(
                        &format!("topology.segments[{i}].kind"),
                        "segments cannot nest schedules",
                    ));
                }
                Scenario::validate_static_topology_fields(
                    &format!("topology.segments[{i}]"),
                    &seg.kind,
                    seg.weight,
                    seg.p,
                    seg.seed,
                    &seg.edges,
                    self.n,
                )?;
            }
            for (cond, sub) in [
                (t.weight.is_some(), "weight"),
                (t.p.is_some(), "p"),
                (t.seed.is_some(), "seed"),
                (t.edges.is_some(), "edges"),
            ] {
                if cond {
                    return Err(ConfigError::invalid(
                        &format!("topology.{sub}"),
                        "does not apply when kind = \"schedule\"",
                    ));
                }
            }
            Ok(())
        } else {
            if t.b.is_some() || t.segments.is_some() {
                return Err(ConfigError::invalid(
                    "topology",
                    "b/segments only apply to schedule topologies",
                ));
            }
            Scenario::validate_static_topology_fields(
                "topology", &t.kind, t.weight, t.p, t.seed, &t.edges, self.n,
            )
        }
    }

    fn validate_initial(&self) -> Result<(), ConfigError> {
        match self.initial.kind.as_str() {
            "uniform" => {
                if self.initial.values.is_some() {
                    return Err(ConfigError::invalid(
                        "initial.values",
                        "does not apply when kind = \"uniform\"",
                    ));
                }
            }
            "explicit" => {
                let values = self.initial.values.as_ref().ok_or_else(|| {
                    ConfigError::invalid("initial.values", "required for explicit initial")
                })?;
                if values.len() != self.n {
                    return Err(ConfigError::invalid(
                        "initial.values",
                        format!("expected {} entries, got {}", self.n, values.len()),
                    ));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(ConfigError::invalid("initial.values", "must be finite"));
                }
                let total: f64 = values.iter().sum();
                if (total - self.p_mis).abs() > 1e-9 {
                    return Err(ConfigError::invalid(
                        "initial.values",
                        format!(
                            "must sum to p_mis = {} within 1e-9, got {total}",
                            self.p_mis
                        ),
                    ));
                }
            }
            other => {
                return Err(ConfigError::invalid(
                    "initial.kind",
                    format!("unknown kind `{other}` (expected uniform or explicit)"),
                ))
            }
        }
        Ok(())
    }

    fn build_static_topology(
        field: &str,
        kind: &str,
        weight: Option<f64>,
        p: Option<f64>,
        seed: Option<u64>,
        edges: &Option<Vec<(usize, usize, f64)>>,
        n: usize,
    ) -> Result<Topology, ConfigError> {
        let map = |e: crate::network::TopologyError| ConfigError::invalid(field, e.to_string());
        match kind {
            "cycle" => Topology::cycle(n, weight.unwrap_or(1.0)).map_err(map),
            "erdos_renyi" => {
                Topology::erdos_renyi(n, p.unwrap_or(0.0), seed.unwrap_or(0)).map_err(map)
            }
            "edges" => Topology::from_edges(n, edges.as_deref().unwrap_or(&[])).map_err(map),
            other => Err(ConfigError::invalid(
                field,
                format!("unknown topology kind `{other}`"),
            )),
        }
    }

    /// Materialize every random choice. The generator draw order is pinned:
    /// nodes 0..n−1 in order, one `next_u64` each from ChaCha8(seed), mapped
    /// onto the stock rows A–E by `% 5`.
    pub fn resolve(&self) -> Result<ResolvedScenario, ConfigError> {
        self.validate()?;
        let params: Vec<GeneratorParams> = match self.generators.source.as_str() {
            "random" => {
                let seed = self.generators.seed.unwrap_or(0);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..self.n)
                    .map(|_| {
                        let tag = TypeTag::STOCK[(rng.next_u64() % 5) as usize];
                        GeneratorParams::stock(tag)
                    })
                    .collect()
            }
            "types" => self
                .generators
                .types
                .as_ref()
                .expect("validated")
                .iter()
                .map(|t| GeneratorParams::stock(TypeTag::parse(t).expect("validated")))
                .collect(),
            "custom" => self
                .generators
                .custom
                .as_ref()
                .expect("validated")
                .iter()
                .map(|r| GeneratorParams::custom(r.alpha, r.beta, r.gamma, r.m_lo, r.m_hi))
                .collect(),
            _ => unreachable!("validated"),
        };

        let pen = PenaltyConfig {
            c: self.penalty.c,
            sigma: self.penalty.sigma,
        };
        let cfg = self.protocol_config()?;

        let schedule = if self.topology.kind == "schedule" {
            let specs = self.topology.segments.as_ref().expect("validated");
            let mut segments = Vec::with_capacity(specs.len());
            for (i, seg) in specs.iter().enumerate() {
                let topology = Scenario::build_static_topology(
                    &format!("topology.segments[{i}]"),
                    &seg.kind,
                    seg.weight,
                    seg.p,
                    seg.seed,
                    &seg.edges,
                    self.n,
                )?;
                segments.push(Segment {
                    duration: seg.duration,
                    topology,
                });
            }
            TopologySchedule::new(segments, self.topology.b.expect("validated"))
                .map_err(|e| ConfigError::invalid("topology.segments", e.to_string()))?
        } else {
            let topo = Scenario::build_static_topology(
                "topology",
                &self.topology.kind,
                self.topology.weight,
                self.topology.p,
                self.topology.seed,
                &self.topology.edges,
                self.n,
            )?;
            TopologySchedule::static_topology(topo)
        };

        let x0 = match self.initial.kind.as_str() {
            "uniform" => vec![self.p_mis / self.n as f64; self.n],
            "explicit" => self.initial.values.clone().expect("validated"),
            _ => unreachable!("validated"),
        };

        Ok(ResolvedScenario {
            params,
            pen,
            cfg,
            schedule,
            x0,
        })
    }

    /// True when running this scenario calls for a uniform-connectivity
    /// certificate first (i.e. the topology is a switching schedule).
    pub fn requires_certification(&self) -> bool {
        self.topology.kind == "schedule"
    }

    /// Resolve, solve the centralized oracle, and run the protocol.
    pub fn execute(&self) -> Result<ScenarioRun, RunError> {
        let resolved = self.resolve()?;
        let oracle =
            oracle::solve_centralized(&resolved.params, &resolved.pen, self.p_mis, 1e-10)?;
        let inputs = RunInputs {
            params: &resolved.params,
            pen: resolved.pen,
            cfg: resolved.cfg.clone(),
            schedule: &resolved.schedule,
            x0: &resolved.x0,
            p_mis: self.p_mis,
            steps: self.steps,
            tol: self.termination_tol,
        };
        let trace = protocol::run(&inputs, Some(&oracle), self.trace_meta())?;
        Ok(ScenarioRun {
            resolved,
            oracle,
            trace,
        })
    }
}
