//! Versioned JSON scenario files and the built-in presets.
//!
//! Angles are radians. Every angle key also accepts a `_deg` twin holding
//! degrees; giving both forms of the same key is an error. Serialization
//! always writes radians.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use scvx_drive_core::model::{state, CurvatureProfile, ModelVariant, VehicleParams, NU, NX};
use scvx_drive_core::scenario::{Scenario, ScenarioError};
use scvx_drive_core::subproblem::{
    BoundaryPins, Channel, ConstraintSpec, CostWeights, NodeExpr, TrajectoryExpr, TriggerSpec, GRAVITY,
};
use scvx_drive_core::transcription::DEFAULT_SUBSTEPS;

pub const SCHEMA_VERSION: u32 = 1;

pub const PRESETS: [&str; 3] = ["stop-50m", "stop-obstacle", "evasion-trigger"];

#[derive(Debug, thiserror::Error)]
pub enum ScenarioFileError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("unknown scenario '{name}'; built-in presets: {}", PRESETS.join(", "))]
    Unknown { name: String },
    #[error("unsupported schema version {0}, expected {SCHEMA_VERSION}")]
    Version(u32),
    #[error("both '{0}' and '{0}_deg' are given")]
    DuplicateAngle(&'static str),
    #[error("obstacle {index} covers nodes {first}..={last}, outside 0..={max}")]
    ObstacleRange { index: usize, first: usize, last: usize, max: usize },
    #[error("trigger needs between 1 and {max} final nodes, got {got}")]
    TriggerNodes { got: usize, max: usize },
    #[error("invalid scenario: {0}")]
    Invalid(#[from] ScenarioError),
}

impl From<serde_json::Error> for ScenarioFileError {
    fn from(err: serde_json::Error) -> Self {
        Self::Parse { line: err.line(), column: err.column(), message: err.to_string() }
    }
}

/// An angle given in radians under `key` or in degrees under `key_deg`.
fn angle(key: &'static str, rad: Option<f64>, deg: Option<f64>) -> Result<Option<f64>, ScenarioFileError> {
    match (rad, deg) {
        (Some(_), Some(_)) => Err(ScenarioFileError::DuplicateAngle(key)),
        (Some(r), None) => Ok(Some(r)),
        (None, Some(d)) => Ok(Some(d.to_radians())),
        (None, None) => Ok(None),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VariantFile {
    #[default]
    RobotCar,
    SideSlip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Left => "left",
            Side::Right => "right",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum CurvatureFile {
    Straight,
    /// Positive radius turns left.
    ConstantRadius { radius: f64 },
    /// Curvature ramps linearly from zero to `1 / radius` over `blend`
    /// meters, then stays constant.
    ClothoidBlend { radius: f64, blend: f64 },
    /// `(s, kappa)` samples, `s` measured from the start of the horizon.
    Samples { points: Vec<(f64, f64)> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_r: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_f: Option<f64>,
    pub model: VariantFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PinsFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub e_y: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub e_psi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub e_psi_deg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_deg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accel: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steer_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steer_rate_deg: Option<f64>,
}

impl PinsFile {
    /// Steering angle, acceleration and steering rate held at zero.
    pub fn at_rest() -> Self {
        Self { delta: Some(0.0), accel: Some(0.0), steer_rate: Some(0.0), ..Self::default() }
    }

    fn normalized(&self) -> Result<Self, ScenarioFileError> {
        Ok(Self {
            e_psi: angle("e_psi", self.e_psi, self.e_psi_deg)?,
            e_psi_deg: None,
            delta: angle("delta", self.delta, self.delta_deg)?,
            delta_deg: None,
            steer_rate: angle("steer_rate", self.steer_rate, self.steer_rate_deg)?,
            steer_rate_deg: None,
            ..self.clone()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ConstraintsFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_max_deg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_rate_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_rate_max_deg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accel_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accel_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gravity: Option<f64>,
    /// Lateral room on either side of the centerline, m.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub road_half_width: Option<f64>,
    /// Pins at the last node; defaults to [`PinsFile::at_rest`].
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_pins: Option<PinsFile>,
    /// Control pins at the first node.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_controls: Option<PinsFile>,
}

/// Keep `e_y` at least `bound` meters to one side over an inclusive node range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleFile {
    pub first_node: usize,
    pub last_node: usize,
    pub bound: f64,
    /// Side of the centerline the vehicle must pass on.
    pub side: Side,
}

/// Evasion trigger: while the terminal speed on the previous iterate exceeds
/// `gate_speed`, keep `e_y` at least `offset` to `side` at the last
/// `final_nodes` nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerFile {
    pub gate_speed: f64,
    pub offset: f64,
    pub side: Side,
    pub final_nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct WeightsFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub e_y: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub e_psi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jerk: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accel: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steer_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub terminal: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub virtual_control: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema_version: u32,
    pub name: String,
    /// Horizon length, m.
    pub s_span: f64,
    pub nodes: usize,
    pub curvature: CurvatureFile,
    /// Initial and desired final speed, m/s.
    pub v0: f64,
    pub v_final: f64,
    #[serde(default)]
    pub vehicle: VehicleFile,
    #[serde(default)]
    pub constraints: ConstraintsFile,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub obstacles: Vec<ObstacleFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trigger: Option<TriggerFile>,
    #[serde(default)]
    pub weights: WeightsFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub substeps: Option<usize>,
}

pub mod defaults {
    pub const L_R: f64 = 1.4;
    pub const L_F: f64 = 1.4;
    pub const V_MIN: f64 = 0.5;
    pub const V_MAX: f64 = 30.0;
    pub const DELTA_MAX_DEG: f64 = 27.0;
    pub const DELTA_RATE_MAX_DEG: f64 = 60.0;
    pub const ACCEL_MIN: f64 = -8.0;
    pub const ACCEL_MAX: f64 = 4.0;
    pub const MU: f64 = 0.6;
    pub const ROAD_HALF_WIDTH: f64 = 3.0;
    /// Radius of the preset road arc, m.
    pub const PRESET_RADIUS: f64 = 200.0;
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self, ScenarioFileError> {
        let file: Self = serde_json::from_str(text)?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(ScenarioFileError::Version(file.schema_version));
        }
        Ok(file)
    }

    /// Pretty JSON with every angle in radians.
    pub fn to_json(&self) -> Result<String, ScenarioFileError> {
        Ok(serde_json::to_string_pretty(&self.normalized()?)?)
    }

    /// Same scenario with `_deg` keys converted to radians.
    pub fn normalized(&self) -> Result<Self, ScenarioFileError> {
        let c = &self.constraints;
        let constraints = ConstraintsFile {
            delta_max: angle("delta_max", c.delta_max, c.delta_max_deg)?,
            delta_max_deg: None,
            delta_rate_max: angle("delta_rate_max", c.delta_rate_max, c.delta_rate_max_deg)?,
            delta_rate_max_deg: None,
            final_pins: c.final_pins.as_ref().map(PinsFile::normalized).transpose()?,
            initial_controls: c.initial_controls.as_ref().map(PinsFile::normalized).transpose()?,
            ..c.clone()
        };
        Ok(Self { constraints, ..self.clone() })
    }

    pub fn preset(name: &str) -> Option<Self> {
        let stop = Self {
            schema_version: SCHEMA_VERSION,
            name: "stop-50m".into(),
            s_span: 50.0,
            nodes: 40,
            curvature: CurvatureFile::ConstantRadius { radius: defaults::PRESET_RADIUS },
            v0: 20.0,
            v_final: 0.5,
            vehicle: VehicleFile::default(),
            constraints: ConstraintsFile { mu: Some(0.6), ..Default::default() },
            obstacles: Vec::new(),
            trigger: None,
            weights: WeightsFile::default(),
            substeps: None,
        };
        match name {
            "stop-50m" => Some(stop),
            "stop-obstacle" => Some(Self {
                name: name.into(),
                obstacles: vec![ObstacleFile { first_node: 20, last_node: 24, bound: 0.5, side: Side::Right }],
                ..stop
            }),
            "evasion-trigger" => Some(Self {
                name: name.into(),
                v0: 25.0,
                trigger: Some(TriggerFile { gate_speed: 1.0, offset: 1.0, side: Side::Left, final_nodes: 2 }),
                ..stop
            }),
            _ => None,
        }
    }

    fn curvature_profile(&self) -> Result<CurvatureProfile, ScenarioError> {
        let end = self.s_span;
        let profile = match &self.curvature {
            CurvatureFile::Straight => CurvatureProfile::constant(0.0, 0.0, end),
            CurvatureFile::ConstantRadius { radius } => CurvatureProfile::constant(1.0 / radius, 0.0, end),
            CurvatureFile::ClothoidBlend { radius, blend } if *blend < end => {
                CurvatureProfile::new(vec![(0.0, 0.0), (*blend, 1.0 / radius), (end, 1.0 / radius)])
            }
            CurvatureFile::ClothoidBlend { radius, blend } => {
                CurvatureProfile::new(vec![(0.0, 0.0), (end, end / (blend * radius))])
            }
            CurvatureFile::Samples { points } => CurvatureProfile::new(points.clone()),
        };
        Ok(profile?)
    }

    /// Apply defaults and validate.
    pub fn resolve(&self) -> Result<Scenario, ScenarioFileError> {
        let file = self.normalized()?;
        let c = &file.constraints;
        let params = VehicleParams::new(
            file.vehicle.l_r.unwrap_or(defaults::L_R),
            file.vehicle.l_f.unwrap_or(defaults::L_F),
        )
        .map_err(ScenarioError::from)?;
        let variant = match file.vehicle.model {
            VariantFile::RobotCar => ModelVariant::RobotCar,
            VariantFile::SideSlip => ModelVariant::SideSlip,
        };
        let curvature = file.curvature_profile()?;
        if file.nodes < scvx_drive_core::scenario::MIN_NODES {
            return Err(ScenarioError::TooFewNodes(file.nodes).into());
        }

        let half_width = c.road_half_width.unwrap_or(defaults::ROAD_HALF_WIDTH);
        let mut corridor = vec![(-half_width, half_width); file.nodes];
        for (index, obstacle) in file.obstacles.iter().enumerate() {
            if obstacle.first_node > obstacle.last_node || obstacle.last_node >= file.nodes {
                return Err(ScenarioFileError::ObstacleRange {
                    index,
                    first: obstacle.first_node,
                    last: obstacle.last_node,
                    max: file.nodes - 1,
                });
            }
            for bounds in &mut corridor[obstacle.first_node..=obstacle.last_node] {
                match obstacle.side {
                    Side::Right => bounds.1 = bounds.1.min(-obstacle.bound),
                    Side::Left => bounds.0 = bounds.0.max(obstacle.bound),
                }
            }
        }

        let kappa0 = curvature.eval(0.0).map_err(ScenarioError::from)?;
        let mut initial_state = [Some(0.0), Some(0.0), Some(0.0), Some(file.v0), Some(0.0), Some(0.0)];
        initial_state[state::DELTA] = Some(scvx_drive_core::model::steady_steering_angle(kappa0, &params, variant));
        let mut pins = BoundaryPins { initial_state, ..Default::default() };
        let final_pins = c.final_pins.clone().unwrap_or_else(PinsFile::at_rest);
        (pins.final_state, pins.final_control) = pin_arrays(&final_pins);
        if let Some(initial) = &c.initial_controls {
            pins.initial_control = pin_arrays(initial).1;
        }

        let constraints = ConstraintSpec {
            v_min: c.v_min.unwrap_or(defaults::V_MIN),
            v_max: c.v_max.unwrap_or(defaults::V_MAX),
            delta_max: c.delta_max.unwrap_or(defaults::DELTA_MAX_DEG.to_radians()),
            steer_rate_max: c.delta_rate_max.unwrap_or(defaults::DELTA_RATE_MAX_DEG.to_radians()),
            accel_min: c.accel_min.unwrap_or(defaults::ACCEL_MIN),
            accel_max: c.accel_max.unwrap_or(defaults::ACCEL_MAX),
            mu: c.mu.unwrap_or(defaults::MU),
            gravity: c.gravity.unwrap_or(GRAVITY),
            corridor,
            pins,
        };

        let trigger = file.trigger.as_ref().map(|t| evasion_trigger(t, file.nodes)).transpose()?;
        let w = &file.weights;
        let base = CostWeights::default();
        let weights = CostWeights {
            e_y: w.e_y.unwrap_or(base.e_y),
            e_psi: w.e_psi.unwrap_or(base.e_psi),
            jerk: w.jerk.unwrap_or(base.jerk),
            accel: w.accel.unwrap_or(base.accel),
            steer_rate: w.steer_rate.unwrap_or(base.steer_rate),
            terminal: w.terminal.unwrap_or(base.terminal),
            virtual_control: w.virtual_control.unwrap_or(base.virtual_control),
        };

        let scenario = Scenario {
            name: file.name.clone(),
            s_start: 0.0,
            s_span: file.s_span,
            nodes: file.nodes,
            curvature,
            v0: file.v0,
            v_final: file.v_final,
            params,
            variant,
            constraints,
            weights,
            trigger,
            substeps: file.substeps.unwrap_or(DEFAULT_SUBSTEPS),
        };
        scenario.validate()?;
        Ok(scenario)
    }
}

fn pin_arrays(p: &PinsFile) -> ([Option<f64>; NX], [Option<f64>; NU]) {
    let mut states = [None; NX];
    states[state::E_Y] = p.e_y;
    states[state::E_PSI] = p.e_psi;
    states[state::V] = p.v;
    states[state::DELTA] = p.delta;
    (states, [p.accel, p.steer_rate])
}

fn evasion_trigger(t: &TriggerFile, nodes: usize) -> Result<TriggerSpec, ScenarioFileError> {
    if t.final_nodes == 0 || t.final_nodes > nodes {
        return Err(ScenarioFileError::TriggerNodes { got: t.final_nodes, max: nodes });
    }
    let e_y = Channel::State(state::E_Y);
    // Left: offset - e_y <= 0. Right: e_y + offset <= 0.
    let constraint = match t.side {
        Side::Left => NodeExpr { terms: vec![(e_y, -1.0)], constant: t.offset },
        Side::Right => NodeExpr { terms: vec![(e_y, 1.0)], constant: t.offset },
    };
    Ok(TriggerSpec {
        gate: TrajectoryExpr { terms: vec![(nodes - 1, Channel::State(state::V), -1.0)], constant: t.gate_speed },
        constraint,
        nodes: (nodes - t.final_nodes..nodes).collect(),
    })
}

/// Load a preset by name, or a scenario file by path.
pub fn load_scenario(spec: &str) -> Result<(ScenarioFile, Scenario), ScenarioFileError> {
    let file = match ScenarioFile::preset(spec) {
        Some(file) => file,
        None => {
            let path = Path::new(spec);
            if !path.exists() {
                return Err(ScenarioFileError::Unknown { name: spec.into() });
            }
            let text = std::fs::read_to_string(path)
                .map_err(|source| ScenarioFileError::Io { path: spec.into(), source })?;
            ScenarioFile::from_json(&text)?
        }
    };
    let scenario = file.resolve()?;
    Ok((file, scenario))
}
