//! JSON problem files.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    build_kernel_from_functional, control_sharing_protocol, delayed_sharing_protocol, delayed_state_sharing_protocol,
    no_sharing_protocol, periodic_sharing_protocol, FiniteSpace, Horizon, Kernel, LocalSpaces, MemoryWindow, Mode,
    NoiseModel, ProblemSpec, SharingProtocol,
};
use crate::error::Error;

/// A space given once for every step, or once per step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpaceSchedule {
    Cardinality(usize),
    Uniform(FiniteSpace),
    PerStep(Vec<FiniteSpace>),
}

impl SpaceSchedule {
    fn expand(&self, slices: usize) -> Vec<FiniteSpace> {
        match self {
            SpaceSchedule::Cardinality(c) => vec![FiniteSpace::new(*c); slices],
            SpaceSchedule::Uniform(s) => vec![s.clone(); slices],
            SpaceSchedule::PerStep(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionalSpec {
    /// `[t][x][u_flat][w]`
    pub f_table: Vec<Vec<Vec<Vec<usize>>>>,
    pub noise: NoiseModel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransitionSpec {
    /// `[t][x][u_flat][x']`
    Kernel(Vec<Vec<Vec<Vec<f64>>>>),
    Functional(FunctionalSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProtocolSpec {
    Preset {
        preset: String,
        #[serde(default)]
        params: serde_json::Map<String, Value>,
    },
    Explicit {
        explicit: SharingProtocol,
    },
}

/// The on-disk problem description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub n: usize,
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discount: Option<f64>,
    pub state: FiniteSpace,
    pub obs: Vec<SpaceSchedule>,
    pub actions: Vec<SpaceSchedule>,
    pub initial_dist: Vec<f64>,
    pub transition: TransitionSpec,
    /// `[i][t][x][y]`
    pub obs_kernels: Vec<Vec<Vec<Vec<f64>>>>,
    /// `[t][x][u_flat]`
    pub cost: Vec<Vec<Vec<f64>>>,
    pub protocol: ProtocolSpec,
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error(transparent)]
    Model(#[from] Error),
}

pub fn load_problem(path: impl AsRef<Path>) -> Result<ProblemSpec, LoadError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| LoadError::Io { path: path.display().to_string(), message: e.to_string() })?;
    parse_problem(&text)
}

pub fn parse_problem(text: &str) -> Result<ProblemSpec, LoadError> {
    let file: ProblemFile = serde_json::from_str(text).map_err(|e| LoadError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    Ok(file.into_spec()?)
}

fn param_usize(params: &serde_json::Map<String, Value>, key: &str) -> Result<Option<usize>, Error> {
    match params.get(key) {
        None => Ok(None),
        Some(v) => v
            .as_u64()
            .map(|x| Some(x as usize))
            .ok_or_else(|| Error::InvalidParameter(format!("'{key}' must be a non-negative integer"))),
    }
}

impl ProblemFile {
    /// Table slices the file must provide.
    fn slices(&self) -> usize {
        self.horizon.unwrap_or(1)
    }

    pub fn into_spec(self) -> Result<ProblemSpec, Error> {
        let slices = self.slices();
        if self.mode == Mode::Finite && self.horizon.is_none() {
            return Err(Error::InvalidParameter("finite mode needs the horizon 'T'".into()));
        }
        let obs_spaces: Vec<Vec<FiniteSpace>> = self.obs.iter().map(|s| s.expand(slices)).collect();
        let action_spaces: Vec<Vec<FiniteSpace>> = self.actions.iter().map(|s| s.expand(slices)).collect();
        let transition = match &self.transition {
            TransitionSpec::Kernel(slices) => slices
                .iter()
                .map(|per_x| Kernel::new(per_x.iter().flat_map(|per_u| per_u.iter().cloned()).collect()))
                .collect(),
            TransitionSpec::Functional(f) => f
                .f_table
                .iter()
                .map(|table| build_kernel_from_functional(table, &f.noise))
                .collect::<Result<Vec<_>, _>>()?,
        };
        let obs_kernels =
            self.obs_kernels.iter().map(|per_t| per_t.iter().cloned().map(Kernel::new).collect()).collect();
        let cost = self.cost.iter().map(|per_x| per_x.iter().flatten().copied().collect()).collect();
        let spaces = LocalSpaces {
            obs: obs_spaces.iter().map(|s| s.iter().map(|f| f.cardinality).collect()).collect(),
            actions: action_spaces.iter().map(|s| s.iter().map(|f| f.cardinality).collect()).collect(),
        };
        if spaces.obs.iter().chain(&spaces.actions).any(|s| s.len() < slices) || spaces.obs.len() != self.n {
            return Err(Error::InvalidParameter(format!(
                "observation and action spaces must cover {} controllers and {slices} steps",
                self.n
            )));
        }
        let protocol = match self.protocol {
            ProtocolSpec::Explicit { explicit } => explicit,
            ProtocolSpec::Preset { preset, params } => {
                build_preset(&preset, &params, self.mode, slices, self.n, &spaces)?
            }
        };
        Ok(ProblemSpec {
            n: self.n,
            horizon: slices,
            mode: self.mode,
            discount: self.discount,
            state_space: self.state,
            obs_spaces,
            action_spaces,
            initial_dist: self.initial_dist,
            transition,
            obs_kernels,
            cost,
            protocol,
        })
    }

    /// Writes `spec` back in file form with kernels spelled out.
    pub fn from_spec(spec: &ProblemSpec, protocol: ProtocolSpec) -> Self {
        let split = |rows: &[Vec<f64>], nu: usize| -> Vec<Vec<Vec<f64>>> {
            rows.chunks(nu).map(<[Vec<f64>]>::to_vec).collect()
        };
        let joint = |t: usize| -> usize { spec.action_spaces.iter().map(|a| a[t].cardinality).product() };
        let uniform = |s: &Vec<FiniteSpace>| {
            if s.iter().all(|f| f == &s[0]) {
                if s[0].labels.is_none() {
                    SpaceSchedule::Cardinality(s[0].cardinality)
                } else {
                    SpaceSchedule::Uniform(s[0].clone())
                }
            } else {
                SpaceSchedule::PerStep(s.clone())
            }
        };
        ProblemFile {
            n: spec.n,
            horizon: Some(spec.horizon),
            mode: spec.mode,
            discount: spec.discount,
            state: spec.state_space.clone(),
            obs: spec.obs_spaces.iter().map(uniform).collect(),
            actions: spec.action_spaces.iter().map(uniform).collect(),
            initial_dist: spec.initial_dist.clone(),
            transition: TransitionSpec::Kernel(
                spec.transition.iter().enumerate().map(|(t, k)| split(&k.rows, joint(t))).collect(),
            ),
            obs_kernels: spec.obs_kernels.iter().map(|per_t| per_t.iter().map(|k| k.rows.clone()).collect()).collect(),
            cost: spec
                .cost
                .iter()
                .enumerate()
                .map(|(t, c)| c.chunks(joint(t)).map(<[f64]>::to_vec).collect())
                .collect(),
            protocol,
        }
    }
}

fn build_preset(
    name: &str,
    params: &serde_json::Map<String, Value>,
    mode: Mode,
    slices: usize,
    n: usize,
    spaces: &LocalSpaces,
) -> Result<SharingProtocol, Error> {
    let horizon = match mode {
        Mode::Finite => Horizon::Finite(slices),
        Mode::Discounted => Horizon::Stationary,
    };
    let delays = || -> Result<Vec<usize>, Error> {
        if let Some(list) = params.get("delays") {
            let v: Vec<usize> = serde_json::from_value(list.clone())
                .map_err(|_| Error::InvalidParameter("'delays' must be a list of integers".into()))?;
            if v.len() != n {
                return Err(Error::InvalidParameter(format!("{} delays for {n} controllers", v.len())));
            }
            Ok(v)
        } else {
            Ok(vec![param_usize(params, "delay")?.unwrap_or(1); n])
        }
    };
    match name {
        "delayed_sharing" => delayed_sharing_protocol(&delays()?, horizon, spaces),
        "delayed_state_sharing" => delayed_state_sharing_protocol(&delays()?, horizon, spaces),
        "periodic_sharing" => {
            let period = param_usize(params, "period")?
                .ok_or_else(|| Error::InvalidParameter("periodic_sharing needs 'period'".into()))?;
            periodic_sharing_protocol(period, horizon, spaces)
        }
        "control_sharing" => match horizon {
            // No time-invariant form exists; keep the time-varying tables so
            // validation can report the problem.
            Horizon::Stationary => control_sharing_protocol(Horizon::Finite(slices), spaces),
            h => control_sharing_protocol(h, spaces),
        },
        "no_sharing" => {
            let window = match params.get("window") {
                None => MemoryWindow::Bounded(0),
                Some(Value::String(s)) if s == "full" => MemoryWindow::Full,
                Some(v) => MemoryWindow::Bounded(
                    v.as_u64()
                        .ok_or_else(|| Error::InvalidParameter("'window' must be an integer or \"full\"".into()))?
                        as usize,
                ),
            };
            no_sharing_protocol(window, horizon, spaces)
        }
        other => Err(Error::InvalidParameter(format!("unknown protocol preset '{other}'"))),
    }
}
