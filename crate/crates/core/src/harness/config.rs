//! Plain-text experiment configuration.
//!
//! Format: `key=value` lines grouped under `[section]` headers, `#` comments,
//! blank lines ignored.  Unknown keys are rejected with their line numbers;
//! every key has a documented default except `run.kind`, which is required.
//! [`ExperimentSpec::emit_effective`] writes a fully resolved configuration
//! that re-parses to an equal spec, serving as the per-run audit file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::schemes::{ElementPair, SchemeConfig};

/// Where a value came from, for error messages ("line 12" or the CLI).
fn place(line: usize) -> String {
    if line == 0 {
        "command line".to_string()
    } else {
        format!("line {line}")
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {message}", place(*line))]
    Syntax { line: usize, message: String },
    /// Keys that matched no documented setting, each with its location.
    #[error("unknown configuration keys: {keys}")]
    UnknownKeys { keys: String },
    #[error("missing required keys: {keys}")]
    MissingKeys { keys: String },
    #[error("{}: {key}: {message}", place(*line))]
    BadValue {
        line: usize,
        key: String,
        message: String,
    },
    /// Cross-key validation failure (ladder ordering, box bounds, ...).
    #[error("{key}: {message}")]
    Invalid { key: String, message: String },
}

/// Parsed but untyped configuration: `section.key` → (value, source line).
/// Command-line overrides are folded in with [`RawConfig::set`] before typed
/// extraction, so they win over file values.
#[derive(Debug, Default, Clone)]
pub struct RawConfig {
    entries: BTreeMap<String, (String, usize)>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries: BTreeMap<String, (String, usize)> = BTreeMap::new();
        let mut section = String::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = idx + 1;
            let content = match raw_line.find('#') {
                Some(p) => &raw_line[..p],
                None => raw_line,
            }
            .trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| ConfigError::Syntax {
                    line,
                    message: "section header is missing the closing ']'".into(),
                })?;
                let name = name.trim();
                if name.is_empty()
                    || !name
                        .chars()
                        .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
                {
                    return Err(ConfigError::Syntax {
                        line,
                        message: format!(
                            "invalid section name {name:?} (lowercase letters, digits, '_')"
                        ),
                    });
                }
                section = name.to_string();
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line,
                    message: format!("expected `key=value` or `[section]`, found {content:?}"),
                });
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(ConfigError::Syntax { line, message: "empty key".into() });
            }
            if section.is_empty() {
                return Err(ConfigError::Syntax {
                    line,
                    message: format!("key {key:?} appears before any [section] header"),
                });
            }
            let full = format!("{section}.{key}");
            if let Some((_, first)) = entries.insert(full.clone(), (value.trim().to_string(), line))
            {
                return Err(ConfigError::Syntax {
                    line,
                    message: format!("duplicate key {full} (first set on line {first})"),
                });
            }
        }
        Ok(RawConfig { entries })
    }

    /// Reads and parses a configuration file without resolving it, so
    /// overrides can still be layered on top.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Command-line override; `key` must be of the form `section.key`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let valid = key.split_once('.').is_some_and(|(s, k)| !s.is_empty() && !k.is_empty());
        if !valid {
            return Err(ConfigError::BadValue {
                line: 0,
                key: key.to_string(),
                message: "override keys take the form section.key".into(),
            });
        }
        self.entries.insert(key.to_string(), (value.trim().to_string(), 0));
        Ok(())
    }
}

/// Typed extraction that consumes entries so leftovers can be rejected.
struct Extract {
    entries: BTreeMap<String, (String, usize)>,
}

impl Extract {
    fn take_raw(&mut self, key: &str) -> Option<(String, usize)> {
        self.entries.remove(key)
    }

    fn take<T>(&mut self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T: std::str::FromStr,
        T::Err: std::fmt::Display,
    {
        Ok(self.take_opt(key)?.unwrap_or(default))
    }

    fn take_opt<T>(&mut self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T: std::str::FromStr,
        T::Err: std::fmt::Display,
    {
        match self.take_raw(key) {
            None => Ok(None),
            Some((raw, line)) => raw.parse().map(Some).map_err(|e| ConfigError::BadValue {
                line,
                key: key.to_string(),
                message: format!("cannot parse {raw:?}: {e}"),
            }),
        }
    }

    fn take_list<T>(&mut self, key: &str, default: &[T]) -> Result<Vec<T>, ConfigError>
    where
        T: std::str::FromStr + Clone,
        T::Err: std::fmt::Display,
    {
        match self.take_raw(key) {
            None => Ok(default.to_vec()),
            Some((raw, line)) => raw
                .split(',')
                .map(|item| {
                    item.trim().parse().map_err(|e| ConfigError::BadValue {
                        line,
                        key: key.to_string(),
                        message: format!("cannot parse list item {:?}: {e}", item.trim()),
                    })
                })
                .collect(),
        }
    }

    /// Rejects every remaining (= unrecognized) key, listing locations.
    fn finish(self) -> Result<(), ConfigError> {
        if self.entries.is_empty() {
            return Ok(());
        }
        let mut items: Vec<(usize, String)> =
            self.entries.into_iter().map(|(k, (_, line))| (line, k)).collect();
        items.sort();
        let keys = items
            .iter()
            .map(|(line, k)| format!("{} ({})", k, place(*line)))
            .collect::<Vec<_>>()
            .join(", ");
        Err(ConfigError::UnknownKeys { keys })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    GammaStudy,
    TemporalStudy,
    SpatialStudy,
    Channel,
    Cavity,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 5] = [
        ExperimentKind::GammaStudy,
        ExperimentKind::TemporalStudy,
        ExperimentKind::SpatialStudy,
        ExperimentKind::Channel,
        ExperimentKind::Cavity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::GammaStudy => "gamma_study",
            ExperimentKind::TemporalStudy => "temporal_study",
            ExperimentKind::SpatialStudy => "spatial_study",
            ExperimentKind::Channel => "channel",
            ExperimentKind::Cavity => "cavity",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

/// Named (ν, ν_m) sample boxes.  The two manufactured-solution panels use
/// `nu-low`/`nu-high`; `nu-m-high` is the alternative magnetic box quoted with
/// the γ-study's right panel; `channel` is the step-channel benchmark's box.
/// The default depends on the experiment kind (see [`ExperimentSpec`] docs).
pub fn preset_boxes(name: &str) -> Option<((f64, f64), (f64, f64))> {
    match name {
        "nu-low" => Some(((0.0009, 0.0011), (0.0009, 0.0011))),
        "nu-high" => Some(((0.009, 0.011), (0.0009, 0.0011))),
        "nu-m-high" => Some(((0.009, 0.011), (0.09, 0.11))),
        "channel" => Some(((0.0009, 0.0011), (0.009, 0.011))),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaParams {
    /// Grad-div penalty ladder, strictly increasing.
    pub ladder: Vec<f64>,
    /// Unit-square subdivisions (h = 1/resolution).
    pub resolution: usize,
    pub dt: f64,
    pub t_end: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalParams {
    /// Time-step ladder, strictly decreasing.
    pub dt_ladder: Vec<f64>,
    pub resolution: usize,
    pub gamma: f64,
    pub t_end: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialParams {
    /// Mesh-resolution ladder, strictly increasing (h = 1/resolution).
    pub mesh_ladder: Vec<usize>,
    /// Number of time steps (Δt = t_end / steps).
    pub steps: usize,
    pub gamma: f64,
    pub t_end: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelParams {
    /// Cells per unit length of the 40x10 channel (h = 1/resolution).
    pub resolution: usize,
    pub dt: f64,
    pub t_end: f64,
    pub gamma: f64,
    /// Lorentz coupling parameter.
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CavityParams {
    /// Subdivisions per side of the (-1,1)^2 cavity before barycentric
    /// refinement.
    pub resolution: usize,
    pub dt: f64,
    pub t_end: f64,
    pub gamma: f64,
    /// Coupling-parameter sweep, strictly increasing.
    pub s_ladder: Vec<f64>,
    /// Sparse-grid level of the Karhunen-Loève collocation plan.
    pub kl_level: usize,
    /// Random-field mean offset, correlation length, and truncation order.
    pub kl_c: f64,
    pub kl_corr_len: f64,
    pub kl_q: usize,
    /// Multipliers mapping the random field to ν and ν_m.
    pub kl_nu_scale: f64,
    pub kl_nu_m_scale: f64,
}

/// Fully resolved experiment description.
///
/// Defaults (every key except `run.kind` has one):
///
/// | key                   | default                              |
/// |-----------------------|--------------------------------------|
/// | `run.kind`            | — (required)                         |
/// | `run.seed`            | `7`                                  |
/// | `run.out`             | `smhd-out`                           |
/// | `run.svg`             | `false`                              |
/// | `run.snapshots`       | `true`                               |
/// | `scheme.mu`           | `1`                                  |
/// | `stochastic.n_sc`     | `20`                                 |
/// | `stochastic.eps`      | `0.01`                               |
/// | `stochastic.preset`   | kind-dependent (see below)           |
/// | `stochastic.nu_lo/hi`, `nu_m_lo/hi` | from the preset        |
/// | `gamma.ladder`        | `1,10,100,1000`                      |
/// | `gamma.resolution`    | `16`                                 |
/// | `gamma.dt`            | `0.1`                                |
/// | `gamma.t_end`         | `1`                                  |
/// | `temporal.dt_ladder`  | `0.25,0.125,0.0625,0.03125,0.015625` |
/// | `temporal.resolution` | `32`                                 |
/// | `temporal.gamma`      | `500`                                |
/// | `temporal.t_end`      | `1`                                  |
/// | `spatial.mesh_ladder` | `4,8,16,32`                          |
/// | `spatial.steps`       | `8`                                  |
/// | `spatial.gamma`       | `1000000`                            |
/// | `spatial.t_end`       | `0.001`                              |
/// | `channel.resolution`  | `1`                                  |
/// | `channel.dt`          | `0.05`                               |
/// | `channel.t_end`       | `40`                                 |
/// | `channel.gamma`       | `100000`                             |
/// | `channel.s`           | `0.001`                              |
/// | `cavity.resolution`   | `24`                                 |
/// | `cavity.dt`           | `5`                                  |
/// | `cavity.t_end`        | `600`                                |
/// | `cavity.gamma`        | `10000`                              |
/// | `cavity.s_ladder`     | `0.001,0.01,0.1,1`                   |
/// | `cavity.kl_level`     | `1`                                  |
/// | `cavity.kl_c`         | `1`                                  |
/// | `cavity.kl_corr_len`  | `0.01`                               |
/// | `cavity.kl_q`         | `2`                                  |
/// | `cavity.kl_nu_scale`  | `2/15000`                            |
/// | `cavity.kl_nu_m_scale`| `0.01`                               |
///
/// The sample-box preset defaults to `nu-high` for the γ study, `nu-low` for
/// the temporal/spatial studies, and `channel` for the channel benchmark (the
/// cavity draws its viscosities from the KL field instead).  Explicit
/// `nu_lo`/`nu_hi`/`nu_m_lo`/`nu_m_hi` keys override the preset's numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub seed: u64,
    /// Output subdirectory under the output root (`SMHD_OUT` env var or the
    /// working directory); an absolute path here ignores the root.
    pub out_dir: String,
    pub svg: bool,
    pub snapshots: bool,
    /// Eddy-viscosity scale μ.
    pub mu: f64,
    pub n_sc: usize,
    pub eps: f64,
    pub nu_box: (f64, f64),
    pub nu_m_box: (f64, f64),
    pub gamma: GammaParams,
    pub temporal: TemporalParams,
    pub spatial: SpatialParams,
    pub channel: ChannelParams,
    pub cavity: CavityParams,
}

impl ExperimentSpec {
    pub fn from_raw(raw: RawConfig) -> Result<Self, ConfigError> {
        let mut ex = Extract { entries: raw.entries };

        let Some((kind_raw, kind_line)) = ex.take_raw("run.kind") else {
            return Err(ConfigError::MissingKeys {
                keys: format!(
                    "run.kind (one of {})",
                    ExperimentKind::ALL.map(|k| k.name()).join(", ")
                ),
            });
        };
        let kind = ExperimentKind::from_name(&kind_raw).ok_or_else(|| ConfigError::BadValue {
            line: kind_line,
            key: "run.kind".into(),
            message: format!(
                "unknown experiment kind {kind_raw:?}; expected one of {}",
                ExperimentKind::ALL.map(|k| k.name()).join(", ")
            ),
        })?;

        let seed = ex.take("run.seed", 7u64)?;
        let out_dir = ex.take_raw("run.out").map_or_else(|| "smhd-out".to_string(), |v| v.0);
        let svg = ex.take("run.svg", false)?;
        let snapshots = ex.take("run.snapshots", true)?;
        let mu = ex.take("scheme.mu", 1.0)?;
        let n_sc = ex.take("stochastic.n_sc", 20usize)?;
        let eps = ex.take("stochastic.eps", 0.01)?;

        let preset_default = match kind {
            ExperimentKind::GammaStudy => "nu-high",
            ExperimentKind::TemporalStudy | ExperimentKind::SpatialStudy => "nu-low",
            ExperimentKind::Channel => "channel",
            // The cavity samples viscosities from the KL field; the box is
            // unused but still resolved so the spec is total.
            ExperimentKind::Cavity => "nu-low",
        };
        let (preset, preset_line) =
            ex.take_raw("stochastic.preset").unwrap_or_else(|| (preset_default.into(), 0));
        let (mut nu_box, mut nu_m_box) =
            preset_boxes(&preset).ok_or_else(|| ConfigError::BadValue {
                line: preset_line,
                key: "stochastic.preset".into(),
                message: format!(
                    "unknown preset {preset:?}; expected nu-low, nu-high, nu-m-high, or channel"
                ),
            })?;
        if let Some(v) = ex.take_opt("stochastic.nu_lo")? {
            nu_box.0 = v;
        }
        if let Some(v) = ex.take_opt("stochastic.nu_hi")? {
            nu_box.1 = v;
        }
        if let Some(v) = ex.take_opt("stochastic.nu_m_lo")? {
            nu_m_box.0 = v;
        }
        if let Some(v) = ex.take_opt("stochastic.nu_m_hi")? {
            nu_m_box.1 = v;
        }

        let gamma = GammaParams {
            ladder: ex.take_list("gamma.ladder", &[1.0, 10.0, 100.0, 1000.0])?,
            resolution: ex.take("gamma.resolution", 16usize)?,
            dt: ex.take("gamma.dt", 0.1)?,
            t_end: ex.take("gamma.t_end", 1.0)?,
        };
        let temporal = TemporalParams {
            dt_ladder: ex
                .take_list("temporal.dt_ladder", &[0.25, 0.125, 0.0625, 0.03125, 0.015625])?,
            resolution: ex.take("temporal.resolution", 32usize)?,
            gamma: ex.take("temporal.gamma", 500.0)?,
            t_end: ex.take("temporal.t_end", 1.0)?,
        };
        let spatial = SpatialParams {
            mesh_ladder: ex.take_list("spatial.mesh_ladder", &[4usize, 8, 16, 32])?,
            steps: ex.take("spatial.steps", 8usize)?,
            gamma: ex.take("spatial.gamma", 1.0e6)?,
            t_end: ex.take("spatial.t_end", 0.001)?,
        };
        let channel = ChannelParams {
            resolution: ex.take("channel.resolution", 1usize)?,
            dt: ex.take("channel.dt", 0.05)?,
            t_end: ex.take("channel.t_end", 40.0)?,
            gamma: ex.take("channel.gamma", 1.0e5)?,
            s: ex.take("channel.s", 0.001)?,
        };
        let cavity = CavityParams {
            resolution: ex.take("cavity.resolution", 24usize)?,
            dt: ex.take("cavity.dt", 5.0)?,
            t_end: ex.take("cavity.t_end", 600.0)?,
            gamma: ex.take("cavity.gamma", 1.0e4)?,
            s_ladder: ex.take_list("cavity.s_ladder", &[0.001, 0.01, 0.1, 1.0])?,
            kl_level: ex.take("cavity.kl_level", 1usize)?,
            kl_c: ex.take("cavity.kl_c", 1.0)?,
            kl_corr_len: ex.take("cavity.kl_corr_len", 0.01)?,
            kl_q: ex.take("cavity.kl_q", 2usize)?,
            kl_nu_scale: ex.take("cavity.kl_nu_scale", 2.0 / 15000.0)?,
            kl_nu_m_scale: ex.take("cavity.kl_nu_m_scale", 0.01)?,
        };

        ex.finish()?;

        let spec = ExperimentSpec {
            kind,
            seed,
            out_dir,
            svg,
            snapshots,
            mu,
            n_sc,
            eps,
            nu_box,
            nu_m_box,
            gamma,
            temporal,
            spatial,
            channel,
            cavity,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        fn positive(key: &str, v: f64) -> Result<(), ConfigError> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::Invalid {
                    key: key.into(),
                    message: format!("must be positive and finite, got {v}"),
                })
            }
        }
        fn non_negative(key: &str, v: f64) -> Result<(), ConfigError> {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::Invalid {
                    key: key.into(),
                    message: format!("must be non-negative and finite, got {v}"),
                })
            }
        }
        fn ladder_f64(key: &str, v: &[f64], increasing: bool) -> Result<(), ConfigError> {
            if v.is_empty() {
                return Err(ConfigError::Invalid { key: key.into(), message: "is empty".into() });
            }
            for x in v {
                positive(key, *x)?;
            }
            let ordered =
                v.windows(2).all(|p| if increasing { p[0] < p[1] } else { p[0] > p[1] });
            if !ordered {
                return Err(ConfigError::Invalid {
                    key: key.into(),
                    message: format!(
                        "ladder must be strictly {}",
                        if increasing { "increasing" } else { "decreasing" }
                    ),
                });
            }
            Ok(())
        }
        fn at_least_one(key: &str, v: usize) -> Result<(), ConfigError> {
            if v >= 1 {
                Ok(())
            } else {
                Err(ConfigError::Invalid { key: key.into(), message: "must be at least 1".into() })
            }
        }
        fn sample_box(key: &str, b: (f64, f64)) -> Result<(), ConfigError> {
            if 0.0 < b.0 && b.0 < b.1 && b.1.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::Invalid {
                    key: key.into(),
                    message: format!("bounds must satisfy 0 < lo < hi, got ({}, {})", b.0, b.1),
                })
            }
        }

        non_negative("scheme.mu", self.mu)?;
        at_least_one("stochastic.n_sc", self.n_sc)?;
        non_negative("stochastic.eps", self.eps)?;
        sample_box("stochastic.nu_lo/nu_hi", self.nu_box)?;
        sample_box("stochastic.nu_m_lo/nu_m_hi", self.nu_m_box)?;

        ladder_f64("gamma.ladder", &self.gamma.ladder, true)?;
        at_least_one("gamma.resolution", self.gamma.resolution)?;
        positive("gamma.dt", self.gamma.dt)?;
        positive("gamma.t_end", self.gamma.t_end)?;

        ladder_f64("temporal.dt_ladder", &self.temporal.dt_ladder, false)?;
        at_least_one("temporal.resolution", self.temporal.resolution)?;
        non_negative("temporal.gamma", self.temporal.gamma)?;
        positive("temporal.t_end", self.temporal.t_end)?;

        if self.spatial.mesh_ladder.is_empty()
            || self.spatial.mesh_ladder.iter().any(|&r| r == 0)
            || !self.spatial.mesh_ladder.windows(2).all(|p| p[0] < p[1])
        {
            return Err(ConfigError::Invalid {
                key: "spatial.mesh_ladder".into(),
                message: "ladder must be non-empty, positive, and strictly increasing".into(),
            });
        }
        at_least_one("spatial.steps", self.spatial.steps)?;
        non_negative("spatial.gamma", self.spatial.gamma)?;
        positive("spatial.t_end", self.spatial.t_end)?;

        at_least_one("channel.resolution", self.channel.resolution)?;
        positive("channel.dt", self.channel.dt)?;
        positive("channel.t_end", self.channel.t_end)?;
        non_negative("channel.gamma", self.channel.gamma)?;
        positive("channel.s", self.channel.s)?;

        at_least_one("cavity.resolution", self.cavity.resolution)?;
        positive("cavity.dt", self.cavity.dt)?;
        positive("cavity.t_end", self.cavity.t_end)?;
        non_negative("cavity.gamma", self.cavity.gamma)?;
        ladder_f64("cavity.s_ladder", &self.cavity.s_ladder, true)?;
        positive("cavity.kl_c", self.cavity.kl_c)?;
        positive("cavity.kl_corr_len", self.cavity.kl_corr_len)?;
        at_least_one("cavity.kl_q", self.cavity.kl_q)?;
        positive("cavity.kl_nu_scale", self.cavity.kl_nu_scale)?;
        positive("cavity.kl_nu_m_scale", self.cavity.kl_nu_m_scale)?;
        Ok(())
    }

    /// Base scheme settings for this experiment's kind.  The ladder studies
    /// start from their first rung; drivers then vary the laddered value.
    pub fn scheme_config(&self) -> SchemeConfig {
        match self.kind {
            ExperimentKind::GammaStudy => SchemeConfig {
                dt: self.gamma.dt,
                t_end: self.gamma.t_end,
                gamma: self.gamma.ladder[0],
                coupled_grad_div: self.gamma.ladder[0],
                mu: self.mu,
                s: 1.0,
                element_pair: ElementPair::TaylorHood,
            },
            ExperimentKind::TemporalStudy => SchemeConfig {
                dt: self.temporal.dt_ladder[0],
                t_end: self.temporal.t_end,
                gamma: self.temporal.gamma,
                coupled_grad_div: 0.0,
                mu: self.mu,
                s: 1.0,
                element_pair: ElementPair::TaylorHood,
            },
            ExperimentKind::SpatialStudy => SchemeConfig {
                dt: self.spatial.t_end / self.spatial.steps as f64,
                t_end: self.spatial.t_end,
                gamma: self.spatial.gamma,
                coupled_grad_div: 0.0,
                mu: self.mu,
                s: 1.0,
                element_pair: ElementPair::TaylorHood,
            },
            ExperimentKind::Channel => SchemeConfig {
                dt: self.channel.dt,
                t_end: self.channel.t_end,
                gamma: self.channel.gamma,
                coupled_grad_div: 0.0,
                mu: self.mu,
                s: self.channel.s,
                element_pair: ElementPair::TaylorHood,
            },
            ExperimentKind::Cavity => SchemeConfig {
                dt: self.cavity.dt,
                t_end: self.cavity.t_end,
                gamma: self.cavity.gamma,
                coupled_grad_div: 0.0,
                mu: self.mu,
                s: self.cavity.s_ladder[0],
                element_pair: ElementPair::TaylorHood,
            },
        }
    }

    /// Fully resolved configuration text; re-parses to an equal spec (the
    /// sample box is written as explicit numbers, so no preset is needed).
    pub fn emit_effective(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# effective configuration: all values resolved; re-parses equal");
        let _ = writeln!(s, "[run]");
        let _ = writeln!(s, "kind={}", self.kind.name());
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "out={}", self.out_dir);
        let _ = writeln!(s, "svg={}", self.svg);
        let _ = writeln!(s, "snapshots={}", self.snapshots);
        let _ = writeln!(s, "\n[scheme]");
        let _ = writeln!(s, "mu={}", self.mu);
        let _ = writeln!(s, "\n[stochastic]");
        let _ = writeln!(s, "n_sc={}", self.n_sc);
        let _ = writeln!(s, "eps={}", self.eps);
        let _ = writeln!(s, "nu_lo={}", self.nu_box.0);
        let _ = writeln!(s, "nu_hi={}", self.nu_box.1);
        let _ = writeln!(s, "nu_m_lo={}", self.nu_m_box.0);
        let _ = writeln!(s, "nu_m_hi={}", self.nu_m_box.1);
        let _ = writeln!(s, "\n[gamma]");
        let _ = writeln!(s, "ladder={}", join_nums(&self.gamma.ladder));
        let _ = writeln!(s, "resolution={}", self.gamma.resolution);
        let _ = writeln!(s, "dt={}", self.gamma.dt);
        let _ = writeln!(s, "t_end={}", self.gamma.t_end);
        let _ = writeln!(s, "\n[temporal]");
        let _ = writeln!(s, "dt_ladder={}", join_nums(&self.temporal.dt_ladder));
        let _ = writeln!(s, "resolution={}", self.temporal.resolution);
        let _ = writeln!(s, "gamma={}", self.temporal.gamma);
        let _ = writeln!(s, "t_end={}", self.temporal.t_end);
        let _ = writeln!(s, "\n[spatial]");
        let _ = writeln!(
            s,
            "mesh_ladder={}",
            self.spatial
                .mesh_ladder
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(",")
        );
        let _ = writeln!(s, "steps={}", self.spatial.steps);
        let _ = writeln!(s, "gamma={}", self.spatial.gamma);
        let _ = writeln!(s, "t_end={}", self.spatial.t_end);
        let _ = writeln!(s, "\n[channel]");
        let _ = writeln!(s, "resolution={}", self.channel.resolution);
        let _ = writeln!(s, "dt={}", self.channel.dt);
        let _ = writeln!(s, "t_end={}", self.channel.t_end);
        let _ = writeln!(s, "gamma={}", self.channel.gamma);
        let _ = writeln!(s, "s={}", self.channel.s);
        let _ = writeln!(s, "\n[cavity]");
        let _ = writeln!(s, "resolution={}", self.cavity.resolution);
        let _ = writeln!(s, "dt={}", self.cavity.dt);
        let _ = writeln!(s, "t_end={}", self.cavity.t_end);
        let _ = writeln!(s, "gamma={}", self.cavity.gamma);
        let _ = writeln!(s, "s_ladder={}", join_nums(&self.cavity.s_ladder));
        let _ = writeln!(s, "kl_level={}", self.cavity.kl_level);
        let _ = writeln!(s, "kl_c={}", self.cavity.kl_c);
        let _ = writeln!(s, "kl_corr_len={}", self.cavity.kl_corr_len);
        let _ = writeln!(s, "kl_q={}", self.cavity.kl_q);
        let _ = writeln!(s, "kl_nu_scale={}", self.cavity.kl_nu_scale);
        let _ = writeln!(s, "kl_nu_m_scale={}", self.cavity.kl_nu_m_scale);
        s
    }
}

fn join_nums(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Parses configuration text into a resolved spec.
pub fn parse_config(text: &str) -> Result<ExperimentSpec, ConfigError> {
    ExperimentSpec::from_raw(RawConfig::parse(text)?)
}

/// Reads and parses a configuration file.
pub fn parse_config_file(path: &Path) -> Result<ExperimentSpec, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_reports_required_keys() {
        let err = parse_config("").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("missing required keys"), "{msg}");
        assert!(msg.contains("run.kind"), "{msg}");
    }

    #[test]
    fn unknown_key_is_rejected_with_line_number() {
        let text = "[run]\nkind=gamma_study\n[gamma]\nlader=1,10\n";
        let err = parse_config(text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("gamma.lader"), "{msg}");
        assert!(msg.contains("line 4"), "{msg}");
    }

    #[test]
    fn ladder_of_three_parses_to_three_runs() {
        let spec = parse_config("[run]\nkind=gamma_study\n[gamma]\nladder=1,10,100\n").unwrap();
        assert_eq!(spec.gamma.ladder, vec![1.0, 10.0, 100.0]);
    }

    #[test]
    fn effective_config_round_trips_to_an_equal_spec() {
        for kind in ExperimentKind::ALL {
            let spec = parse_config(&format!("[run]\nkind={}\n", kind.name())).unwrap();
            let emitted = spec.emit_effective();
            let again = parse_config(&emitted)
                .unwrap_or_else(|e| panic!("emitted config failed to parse for {kind:?}: {e}"));
            assert_eq!(spec, again, "round trip changed the spec for {kind:?}");
        }
    }

    #[test]
    fn presets_depend_on_kind_and_explicit_bounds_win() {
        let g = parse_config("[run]\nkind=gamma_study\n").unwrap();
        assert_eq!((g.nu_box, g.nu_m_box), ((0.009, 0.011), (0.0009, 0.0011)));
        let t = parse_config("[run]\nkind=temporal_study\n").unwrap();
        assert_eq!((t.nu_box, t.nu_m_box), ((0.0009, 0.0011), (0.0009, 0.0011)));
        let c = parse_config("[run]\nkind=channel\n").unwrap();
        assert_eq!((c.nu_box, c.nu_m_box), ((0.0009, 0.0011), (0.009, 0.011)));

        let named =
            parse_config("[run]\nkind=gamma_study\n[stochastic]\npreset=nu-m-high\n").unwrap();
        assert_eq!(named.nu_m_box, (0.09, 0.11));

        let over = parse_config(
            "[run]\nkind=gamma_study\n[stochastic]\npreset=nu-low\nnu_hi=0.002\n",
        )
        .unwrap();
        assert_eq!(over.nu_box, (0.0009, 0.002));
        assert_eq!(over.nu_m_box, (0.0009, 0.0011));
    }

    #[test]
    fn non_monotone_ladders_are_rejected() {
        let err = parse_config("[run]\nkind=gamma_study\n[gamma]\nladder=10,10\n").unwrap_err();
        assert!(err.to_string().contains("strictly increasing"), "{err}");
        let err =
            parse_config("[run]\nkind=temporal_study\n[temporal]\ndt_ladder=0.1,0.2\n")
                .unwrap_err();
        assert!(err.to_string().contains("strictly decreasing"), "{err}");
        let err =
            parse_config("[run]\nkind=spatial_study\n[spatial]\nmesh_ladder=8,4\n").unwrap_err();
        assert!(err.to_string().contains("strictly increasing"), "{err}");
    }

    #[test]
    fn duplicate_keys_and_bad_values_carry_line_numbers() {
        let err = RawConfig::parse("[run]\nkind=channel\nkind=cavity\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3") && msg.contains("duplicate"), "{msg}");

        let err = parse_config("[run]\nkind=channel\n[channel]\ndt=fast\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 4") && msg.contains("channel.dt"), "{msg}");
    }

    #[test]
    fn command_line_overrides_beat_file_values() {
        let mut raw = RawConfig::parse("[run]\nkind=channel\nseed=3\n").unwrap();
        raw.set("run.seed", "99").unwrap();
        raw.set("run.kind", "cavity").unwrap();
        let spec = ExperimentSpec::from_raw(raw).unwrap();
        assert_eq!(spec.seed, 99);
        assert_eq!(spec.kind, ExperimentKind::Cavity);

        let mut raw = RawConfig::default();
        assert!(raw.set("seed", "1").is_err(), "override keys need a section");
    }

    #[test]
    fn comments_sections_and_whitespace_parse() {
        let text = "\n# top comment\n[run]\n  kind = spatial_study  # trailing\n\n[spatial]\nsteps=2\n";
        let spec = parse_config(text).unwrap();
        assert_eq!(spec.kind, ExperimentKind::SpatialStudy);
        assert_eq!(spec.spatial.steps, 2);
        let err = parse_config("kind=channel\n").unwrap_err();
        assert!(err.to_string().contains("before any [section]"), "{err}");
    }

    #[test]
    fn scheme_config_matches_kind_sections() {
        let spec = parse_config("[run]\nkind=channel\n").unwrap();
        let config = spec.scheme_config();
        assert_eq!(config.dt, 0.05);
        assert_eq!(config.t_end, 40.0);
        assert_eq!(config.gamma, 1.0e5);
        assert_eq!(config.s, 0.001);
        assert_eq!(config.n_steps().unwrap(), 800);
    }
}
